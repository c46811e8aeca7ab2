use super::MstEdges;
use crate::metrics::DistanceMatrix;
use crate::unionfind::DisjointSets;

/// Dense O(N^2) Prim over an implicit complete graph on `n` vertices.
/// Returns the unsorted edge lengths in insertion order.
pub(crate) fn prim_lengths<F>(n: usize, dist: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64,
{
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut lengths = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_len = f64::INFINITY;
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let d = dist(current, v);
            if d < best[v] {
                best[v] = d;
            }
            if best[v] < next_len || next == usize::MAX {
                next_len = best[v];
                next = v;
            }
        }
        in_tree[next] = true;
        lengths.push(next_len);
        current = next;
    }
    lengths
}

/// MST edge lengths of the complete graph weighted by `d` (dense Prim).
pub fn minimum_spanning_edges(d: &DistanceMatrix) -> MstEdges {
    prim_edges(d)
}

pub fn prim_edges(d: &DistanceMatrix) -> MstEdges {
    MstEdges::from_lengths(prim_lengths(d.len(), |i, j| d.row(i)[j]))
}

/// MST edge lengths restricted to the points `subset` of `d`.
pub fn minimum_spanning_edges_of(d: &DistanceMatrix, subset: &[usize]) -> MstEdges {
    MstEdges::from_lengths(prim_lengths(subset.len(), |i, j| {
        d.get(subset[i], subset[j])
    }))
}

/// Kruskal over the materialized edge list, sorted stably by
/// (length, smaller index, larger index).
pub fn kruskal_edges(d: &DistanceMatrix) -> MstEdges {
    let n = d.len();
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push((d.get(i, j), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut sets = DisjointSets::new(n);
    let mut lengths = Vec::with_capacity(n.saturating_sub(1));
    for (len, i, j) in edges {
        if sets.union(i, j) {
            lengths.push(len);
            if lengths.len() + 1 == n {
                break;
            }
        }
    }
    MstEdges::from_lengths(lengths)
}

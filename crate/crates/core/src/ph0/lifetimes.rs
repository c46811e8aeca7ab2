use super::MstEdges;
use crate::metrics::DistanceMatrix;

/// PH⁰ lifetimes of the Vietoris-Rips filtration, by tracking connected
/// components.
///
/// Every point is born at filtration value 0. Clusters are merged in order
/// of single-linkage distance (Lance-Williams `min` update); each merge
/// kills one component, whose lifetime is the merge height. The essential
/// class (infinite lifetime) is not reported.
pub fn ph0_lifetimes(d: &DistanceMatrix) -> MstEdges {
    let n = d.len();
    if n < 2 {
        return MstEdges::from_lengths(Vec::new());
    }
    let mut link: Vec<f64> = d.entries().to_vec();
    let mut alive = vec![true; n];
    // nearest live neighbour of every live cluster
    let mut nn = vec![0usize; n];
    let mut nn_dist = vec![f64::INFINITY; n];
    let refresh =
        |a: usize, link: &[f64], alive: &[bool], nn: &mut [usize], nn_dist: &mut [f64]| {
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for b in 0..n {
                if b != a && alive[b] && (link[a * n + b] < best || arg == usize::MAX) {
                    best = link[a * n + b];
                    arg = b;
                }
            }
            nn[a] = arg;
            nn_dist[a] = best;
        };
    for a in 0..n {
        refresh(a, &link, &alive, &mut nn, &mut nn_dist);
    }

    let mut deaths = Vec::with_capacity(n - 1);
    for remaining in (2..=n).rev() {
        let a = (0..n)
            .filter(|&a| alive[a])
            .min_by(|&x, &y| nn_dist[x].total_cmp(&nn_dist[y]).then(x.cmp(&y)))
            .expect("at least two live clusters");
        let b = nn[a];
        let height = nn_dist[a];
        deaths.push(height);

        // b dies into a
        alive[b] = false;
        for k in 0..n {
            if alive[k] && k != a {
                let merged = link[a * n + k].min(link[b * n + k]);
                link[a * n + k] = merged;
                link[k * n + a] = merged;
            }
        }
        if remaining == 2 {
            break;
        }
        for k in 0..n {
            if !alive[k] {
                continue;
            }
            if k == a || nn[k] == a || nn[k] == b {
                refresh(k, &link, &alive, &mut nn, &mut nn_dist);
            } else if link[k * n + a] < nn_dist[k] {
                nn[k] = a;
                nn_dist[k] = link[k * n + a];
            }
        }
    }
    MstEdges::from_lengths(deaths)
}

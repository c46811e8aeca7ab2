//! Degree-zero persistence of Vietoris-Rips filtrations.
//!
//! The multiset of PH⁰ lifetimes of a finite (pseudo)metric space equals the
//! multiset of edge lengths of any minimum spanning tree of its complete
//! distance graph, so lifetime sums `E_alpha = sum |e|^alpha` are computed
//! from an MST. Three independent routes produce the same multiset:
//! dense Prim (default), Kruskal (verification), and single-linkage merge
//! tracking (the persistence view).

mod dim;
mod lifetimes;
mod mst;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};
use crate::metrics::DistanceMatrix;
use crate::IDENTIFICATION_TOL;

pub use dim::{estimate_ph_dim, estimate_ph_dim_flagged, DimProtocol, PhDimEstimate};
pub use lifetimes::ph0_lifetimes;
pub use mst::{kruskal_edges, minimum_spanning_edges, minimum_spanning_edges_of, prim_edges};

/// Sorted (ascending) MST edge lengths, one per merge of two components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstEdges {
    lengths: Vec<f64>,
}

impl MstEdges {
    pub fn from_lengths(mut lengths: Vec<f64>) -> Self {
        lengths.sort_by(f64::total_cmp);
        MstEdges { lengths }
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// Edges of the metric identification: edges of length `<= tol` join
    /// points of the same class and are dropped.
    pub fn quotient(&self, tol: f64) -> MstEdges {
        MstEdges {
            lengths: self.lengths.iter().copied().filter(|&l| l > tol).collect(),
        }
    }

    pub fn longest(&self) -> Option<f64> {
        self.lengths.last().copied()
    }
}

/// `E_alpha = sum over MST edges of |e|^alpha`, computed on the metric
/// identification so that zero-length edges never contribute (this also
/// fixes `0^0`).
pub fn e_alpha(edges: &MstEdges, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(TopoError::NegativeAlpha(alpha));
    }
    Ok(edges
        .lengths
        .iter()
        .filter(|&&l| l > IDENTIFICATION_TOL)
        .map(|&l| if alpha == 1.0 { l } else { l.powf(alpha) })
        .sum())
}

/// Convenience: `E_alpha` of a distance matrix.
pub fn e_alpha_of(d: &DistanceMatrix, alpha: f64) -> Result<f64> {
    e_alpha(&minimum_spanning_edges(d), alpha)
}

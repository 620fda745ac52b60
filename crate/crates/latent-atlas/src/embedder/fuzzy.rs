//! Smooth-kNN bandwidth calibration and fuzzy graph symmetrization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::NeighborGraph;

pub const SIGMA_MIN: f64 = 1e-8;
pub const SIGMA_MAX: f64 = 1e8;
pub const CALIBRATION_TOL: f64 = 1e-5;
pub const CALIBRATION_MAX_ITER: usize = 64;

/// Per-point calibration: ρ is the distance to the nearest neighbor; σ is
/// the bandwidth solving `Σ_j exp(-max(0, d_j - ρ)/σ) = log2(k)` by
/// bisection, clamped to `[SIGMA_MIN, SIGMA_MAX]` when no solution exists
/// (all-tied distances, say).
pub fn smooth_knn_calibrate(
    distances: &[f64],
    k: usize,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    debug_assert!(k >= 2 && distances.len() == k);
    debug_assert!(distances.windows(2).all(|w| w[0] <= w[1]), "distances sorted");
    let rho = distances[0];
    let target = (k as f64).log2();
    let sum_at = |sigma: f64| -> f64 {
        distances.iter().map(|&d| (-((d - rho).max(0.0)) / sigma).exp()).sum()
    };

    // The sum is non-decreasing in σ. Grow the bracket upward first.
    let mut lo = 0.0;
    let mut hi = 1.0;
    while sum_at(hi) < target && hi < SIGMA_MAX {
        hi *= 2.0;
    }
    let mut sigma = hi.min(SIGMA_MAX);
    for _ in 0..max_iter {
        let mid = (lo + hi) / 2.0;
        let s = sum_at(mid);
        if (s - target).abs() <= tol {
            sigma = mid;
            break;
        }
        if s > target {
            hi = mid;
        } else {
            lo = mid;
        }
        sigma = mid;
    }
    (rho, sigma.clamp(SIGMA_MIN, SIGMA_MAX))
}

/// Symmetric fuzzy graph: union-combined weights plus the calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyGraph {
    pub n_obs: usize,
    /// Undirected edges (i < j, weight), sorted by (i, j); weights in (0, 1].
    pub edges: Vec<(u32, u32, f64)>,
    pub rhos: Vec<f64>,
    pub sigmas: Vec<f64>,
}

/// Probabilistic t-conorm: `w_ij + w_ji - w_ij * w_ji`.
pub fn fuzzy_union_weight(w_ij: f64, w_ji: f64) -> f64 {
    w_ij + w_ji - w_ij * w_ji
}

/// Calibrate every observation and symmetrize the directed weights
/// `w_ij = exp(-max(0, d_ij - ρ_i)/σ_i)` into an undirected fuzzy graph.
pub fn fuzzy_graph(graph: &NeighborGraph) -> FuzzyGraph {
    let n = graph.n_obs();
    let k = graph.k;
    let calibrations: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            smooth_knn_calibrate(graph.neighbors(i).1, k, CALIBRATION_TOL, CALIBRATION_MAX_ITER)
        })
        .collect();
    let rhos: Vec<f64> = calibrations.iter().map(|c| c.0).collect();
    let sigmas: Vec<f64> = calibrations.iter().map(|c| c.1).collect();

    // Directed weights, keyed by the undirected pair.
    let mut directed: std::collections::HashMap<(u32, u32), (f64, f64)> =
        std::collections::HashMap::with_capacity(n * k);
    for i in 0..n {
        let (idx, dist) = graph.neighbors(i);
        for (&j, &d) in idx.iter().zip(dist) {
            let w = (-((d - rhos[i]).max(0.0)) / sigmas[i]).exp();
            let key = ((i as u32).min(j), (i as u32).max(j));
            let slot = directed.entry(key).or_insert((0.0, 0.0));
            if (i as u32) < j {
                slot.0 = w;
            } else {
                slot.1 = w;
            }
        }
    }
    let mut edges: Vec<(u32, u32, f64)> = directed
        .into_iter()
        .map(|((i, j), (wij, wji))| (i, j, fuzzy_union_weight(wij, wji)))
        .collect();
    edges.sort_by_key(|&(i, j, _)| (i, j));
    FuzzyGraph { n_obs: n, edges, rhos, sigmas }
}

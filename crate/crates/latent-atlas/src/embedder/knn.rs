//! Exact brute-force Euclidean k-nearest-neighbor search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// k nearest neighbors per observation, distances sorted ascending,
/// distance ties broken by lower observation index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub k: usize,
    /// Flattened `n_obs x k` neighbor indices.
    pub indices: Vec<u32>,
    /// Flattened `n_obs x k` Euclidean distances.
    pub distances: Vec<f64>,
}

impl NeighborGraph {
    pub fn n_obs(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn neighbors(&self, i: usize) -> (&[u32], &[f64]) {
        let s = i * self.k;
        (&self.indices[s..s + self.k], &self.distances[s..s + self.k])
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The k nearest rows of `x` (excluding `skip`, used for self) to `point`,
/// as (index, distance) sorted by (distance, index).
pub fn k_nearest(
    x: &[f64],
    d: usize,
    n_obs: usize,
    point: &[f64],
    k: usize,
    skip: Option<usize>,
) -> Vec<(u32, f64)> {
    let mut all: Vec<(u32, f64)> = (0..n_obs)
        .filter(|&j| Some(j) != skip)
        .map(|j| (j as u32, euclidean(point, &x[j * d..(j + 1) * d])))
        .collect();
    // Ties break toward the lower index; index order is total, so the
    // selection is fully deterministic.
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances").then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Exact kNN graph over the rows of `x` (`n_obs x d`, row-major).
/// Per-observation searches run in parallel; output order is fixed.
pub fn knn_graph(x: &[f64], d: usize, n_obs: usize, k: usize) -> Result<NeighborGraph> {
    if n_obs < 2 {
        return Err(Error::Invalid(format!("kNN needs at least 2 observations, got {n_obs}")));
    }
    if k == 0 || k >= n_obs {
        return Err(Error::Invalid(format!(
            "k must lie in [1, n_obs), got k={k} with n_obs={n_obs}"
        )));
    }
    let rows: Vec<Vec<(u32, f64)>> = (0..n_obs)
        .into_par_iter()
        .map(|i| k_nearest(x, d, n_obs, &x[i * d..(i + 1) * d], k, Some(i)))
        .collect();
    let mut indices = Vec::with_capacity(n_obs * k);
    let mut distances = Vec::with_capacity(n_obs * k);
    for row in rows {
        for (j, dist) in row {
            indices.push(j);
            distances.push(dist);
        }
    }
    Ok(NeighborGraph { k, indices, distances })
}

//! Stochastic-gradient layout of the fuzzy graph in the embedding space.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::fuzzy::FuzzyGraph;

/// Per-component gradient clip.
const CLIP: f64 = 4.0;

/// Attractive force coefficient: gradient of `log φ` at squared distance
/// `d2` for curve parameters (a, b).
fn attractive_coeff(d2: f64, a: f64, b: f64) -> f64 {
    if d2 <= 0.0 {
        return 0.0;
    }
    -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b))
}

/// Repulsive force coefficient at squared distance `d2`.
fn repulsive_coeff(d2: f64, a: f64, b: f64) -> f64 {
    2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)))
}

fn clip(v: f64) -> f64 {
    v.clamp(-CLIP, CLIP)
}

/// Edge-sampled SGD over the fuzzy graph. Edges fire with frequency
/// proportional to weight (epochs-per-sample scheduling); each attractive
/// event moves both endpoints and triggers `negative_sample_rate` uniform
/// repulsive draws that move only the head. The learning rate decays
/// linearly to zero. Sequential by design: the single RNG stream makes the
/// result a pure function of (graph, init, seed).
#[allow(clippy::too_many_arguments)]
pub fn layout_sgd(
    graph: &FuzzyGraph,
    init: &[f64],
    dim: usize,
    a: f64,
    b: f64,
    epochs: usize,
    learning_rate: f64,
    negative_sample_rate: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = graph.n_obs;
    debug_assert_eq!(init.len(), n * dim);
    let mut coords = init.to_vec();
    if epochs == 0 || graph.edges.is_empty() {
        return coords;
    }

    let w_max = graph.edges.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
    let epochs_per_sample: Vec<f64> = graph.edges.iter().map(|e| w_max / e.2).collect();
    let mut next_sample: Vec<f64> = epochs_per_sample.clone();

    for epoch in 0..epochs {
        let alpha = learning_rate * (1.0 - epoch as f64 / epochs as f64);
        for (e, &(i, j, _)) in graph.edges.iter().enumerate() {
            if next_sample[e] > (epoch + 1) as f64 {
                continue;
            }
            next_sample[e] += epochs_per_sample[e];
            let (i, j) = (i as usize, j as usize);

            // Attractive update along the edge; both endpoints move.
            let d2: f64 = (0..dim)
                .map(|c| {
                    let diff = coords[i * dim + c] - coords[j * dim + c];
                    diff * diff
                })
                .sum();
            let coeff = attractive_coeff(d2, a, b);
            for c in 0..dim {
                let grad = clip(coeff * (coords[i * dim + c] - coords[j * dim + c])) * alpha;
                coords[i * dim + c] += grad;
                coords[j * dim + c] -= grad;
            }

            // Repulsive updates against uniform draws; only the head moves.
            for _ in 0..negative_sample_rate {
                let k = rng.random_range(0..n);
                if k == i {
                    continue;
                }
                let d2: f64 = (0..dim)
                    .map(|c| {
                        let diff = coords[i * dim + c] - coords[k * dim + c];
                        diff * diff
                    })
                    .sum();
                if d2 > 0.0 {
                    let coeff = repulsive_coeff(d2, a, b);
                    for c in 0..dim {
                        let grad =
                            clip(coeff * (coords[i * dim + c] - coords[k * dim + c])) * alpha;
                        coords[i * dim + c] += grad;
                    }
                } else {
                    // Coincident points: push the head a full clip step.
                    for c in 0..dim {
                        coords[i * dim + c] += CLIP * alpha;
                    }
                }
            }
        }
    }
    coords
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::fuzzy::fuzzy_graph;
    use crate::embedder::knn::knn_graph;

    fn rng() -> ChaCha8Rng {
        crate::seed::stream(8, "layout-test", &[])
    }

    #[test]
    fn zero_epochs_returns_init() {
        let graph = FuzzyGraph {
            n_obs: 2,
            edges: vec![(0, 1, 1.0)],
            rhos: vec![0.0; 2],
            sigmas: vec![1.0; 2],
        };
        let init = [1.0, 2.0, 3.0, 4.0];
        let out = layout_sgd(&graph, &init, 2, 1.577, 0.895, 0, 1.0, 5, &mut rng());
        assert_eq!(out, init);
    }

    #[test]
    fn single_point_stays_put() {
        let graph =
            FuzzyGraph { n_obs: 1, edges: vec![], rhos: vec![0.0], sigmas: vec![1.0] };
        let init = [5.0, -3.0];
        let out = layout_sgd(&graph, &init, 2, 1.577, 0.895, 100, 1.0, 5, &mut rng());
        assert_eq!(out, init);
    }

    #[test]
    fn layout_is_deterministic() {
        let mut data_rng = crate::seed::stream(10, "layout-data", &[]);
        use rand::Rng;
        let n = 30;
        let x: Vec<f64> = (0..n * 3).map(|_| data_rng.random::<f64>()).collect();
        let graph = fuzzy_graph(&knn_graph(&x, 3, n, 5).unwrap());
        let init: Vec<f64> = (0..n * 2).map(|_| data_rng.random::<f64>() * 20.0 - 10.0).collect();
        let o1 = layout_sgd(&graph, &init, 2, 1.577, 0.895, 50, 1.0, 5, &mut rng());
        let o2 = layout_sgd(&graph, &init, 2, 1.577, 0.895, 50, 1.0, 5, &mut rng());
        assert_eq!(o1, o2);
    }

    #[test]
    fn outputs_stay_finite_under_stress() {
        // Many coincident points and heavy weights stress the clipping.
        let n = 20;
        let x: Vec<f64> = (0..n).map(|i| f64::from(i % 2 == 0)).flat_map(|v| [v, v]).collect();
        let graph = fuzzy_graph(&knn_graph(&x, 2, n, 5).unwrap());
        let init = vec![0.0; n * 2]; // everyone starts at the origin
        let out = layout_sgd(&graph, &init, 2, 1.577, 0.895, 200, 1.0, 5, &mut rng());
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cliques_separate() {
        // Two 20-node cliques with no cross edges: the embedded gap must
        // dwarf the intra-clique spread.
        let n = 40;
        let mut edges = Vec::new();
        for g in 0..2u32 {
            let base = g * 20;
            for i in 0..20u32 {
                for j in (i + 1)..20 {
                    edges.push((base + i, base + j, 1.0));
                }
            }
        }
        let graph = FuzzyGraph { n_obs: n, edges, rhos: vec![0.0; n], sigmas: vec![1.0; n] };
        let mut init_rng = crate::seed::stream(12, "clique-init", &[]);
        use rand::Rng;
        let init: Vec<f64> = (0..n * 2).map(|_| init_rng.random::<f64>() * 20.0 - 10.0).collect();
        let out = layout_sgd(&graph, &init, 2, 1.577, 0.895, 500, 1.0, 5, &mut rng());

        let centroid = |g: usize| -> (f64, f64) {
            let mut cx = 0.0;
            let mut cy = 0.0;
            for i in 0..20 {
                cx += out[(g * 20 + i) * 2];
                cy += out[(g * 20 + i) * 2 + 1];
            }
            (cx / 20.0, cy / 20.0)
        };
        let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();

        let mut intra = 0.0;
        let mut pairs = 0.0;
        for g in 0..2 {
            for i in 0..20 {
                for j in (i + 1)..20 {
                    let p = (out[(g * 20 + i) * 2], out[(g * 20 + i) * 2 + 1]);
                    let q = (out[(g * 20 + j) * 2], out[(g * 20 + j) * 2 + 1]);
                    intra += dist(p, q);
                    pairs += 1.0;
                }
            }
        }
        intra /= pairs;
        let mut inter = 0.0;
        for i in 0..20 {
            for j in 0..20 {
                let p = (out[i * 2], out[i * 2 + 1]);
                let q = (out[(20 + j) * 2], out[(20 + j) * 2 + 1]);
                inter += dist(p, q);
            }
        }
        inter /= 400.0;
        assert!(
            inter > 2.0 * intra,
            "inter-clique {inter:.3} must exceed 2x intra-clique {intra:.3}"
        );
        // A gap between centroids, too.
        assert!(dist(centroid(0), centroid(1)) > intra);
    }

    #[test]
    fn coefficients_have_the_right_signs() {
        let (a, b) = (1.577, 0.895);
        assert!(attractive_coeff(1.0, a, b) < 0.0);
        assert!(repulsive_coeff(1.0, a, b) > 0.0);
        assert_eq!(attractive_coeff(0.0, a, b), 0.0);
    }
}

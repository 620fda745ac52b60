//! CART decision trees: Gini for classification, variance reduction for
//! regression, feature subsampling per split.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Flat tree node; children are indices into the node arena.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { dim: usize, threshold: f64, left: usize, right: usize },
    /// Class-count vector for classification, `[mean]` for regression.
    Leaf { value: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub mtry: usize,
}

/// Training view of the target.
pub enum TrainTarget<'a> {
    /// Class index per observation plus the global class count.
    Classification { y: &'a [usize], n_classes: usize },
    Regression { y: &'a [f64] },
}

impl DecisionTree {
    /// Grow a tree on the given (possibly repeating) sample of rows from
    /// the row-major `x` with `d` features. Deterministic given the RNG.
    pub fn grow(
        x: &[f64],
        d: usize,
        target: &TrainTarget,
        sample: &[usize],
        params: &TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> DecisionTree {
        let mut tree = DecisionTree { nodes: Vec::new() };
        let mut sample = sample.to_vec();
        tree.grow_node(x, d, target, &mut sample, params, rng, 0);
        tree
    }

    /// Recursively grow the subtree over `sample`, returning its root index.
    #[allow(clippy::too_many_arguments)]
    fn grow_node(
        &mut self,
        x: &[f64],
        d: usize,
        target: &TrainTarget,
        sample: &mut [usize],
        params: &TreeParams,
        rng: &mut ChaCha8Rng,
        depth: usize,
    ) -> usize {
        let depth_ok = params.max_depth.is_none_or(|m| depth < m);
        let split = if depth_ok && sample.len() >= 2 * params.min_samples_leaf {
            best_split(x, d, target, sample, params, rng)
        } else {
            None
        };
        match split {
            Some((dim, threshold)) => {
                // Partition the sample in place: left = value <= threshold.
                let mut mid = 0;
                for i in 0..sample.len() {
                    if x[sample[i] * d + dim] <= threshold {
                        sample.swap(i, mid);
                        mid += 1;
                    }
                }
                let idx = self.nodes.len();
                self.nodes.push(Node::Split { dim, threshold, left: 0, right: 0 });
                let (ls, rs) = sample.split_at_mut(mid);
                let left = self.grow_node(x, d, target, ls, params, rng, depth + 1);
                let right = self.grow_node(x, d, target, rs, params, rng, depth + 1);
                let Node::Split { left: l, right: r, .. } = &mut self.nodes[idx] else {
                    unreachable!()
                };
                (*l, *r) = (left, right);
                idx
            }
            None => {
                let value = match target {
                    TrainTarget::Classification { y, n_classes } => {
                        let mut counts = vec![0.0; *n_classes];
                        for &i in sample.iter() {
                            counts[y[i]] += 1.0;
                        }
                        counts
                    }
                    TrainTarget::Regression { y } => {
                        vec![super::anchored_mean(sample.iter().map(|&i| y[i]))]
                    }
                };
                self.nodes.push(Node::Leaf { value });
                self.nodes.len() - 1
            }
        }
    }

    /// Leaf value for one point (row of `d` features).
    pub fn leaf_value(&self, point: &[f64]) -> &[f64] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Split { dim, threshold, left, right } => {
                    idx = if point[*dim] <= *threshold { *left } else { *right };
                }
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Gini impurity of class counts.
fn gini(counts: &[f64], total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|&c| (c / total) * (c / total)).sum::<f64>()
}

/// Pick the best (dim, threshold) over an mtry-subsample of dimensions.
/// Returns `None` when no split improves impurity while respecting
/// `min_samples_leaf` on both sides.
fn best_split(
    x: &[f64],
    d: usize,
    target: &TrainTarget,
    sample: &[usize],
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64)> {
    let dims = rand::seq::index::sample(rng, d, params.mtry.min(d)).into_vec();
    let n = sample.len();
    let mut best: Option<(f64, usize, f64)> = None; // (score, dim, threshold)

    let mut order: Vec<usize> = Vec::with_capacity(n);
    for &dim in &dims {
        order.clear();
        order.extend_from_slice(sample);
        order.sort_by(|&a, &b| {
            x[a * d + dim].partial_cmp(&x[b * d + dim]).expect("finite features")
        });

        match target {
            TrainTarget::Classification { y, n_classes } => {
                let mut total = vec![0.0; *n_classes];
                for &i in &order {
                    total[y[i]] += 1.0;
                }
                let parent = gini(&total, n as f64);
                let mut left = vec![0.0; *n_classes];
                for (pos, &i) in order.iter().enumerate().take(n - 1) {
                    left[y[i]] += 1.0;
                    let nl = (pos + 1) as f64;
                    let nr = (n - pos - 1) as f64;
                    let (lo, hi) = (x[i * d + dim], x[order[pos + 1] * d + dim]);
                    if lo == hi
                        || (pos + 1) < params.min_samples_leaf
                        || (n - pos - 1) < params.min_samples_leaf
                    {
                        continue;
                    }
                    let right: Vec<f64> =
                        total.iter().zip(&left).map(|(&t, &l)| t - l).collect();
                    let child =
                        (nl * gini(&left, nl) + nr * gini(&right, nr)) / n as f64;
                    let score = parent - child;
                    if score > 0.0 && best.is_none_or(|(s, _, _)| score > s) {
                        best = Some((score, dim, (lo + hi) / 2.0));
                    }
                }
            }
            TrainTarget::Regression { y } => {
                let total_sum: f64 = order.iter().map(|&i| y[i]).sum();
                let total_sq: f64 = order.iter().map(|&i| y[i] * y[i]).sum();
                let parent_sse = total_sq - total_sum * total_sum / n as f64;
                let mut left_sum = 0.0;
                let mut left_sq = 0.0;
                for (pos, &i) in order.iter().enumerate().take(n - 1) {
                    left_sum += y[i];
                    left_sq += y[i] * y[i];
                    let nl = (pos + 1) as f64;
                    let nr = (n - pos - 1) as f64;
                    let (lo, hi) = (x[i * d + dim], x[order[pos + 1] * d + dim]);
                    if lo == hi
                        || (pos + 1) < params.min_samples_leaf
                        || (n - pos - 1) < params.min_samples_leaf
                    {
                        continue;
                    }
                    let sse_l = left_sq - left_sum * left_sum / nl;
                    let right_sum = total_sum - left_sum;
                    let sse_r = (total_sq - left_sq) - right_sum * right_sum / nr;
                    let score = parent_sse - (sse_l + sse_r);
                    if score > 1e-12 && best.is_none_or(|(s, _, _)| score > s) {
                        best = Some((score, dim, (lo + hi) / 2.0));
                    }
                }
            }
        }
    }
    best.map(|(_, dim, threshold)| (dim, threshold))
}

//! Random-forest prediction from embedding coordinates, with model
//! selection over 100 permutations of a 5-fold cross-validation and a
//! persisted, reloadable fold-model ensemble.

mod tree;

pub use tree::{DecisionTree, Node};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;
use tree::{TrainTarget, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification,
    Regression,
}

/// Forest hyperparameters. `mtry: None` applies the task rule
/// (`max(1, floor(sqrt(d)))` for classification, `max(1, floor(d/3))` for
/// regression).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: Option<usize>,
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, max_depth: None, min_samples_leaf: None, mtry: None }
    }
}

impl ForestParams {
    fn tree_params(&self, task: Task, d: usize) -> TreeParams {
        let mtry = self.mtry.unwrap_or(match task {
            Task::Classification => ((d as f64).sqrt().floor() as usize).max(1),
            Task::Regression => (d / 3).max(1),
        });
        let min_samples_leaf = self.min_samples_leaf.unwrap_or(match task {
            Task::Classification => 1,
            Task::Regression => 5,
        });
        TreeParams { max_depth: self.max_depth, min_samples_leaf, mtry }
    }
}

/// A trained random forest: trees plus the class vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub task: Task,
    pub n_features: usize,
    /// Sorted distinct class values (classification); empty for regression.
    pub classes: Vec<f64>,
    pub trees: Vec<DecisionTree>,
    /// Set when a regression target was constant: every prediction is that
    /// constant.
    pub constant_target: bool,
}

/// Map raw class values to indices in the (sorted, distinct) vocabulary.
fn class_indices(y: &[f64], classes: &[f64]) -> Result<Vec<usize>> {
    y.iter()
        .map(|v| {
            classes
                .binary_search_by(|c| c.partial_cmp(v).unwrap())
                .map_err(|_| Error::Invalid(format!("target value {v} not in the class set")))
        })
        .collect()
}

fn distinct_classes(y: &[f64]) -> Vec<f64> {
    let mut classes = y.to_vec();
    classes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    classes.dedup();
    classes
}

/// Fit one forest. `classes` fixes the class vocabulary for classification
/// (pass the global set when fitting fold models); `None` derives it from
/// `y`. Per-tree seeds derive from `(seed, tree index)`, so tree training
/// parallelizes without losing determinism.
pub fn fit_forest(
    x: &[f64],
    d: usize,
    y: &[f64],
    task: Task,
    params: &ForestParams,
    classes: Option<&[f64]>,
    master_seed: u64,
) -> Result<ForestModel> {
    let n = y.len();
    if x.len() != n * d {
        return Err(Error::Invalid(format!(
            "feature buffer holds {} cells, expected {n} x {d}",
            x.len()
        )));
    }
    if n < 10 {
        return Err(Error::Invalid(format!("forest training needs at least 10 rows, got {n}")));
    }
    if params.n_trees == 0 {
        return Err(Error::Invalid("n_trees must be at least 1".into()));
    }
    let tree_params = params.tree_params(task, d);

    let (classes, y_idx, constant_target) = match task {
        Task::Classification => {
            let classes = match classes {
                Some(c) => c.to_vec(),
                None => distinct_classes(y),
            };
            let observed = distinct_classes(y);
            if observed.len() < 2 {
                return Err(Error::Invalid(
                    "classification needs at least 2 classes in the training data".into(),
                ));
            }
            let idx = class_indices(y, &classes)?;
            (classes, idx, false)
        }
        Task::Regression => {
            let constant = y.iter().all(|&v| v == y[0]);
            (Vec::new(), Vec::new(), constant)
        }
    };

    let trees: Vec<DecisionTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::stream(master_seed, "tree", &[t as u64]);
            use rand::Rng;
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let target = match task {
                Task::Classification => {
                    TrainTarget::Classification { y: &y_idx, n_classes: classes.len() }
                }
                Task::Regression => TrainTarget::Regression { y },
            };
            DecisionTree::grow(x, d, &target, &sample, &tree_params, &mut rng)
        })
        .collect();

    Ok(ForestModel { task, n_features: d, classes, trees, constant_target })
}

impl ForestModel {
    /// Class-vote proportions for one point (classification only).
    pub fn class_probabilities(&self, point: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.classes.len()];
        for tree in &self.trees {
            let counts = tree.leaf_value(point);
            votes[argmax(counts)] += 1.0;
        }
        let n = self.trees.len() as f64;
        votes.iter_mut().for_each(|v| *v /= n);
        votes
    }

    /// Mean of tree predictions for one point (regression only).
    pub fn regress(&self, point: &[f64]) -> f64 {
        anchored_mean(self.trees.iter().map(|t| t.leaf_value(point)[0]))
    }
}

/// Mean anchored at the first element: `v0 + Σ(v − v0)/n`. Exact when the
/// inputs are all equal, so a constant target round-trips through the
/// forest unchanged.
pub(crate) fn anchored_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut first = 0.0;
    let mut diff_sum = 0.0;
    let mut n = 0usize;
    for v in values {
        if n == 0 {
            first = v;
        }
        diff_sum += v - first;
        n += 1;
    }
    debug_assert!(n > 0, "anchored_mean of an empty sequence");
    first + diff_sum / n as f64
}

/// Index of the largest value; ties go to the lower index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The winning 5 fold models plus the full selection record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEnsemble {
    pub task: Task,
    pub n_features: usize,
    pub classes: Vec<f64>,
    pub master_seed: u64,
    pub n_perms: usize,
    pub k: usize,
    pub fold_models: Vec<ForestModel>,
    pub winning_perm: usize,
    /// Global (mean-over-folds) validation score per permutation; `None`
    /// marks a permutation where a fold failed to train or its metric was
    /// undefined — recorded as worst-possible.
    pub perm_scores: Vec<Option<f64>>,
    /// Per-fold validation metrics of the winning permutation.
    pub winner_fold_metrics: Vec<Option<f64>>,
    /// Winning permutation's validation-fold indices (into the training
    /// set). Disjoint and exhaustive by construction.
    pub winner_folds: Vec<Vec<usize>>,
}

/// Contiguous k-fold boundaries over n shuffled indices: the first
/// `n mod k` folds take one extra element.
fn fold_ranges(n: usize, k: usize) -> Vec<(usize, usize)> {
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

/// One permutation's outcome: global score, fold metrics, fold index sets.
struct PermOutcome {
    score: Option<f64>,
    fold_metrics: Vec<Option<f64>>,
    folds: Vec<Vec<usize>>,
}

#[allow(clippy::too_many_arguments)]
fn run_permutation(
    x: &[f64],
    d: usize,
    y: &[f64],
    task: Task,
    params: &ForestParams,
    classes: &[f64],
    master_seed: u64,
    perm: usize,
    k: usize,
) -> PermOutcome {
    use rand::seq::SliceRandom;
    let n = y.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = seed::stream(master_seed, "cv-shuffle", &[perm as u64]);
    indices.shuffle(&mut rng);

    let mut fold_metrics = Vec::with_capacity(k);
    let mut folds = Vec::with_capacity(k);
    for (fold, &(start, end)) in fold_ranges(n, k).iter().enumerate() {
        let val_idx: Vec<usize> = indices[start..end].to_vec();
        let train_idx: Vec<usize> =
            indices[..start].iter().chain(&indices[end..]).copied().collect();
        let metric = fold_metric(
            x, d, y, task, params, classes, master_seed, perm, fold, &train_idx, &val_idx,
        );
        fold_metrics.push(metric);
        folds.push(val_idx);
    }
    let score = if fold_metrics.iter().all(Option::is_some) {
        Some(fold_metrics.iter().map(|m| m.unwrap()).sum::<f64>() / k as f64)
    } else {
        None
    };
    PermOutcome { score, fold_metrics, folds }
}

#[allow(clippy::too_many_arguments)]
fn fold_metric(
    x: &[f64],
    d: usize,
    y: &[f64],
    task: Task,
    params: &ForestParams,
    classes: &[f64],
    master_seed: u64,
    perm: usize,
    fold: usize,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Option<f64> {
    let model = train_fold_model(
        x, d, y, task, params, classes, master_seed, perm, fold, train_idx,
    )
    .ok()?;
    let x_val: Vec<f64> =
        val_idx.iter().flat_map(|&i| x[i * d..(i + 1) * d].iter().copied()).collect();
    let y_val: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();
    match task {
        Task::Classification => {
            let correct = val_idx
                .iter()
                .enumerate()
                .filter(|&(row, _)| {
                    let probs = model.class_probabilities(&x_val[row * d..(row + 1) * d]);
                    model.classes[argmax(&probs)] == y_val[row]
                })
                .count();
            Some(correct as f64 / val_idx.len() as f64)
        }
        Task::Regression => {
            let preds: Vec<f64> =
                (0..val_idx.len()).map(|row| model.regress(&x_val[row * d..(row + 1) * d])).collect();
            pearson(&preds, &y_val)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn train_fold_model(
    x: &[f64],
    d: usize,
    y: &[f64],
    task: Task,
    params: &ForestParams,
    classes: &[f64],
    master_seed: u64,
    perm: usize,
    fold: usize,
    train_idx: &[usize],
) -> Result<ForestModel> {
    let x_train: Vec<f64> =
        train_idx.iter().flat_map(|&i| x[i * d..(i + 1) * d].iter().copied()).collect();
    let y_train: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
    let fold_seed = fold_model_seed(master_seed, perm, fold);
    let classes_opt = (task == Task::Classification).then_some(classes);
    fit_forest(&x_train, d, &y_train, task, params, classes_opt, fold_seed)
}

/// Deterministic sub-seed for one fold model of one permutation.
fn fold_model_seed(master_seed: u64, perm: usize, fold: usize) -> u64 {
    use rand::Rng;
    seed::stream(master_seed, "forest", &[perm as u64, fold as u64]).random()
}

/// Pearson r, `None` when either side is constant (undefined metric).
fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Model selection: `n_perms` seeded shuffles into `k` contiguous folds,
/// a forest per fold trained on the complement, global score = mean fold
/// metric; the best permutation's fold models are kept (ties and failures
/// resolve to the lower permutation id). Permutations run in parallel;
/// every seed is derived, so the outcome matches a sequential run exactly.
#[allow(clippy::too_many_arguments)]
pub fn train_cv(
    x: &[f64],
    d: usize,
    y: &[f64],
    task: Task,
    params: &ForestParams,
    n_perms: usize,
    k: usize,
    master_seed: u64,
) -> Result<CvEnsemble> {
    let n = y.len();
    if x.len() != n * d {
        return Err(Error::Invalid(format!(
            "feature buffer holds {} cells, expected {n} x {d}",
            x.len()
        )));
    }
    if n < 5 * k {
        return Err(Error::Invalid(format!(
            "cross-validation needs at least {} rows (5 per fold), got {n}",
            5 * k
        )));
    }
    if n_perms == 0 || k < 2 {
        return Err(Error::Invalid("need n_perms >= 1 and k >= 2".into()));
    }
    let classes = match task {
        Task::Classification => {
            let classes = distinct_classes(y);
            if classes.len() < 2 {
                return Err(Error::Invalid(
                    "classification needs at least 2 classes in the training data".into(),
                ));
            }
            classes
        }
        Task::Regression => Vec::new(),
    };

    let outcomes: Vec<PermOutcome> = (0..n_perms)
        .into_par_iter()
        .map(|perm| run_permutation(x, d, y, task, params, &classes, master_seed, perm, k))
        .collect();

    // Best score wins; ties and all-failed cases resolve to the lower id.
    let mut winning_perm = None;
    for (p, outcome) in outcomes.iter().enumerate() {
        let better = match (outcome.score, winning_perm.map(|w: usize| outcomes[w].score)) {
            (_, None) => true,
            (Some(s), Some(Some(best))) => s > best,
            (Some(_), Some(None)) => true,
            (None, Some(_)) => false,
        };
        if better {
            winning_perm = Some(p);
        }
    }
    let winning_perm = winning_perm.expect("n_perms >= 1");
    if outcomes[winning_perm].score.is_none() {
        return Err(Error::Invalid(
            "every cross-validation permutation failed; the target cannot be modeled".into(),
        ));
    }

    // Retrain the winner's fold models (same derived seeds → same models).
    let winner = &outcomes[winning_perm];
    let fold_models: Result<Vec<ForestModel>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let val = &winner.folds[fold];
            let train_idx: Vec<usize> =
                (0..n).filter(|i| !val.contains(i)).collect();
            train_fold_model(
                x, d, y, task, params, &classes, master_seed, winning_perm, fold, &train_idx,
            )
        })
        .collect();

    Ok(CvEnsemble {
        task,
        n_features: d,
        classes,
        master_seed,
        n_perms,
        k,
        fold_models: fold_models?,
        winning_perm,
        perm_scores: outcomes.iter().map(|o| o.score).collect(),
        winner_fold_metrics: winner.fold_metrics.clone(),
        winner_folds: winner.folds.clone(),
    })
}

/// Ensemble predictions for a batch of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predictions {
    Classification {
        classes: Vec<f64>,
        /// Predicted class value per observation.
        labels: Vec<f64>,
        /// Mean fold-model probability vector per observation.
        probabilities: Vec<Vec<f64>>,
    },
    Regression {
        values: Vec<f64>,
    },
}

impl Predictions {
    /// Predicted value per observation regardless of task.
    pub fn point_values(&self) -> &[f64] {
        match self {
            Predictions::Classification { labels, .. } => labels,
            Predictions::Regression { values } => values,
        }
    }
}

/// Predict out-of-sample points: regression averages the fold-model means;
/// classification averages the fold-model probability vectors and takes
/// the argmax (ties to the lower class index).
pub fn predict(ensemble: &CvEnsemble, x_new: &[f64], n_obs: usize) -> Result<Predictions> {
    let d = ensemble.n_features;
    if x_new.len() != n_obs * d {
        return Err(Error::Invalid(format!(
            "expected {n_obs} x {d} coordinates, got {}",
            x_new.len()
        )));
    }
    match ensemble.task {
        Task::Classification => {
            let mut labels = Vec::with_capacity(n_obs);
            let mut probabilities = Vec::with_capacity(n_obs);
            for i in 0..n_obs {
                let point = &x_new[i * d..(i + 1) * d];
                let mut mean = vec![0.0; ensemble.classes.len()];
                for model in &ensemble.fold_models {
                    for (m, p) in mean.iter_mut().zip(model.class_probabilities(point)) {
                        *m += p;
                    }
                }
                let kf = ensemble.fold_models.len() as f64;
                mean.iter_mut().for_each(|v| *v /= kf);
                labels.push(ensemble.classes[argmax(&mean)]);
                probabilities.push(mean);
            }
            Ok(Predictions::Classification { classes: ensemble.classes.clone(), labels, probabilities })
        }
        Task::Regression => {
            let values = (0..n_obs)
                .map(|i| {
                    let point = &x_new[i * d..(i + 1) * d];
                    anchored_mean(ensemble.fold_models.iter().map(|m| m.regress(point)))
                })
                .collect();
            Ok(Predictions::Regression { values })
        }
    }
}

/// Evaluation metrics; fields apply per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub task: Task,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Class values indexing the confusion matrix.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion_classes: Option<Vec<f64>>,
    /// Rows = truth, columns = predicted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}

/// Score predictions against the truth.
pub fn evaluate(predicted: &[f64], truth: &[f64], task: Task) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "evaluate: {} predictions for {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Invalid("evaluate: empty input".into()));
    }
    match task {
        Task::Classification => {
            let mut classes = distinct_classes(truth);
            classes.extend(distinct_classes(predicted));
            let classes = distinct_classes(&classes);
            let idx = |v: f64| classes.binary_search_by(|c| c.partial_cmp(&v).unwrap()).unwrap();
            let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
            let mut correct = 0usize;
            for (&p, &t) in predicted.iter().zip(truth) {
                confusion[idx(t)][idx(p)] += 1;
                correct += usize::from(p == t);
            }
            Ok(Metrics {
                task,
                accuracy: Some(correct as f64 / truth.len() as f64),
                confusion_classes: Some(classes),
                confusion: Some(confusion),
                pearson_r: None,
                rmse: None,
            })
        }
        Task::Regression => {
            let rmse = (predicted
                .iter()
                .zip(truth)
                .map(|(&p, &t)| (p - t) * (p - t))
                .sum::<f64>()
                / truth.len() as f64)
                .sqrt();
            Ok(Metrics {
                task,
                accuracy: None,
                confusion_classes: None,
                confusion: None,
                pearson_r: pearson(predicted, truth),
                rmse: Some(rmse),
            })
        }
    }
}

const MODEL_FORMAT: &str = "latent-atlas-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelContainer {
    format: String,
    version: u32,
    /// SHA-256 hex of the serialized payload string.
    checksum: String,
    payload: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialize an ensemble into the versioned, checksummed container.
pub fn model_to_json(ensemble: &CvEnsemble) -> Result<String> {
    let payload = serde_json::to_string(ensemble)
        .map_err(|e| Error::Invalid(format!("model encode: {e}")))?;
    let container = ModelContainer {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        checksum: sha256_hex(payload.as_bytes()),
        payload,
    };
    serde_json::to_string_pretty(&container)
        .map_err(|e| Error::Invalid(format!("model encode: {e}")))
}

/// Parse and verify a model container.
pub fn model_from_json(text: &str) -> Result<CvEnsemble> {
    let container: ModelContainer = serde_json::from_str(text)
        .map_err(|e| Error::Data(format!("model parse: {e}")))?;
    if container.format != MODEL_FORMAT {
        return Err(Error::Data(format!("not a model file (format `{}`)", container.format)));
    }
    if container.version != MODEL_VERSION {
        return Err(Error::Data(format!(
            "model version {} unsupported (expected {MODEL_VERSION})",
            container.version
        )));
    }
    if sha256_hex(container.payload.as_bytes()) != container.checksum {
        return Err(Error::Data("model file corrupt: checksum mismatch".into()));
    }
    serde_json::from_str(&container.payload)
        .map_err(|e| Error::Data(format!("model payload parse: {e}")))
}

/// Save an ensemble (atomic write).
pub fn save_model(ensemble: &CvEnsemble, path: &std::path::Path) -> Result<()> {
    crate::pipeline::artifacts::write_atomic(path, model_to_json(ensemble)?.as_bytes())
}

/// Load and verify an ensemble.
pub fn load_model(path: &std::path::Path) -> Result<CvEnsemble> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

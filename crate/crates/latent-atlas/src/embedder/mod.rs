//! UMAP-style embedding: kNN graph → fuzzy graph → SGD layout, plus
//! out-of-sample transform and precomputed-embedding ingestion.

mod curve;
mod fuzzy;
mod knn;
mod layout;

pub use curve::fit_curve_ab;
pub use fuzzy::{fuzzy_graph, fuzzy_union_weight, smooth_knn_calibrate, FuzzyGraph};
pub use knn::{euclidean, knn_graph, NeighborGraph};
pub use layout::layout_sgd;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{FeatureMatrix, ScalingParams};
use crate::error::{Error, Result};
use crate::seed;

/// Embedding hyperparameters; the defaults mirror common UMAP practice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedParams {
    pub k: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_components: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    /// Optional SGD refinement of transformed points (0 = pure weighted
    /// placement).
    pub transform_epochs: usize,
}

impl Default for EmbedParams {
    fn default() -> Self {
        EmbedParams {
            k: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_components: 2,
            epochs: 500,
            learning_rate: 1.0,
            negative_sample_rate: 5,
            transform_epochs: 0,
        }
    }
}

impl EmbedParams {
    fn validate(&self) -> Result<()> {
        if self.n_components < 2 {
            return Err(Error::Config("n_components must be at least 2".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("k must be at least 2".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Low-dimensional coordinates aligned with observation ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub n_components: usize,
    pub obs_ids: Vec<String>,
    /// Flattened `n_obs x n_components`, row-major.
    pub coords: Vec<f64>,
}

impl Embedding {
    pub fn new(n_components: usize, obs_ids: Vec<String>, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != obs_ids.len() * n_components {
            return Err(Error::Invalid(format!(
                "{} coordinates for {} observations x {n_components} components",
                coords.len(),
                obs_ids.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("embedding contains non-finite coordinates".into()));
        }
        Ok(Embedding { n_components, obs_ids, coords })
    }

    pub fn n_obs(&self) -> usize {
        self.obs_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n_components..(i + 1) * self.n_components]
    }

    /// CSV export: `id,dim0,dim1,...`. Float formatting is shortest
    /// round-trip, so re-parsing reproduces the exact values.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("id");
        for c in 0..self.n_components {
            header.push_str(&format!(",dim{c}"));
        }
        header.push('\n');
        let mut out = header;
        for (i, id) in self.obs_ids.iter().enumerate() {
            out.push_str(id);
            for &v in self.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Everything needed to reproduce and extend a fitted embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub params: EmbedParams,
    pub seed: u64,
    /// Curve parameters fitted from (min_dist, spread).
    pub a: f64,
    pub b: f64,
    /// Scaled training data, needed by the out-of-sample transform.
    pub train_ids: Vec<String>,
    pub n_features: usize,
    pub train_values: Vec<f64>,
    pub graph: NeighborGraph,
    pub fuzzy: FuzzyGraph,
    pub embedding: Embedding,
}

/// Fit the full pipeline: exact kNN → smooth-kNN calibration → fuzzy
/// union → random init in [-10, 10]^d → SGD layout.
pub fn fit(x: &FeatureMatrix, params: &EmbedParams, master_seed: u64) -> Result<EmbeddingModel> {
    params.validate()?;
    let n = x.n_obs();
    if params.k >= n {
        return Err(Error::Invalid(format!(
            "k = {} needs more than k observations, got {n}",
            params.k
        )));
    }
    let graph = knn_graph(x.values(), x.n_features(), n, params.k)?;
    let fuzzy = fuzzy_graph(&graph);
    let (a, b, _residual) = fit_curve_ab(params.min_dist, params.spread)?;

    let dim = params.n_components;
    let mut init_rng = seed::stream(master_seed, "embed-init", &[]);
    let init: Vec<f64> = (0..n * dim).map(|_| init_rng.random_range(-10.0..10.0)).collect();
    let mut layout_rng = seed::stream(master_seed, "embed-layout", &[]);
    let coords = layout_sgd(
        &fuzzy,
        &init,
        dim,
        a,
        b,
        params.epochs,
        params.learning_rate,
        params.negative_sample_rate,
        &mut layout_rng,
    );
    let embedding = Embedding::new(dim, x.obs_ids().to_vec(), coords)?;
    Ok(EmbeddingModel {
        params: params.clone(),
        seed: master_seed,
        a,
        b,
        train_ids: x.obs_ids().to_vec(),
        n_features: x.n_features(),
        train_values: x.values().to_vec(),
        graph,
        fuzzy,
        embedding,
    })
}

/// Project out-of-sample points: each lands at the fuzzy-weighted mean of
/// its k training neighbors' coordinates (weights from the smooth-kNN
/// calibration of the new point's own distances). An exact duplicate of a
/// training row snaps to that row's coordinates. Optional SGD refinement
/// (`transform_epochs > 0`) then polishes the placements against the
/// frozen training layout.
pub fn transform(model: &EmbeddingModel, x_new: &FeatureMatrix) -> Result<Embedding> {
    if x_new.n_features() != model.n_features {
        return Err(Error::Invalid(format!(
            "model was trained on {} features, input has {}",
            model.n_features,
            x_new.n_features()
        )));
    }
    let k = model.params.k;
    let dim = model.params.n_components;
    let n_train = model.train_ids.len();
    let placements: Vec<Placement> = (0..x_new.n_obs())
        .into_par_iter()
        .map(|i| {
            let point = x_new.row(i);
            let nearest = knn::k_nearest(
                &model.train_values,
                model.n_features,
                n_train,
                point,
                k,
                None,
            );
            // An exact duplicate (distance 0) takes its twin's coordinates;
            // the tie-break already put the lowest such index first.
            if nearest[0].1 == 0.0 {
                let j = nearest[0].0 as usize;
                return (model.embedding.row(j).to_vec(), nearest);
            }
            let distances: Vec<f64> = nearest.iter().map(|&(_, d)| d).collect();
            let (rho, sigma) = smooth_knn_calibrate(
                &distances,
                k,
                fuzzy::CALIBRATION_TOL,
                fuzzy::CALIBRATION_MAX_ITER,
            );
            let weights: Vec<f64> = distances
                .iter()
                .map(|&d| (-((d - rho).max(0.0)) / sigma).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut coords = vec![0.0; dim];
            for (&(j, _), &w) in nearest.iter().zip(&weights) {
                for (c, &t) in coords.iter_mut().zip(model.embedding.row(j as usize)) {
                    *c += w * t;
                }
            }
            coords.iter_mut().for_each(|v| *v /= total);
            (coords, nearest)
        })
        .collect();

    let mut coords: Vec<f64> = placements.iter().flat_map(|(c, _)| c.iter().copied()).collect();
    if model.params.transform_epochs > 0 {
        refine_transform(model, &placements, &mut coords, dim);
    }
    Embedding::new(dim, x_new.obs_ids().to_vec(), coords)
}

/// Initial coordinates of a transformed point plus its training-set
/// neighbor list as `(train index, distance)` pairs.
type Placement = (Vec<f64>, Vec<(u32, f64)>);

/// SGD polish of transformed points against the frozen training layout:
/// attraction to each point's k training neighbors with epochs-per-sample
/// scheduling, uniform negative draws against training points.
fn refine_transform(
    model: &EmbeddingModel,
    placements: &[Placement],
    coords: &mut [f64],
    dim: usize,
) {
    let epochs = model.params.transform_epochs;
    let n_train = model.train_ids.len();
    let mut rng = seed::stream(model.seed, "transform-refine", &[]);

    // Directed fuzzy weights from each new point to its neighbors.
    let mut edges: Vec<(usize, u32, f64)> = Vec::new();
    for (i, (_, nearest)) in placements.iter().enumerate() {
        let distances: Vec<f64> = nearest.iter().map(|&(_, d)| d).collect();
        let (rho, sigma) = smooth_knn_calibrate(
            &distances,
            model.params.k,
            fuzzy::CALIBRATION_TOL,
            fuzzy::CALIBRATION_MAX_ITER,
        );
        for &(j, d) in nearest {
            edges.push((i, j, (-((d - rho).max(0.0)) / sigma).exp()));
        }
    }
    let w_max = edges.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
    let epochs_per_sample: Vec<f64> = edges.iter().map(|e| w_max / e.2).collect();
    let mut next_sample = epochs_per_sample.clone();

    for epoch in 0..epochs {
        let alpha = model.params.learning_rate * (1.0 - epoch as f64 / epochs as f64);
        for (e, &(i, j, _)) in edges.iter().enumerate() {
            if next_sample[e] > (epoch + 1) as f64 {
                continue;
            }
            next_sample[e] += epochs_per_sample[e];
            let anchor = model.embedding.row(j as usize);
            let d2: f64 =
                (0..dim).map(|c| (coords[i * dim + c] - anchor[c]).powi(2)).sum();
            if d2 > 0.0 {
                let coeff = -2.0 * model.a * model.b * d2.powf(model.b - 1.0)
                    / (1.0 + model.a * d2.powf(model.b));
                for c in 0..dim {
                    let grad =
                        (coeff * (coords[i * dim + c] - anchor[c])).clamp(-4.0, 4.0) * alpha;
                    coords[i * dim + c] += grad;
                }
            }
            for _ in 0..model.params.negative_sample_rate {
                let t = rng.random_range(0..n_train);
                let other = model.embedding.row(t);
                let d2: f64 =
                    (0..dim).map(|c| (coords[i * dim + c] - other[c]).powi(2)).sum();
                if d2 > 0.0 {
                    let coeff = 2.0 * model.b
                        / ((0.001 + d2) * (1.0 + model.a * d2.powf(model.b)));
                    for c in 0..dim {
                        let grad = (coeff * (coords[i * dim + c] - other[c])).clamp(-4.0, 4.0)
                            * alpha;
                        coords[i * dim + c] += grad;
                    }
                }
            }
        }
    }
}

/// Load a precomputed embedding from CSV (`id` column plus one column per
/// component). Downstream stages treat it identically to a fitted one.
pub fn load_precomputed(path: &Path, id_column: &str) -> Result<Embedding> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let id_idx = headers.iter().position(|h| h == id_column).ok_or_else(|| {
        Error::Data(format!("{}: id column `{id_column}` not found", path.display()))
    })?;
    let coord_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != id_idx).collect();
    if coord_cols.is_empty() {
        return Err(Error::Data(format!("{}: no coordinate columns", path.display())));
    }
    let mut obs_ids = Vec::new();
    let mut coords = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), row_idx + 1)))?;
        obs_ids.push(record.get(id_idx).unwrap_or("").to_owned());
        for &c in &coord_cols {
            let cell = record.get(c).unwrap_or("");
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: cannot parse `{cell}` at row {}, column `{}`",
                    path.display(),
                    row_idx + 1,
                    headers[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: non-finite coordinate at row {}, column `{}`",
                    path.display(),
                    row_idx + 1,
                    headers[c]
                )));
            }
            coords.push(v);
        }
    }
    Embedding::new(coord_cols.len(), obs_ids, coords)
}

const MODEL_FORMAT: &str = "latent-atlas-embedder";
const MODEL_VERSION: u32 = 1;

/// Versioned on-disk container for a fitted embedder.
#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedderModelFile {
    pub format: String,
    pub version: u32,
    /// Scaling fitted on the training split, carried so projected data can
    /// be prepared identically.
    pub scaling: ScalingParams,
    pub model: EmbeddingModel,
}

/// Save model + scaling as versioned JSON (atomic write).
pub fn save_model(model: &EmbeddingModel, scaling: &ScalingParams, path: &Path) -> Result<()> {
    let file = EmbedderModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        scaling: scaling.clone(),
        model: model.clone(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::Invalid(format!("embedder model encode: {e}")))?;
    crate::pipeline::artifacts::write_atomic(path, json.as_bytes())
}

/// Load a versioned embedder model.
pub fn load_model(path: &Path) -> Result<EmbedderModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: EmbedderModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: parse: {e}", path.display())))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Data(format!(
            "{}: not an embedder model (format `{}`)",
            path.display(),
            file.format
        )));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::Data(format!(
            "{}: model version {} unsupported (expected {MODEL_VERSION})",
            path.display(),
            file.version
        )));
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("o{i}")).collect()
    }

    fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = crate::seed::stream(seed, "embed-test-data", &[]);
        let values: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
        FeatureMatrix::new(ids(n), d, values, None, None).unwrap()
    }

    #[test]
    fn tiny_fit_is_finite_and_shaped() {
        let x = random_matrix(3, 4, 20);
        let params = EmbedParams { k: 2, epochs: 50, ..Default::default() };
        let model = fit(&x, &params, 5).unwrap();
        assert_eq!(model.embedding.n_obs(), 3);
        assert_eq!(model.embedding.n_components, 2);
        assert!(model.embedding.coords.iter().all(|v| v.is_finite()));
        assert!(model.a > 0.0 && model.b > 0.0);
    }

    #[test]
    fn fit_is_deterministic() {
        let x = random_matrix(40, 6, 21);
        let params = EmbedParams { k: 5, epochs: 30, ..Default::default() };
        let m1 = fit(&x, &params, 9).unwrap();
        let m2 = fit(&x, &params, 9).unwrap();
        assert_eq!(m1.embedding.coords, m2.embedding.coords);
        assert_eq!(m1.graph, m2.graph);
        assert_eq!(m1.fuzzy.edges, m2.fuzzy.edges);
        // A different seed moves the layout.
        let m3 = fit(&x, &params, 10).unwrap();
        assert_ne!(m1.embedding.coords, m3.embedding.coords);
    }

    #[test]
    fn oversized_k_is_rejected() {
        let x = random_matrix(5, 3, 22);
        let params = EmbedParams { k: 5, ..Default::default() };
        assert!(fit(&x, &params, 1).is_err());
    }

    #[test]
    fn duplicate_row_transforms_to_its_twin() {
        let x = random_matrix(30, 5, 23);
        let params = EmbedParams { k: 4, epochs: 50, ..Default::default() };
        let model = fit(&x, &params, 3).unwrap();
        // New matrix holding exact copies of training rows 7 and 19.
        let mut values = x.row(7).to_vec();
        values.extend_from_slice(x.row(19));
        let x_new =
            FeatureMatrix::new(vec!["n0".into(), "n1".into()], 5, values, None, None).unwrap();
        let out = transform(&model, &x_new).unwrap();
        assert_eq!(out.row(0), model.embedding.row(7));
        assert_eq!(out.row(1), model.embedding.row(19));
    }

    #[test]
    fn midpoint_of_twins_lands_on_their_segment() {
        // Training data: two identical "twin" rows near the probe and a
        // spread of far-away rows; with k=2 the probe's neighbors are
        // exactly the twins at equal distances, so equal weights place it
        // at the midpoint of their embedded coordinates.
        let mut rng = crate::seed::stream(24, "twin-data", &[]);
        let d = 3;
        let mut values = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        for _ in 0..18 {
            for _ in 0..d {
                values.push(10.0 + rng.random::<f64>() * 5.0);
            }
        }
        let x = FeatureMatrix::new(ids(20), d, values, None, None).unwrap();
        let params = EmbedParams { k: 2, epochs: 50, ..Default::default() };
        let model = fit(&x, &params, 7).unwrap();
        // Probe equidistant from both twins (and far from the rest).
        let probe =
            FeatureMatrix::new(vec!["p".into()], d, vec![0.5, 0.5, 0.5], None, None).unwrap();
        let out = transform(&model, &probe).unwrap();
        let (e0, e1) = (model.embedding.row(0), model.embedding.row(1));
        let mid = [(e0[0] + e1[0]) / 2.0, (e0[1] + e1[1]) / 2.0];
        assert!((out.row(0)[0] - mid[0]).abs() < 1e-9);
        assert!((out.row(0)[1] - mid[1]).abs() < 1e-9);
    }

    #[test]
    fn transform_rejects_wrong_dimensionality() {
        let x = random_matrix(20, 4, 25);
        let params = EmbedParams { k: 3, epochs: 10, ..Default::default() };
        let model = fit(&x, &params, 1).unwrap();
        let bad = random_matrix(2, 5, 26);
        assert!(transform(&model, &bad).is_err());
    }

    #[test]
    fn transform_stays_near_the_training_cloud() {
        let x = random_matrix(60, 4, 27);
        let params = EmbedParams { k: 6, epochs: 100, ..Default::default() };
        let model = fit(&x, &params, 2).unwrap();
        let x_new = random_matrix(20, 4, 28);
        let out = transform(&model, &x_new).unwrap();
        // Weighted means of training coordinates stay inside the training
        // bounding box (convexity), a fortiori inside the 10%-dilated box.
        for c in 0..2 {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..60 {
                lo = lo.min(model.embedding.row(i)[c]);
                hi = hi.max(model.embedding.row(i)[c]);
            }
            for i in 0..20 {
                let v = out.row(i)[c];
                assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "component {c}: {v} outside [{lo},{hi}]");
            }
        }
    }

    #[test]
    fn refinement_is_deterministic_and_finite() {
        let x = random_matrix(30, 4, 29);
        let params =
            EmbedParams { k: 4, epochs: 30, transform_epochs: 20, ..Default::default() };
        let model = fit(&x, &params, 4).unwrap();
        let x_new = random_matrix(8, 4, 30);
        let o1 = transform(&model, &x_new).unwrap();
        let o2 = transform(&model, &x_new).unwrap();
        assert_eq!(o1, o2);
        assert!(o1.coords.iter().all(|v| v.is_finite()));
        // The duplicate-snap guarantee applies with refinement off; here
        // just confirm refinement moved something relative to the raw
        // placement.
        let raw_model = EmbeddingModel {
            params: EmbedParams { transform_epochs: 0, ..params },
            ..model
        };
        let raw = transform(&raw_model, &x_new).unwrap();
        assert_ne!(o1.coords, raw.coords);
    }

    #[test]
    fn precomputed_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        std::fs::write(&path, "id,dim0,dim1\na,0.5,-1.25\nb,3,4\nc,-0.125,9\n").unwrap();
        let e = load_precomputed(&path, "id").unwrap();
        assert_eq!(e.n_obs(), 3);
        assert_eq!(e.n_components, 2);
        assert_eq!(e.row(0), [0.5, -1.25]);
        assert_eq!(e.obs_ids, ["a", "b", "c"]);

        std::fs::write(&path, "id,dim0\na,NaN\n").unwrap();
        assert!(load_precomputed(&path, "id").is_err());
    }

    #[test]
    fn embedding_csv_round_trips_exactly() {
        let x = random_matrix(10, 3, 31);
        let params = EmbedParams { k: 3, epochs: 20, ..Default::default() };
        let model = fit(&x, &params, 6).unwrap();
        let csv = model.embedding.to_csv();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        std::fs::write(&path, &csv).unwrap();
        let back = load_precomputed(&path, "id").unwrap();
        assert_eq!(back.coords.len(), model.embedding.coords.len());
        for (a, b) in back.coords.iter().zip(&model.embedding.coords) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn model_file_round_trip() {
        let x = random_matrix(20, 4, 32);
        let params = EmbedParams { k: 3, epochs: 20, ..Default::default() };
        let model = fit(&x, &params, 8).unwrap();
        let scaling = crate::dataio::scale_fit(&x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &scaling, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.scaling, scaling);

        // Transform through the reloaded model is bit-identical.
        let x_new = random_matrix(5, 4, 33);
        let o1 = transform(&model, &x_new).unwrap();
        let o2 = transform(&back.model, &x_new).unwrap();
        assert_eq!(o1, o2);
    }

    #[test]
    fn version_and_format_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"format":"something-else","version":1,"scaling":{"mins":[],"maxs":[],"constant_features":[]},"model":null}"#,
        )
        .unwrap();
        assert!(load_model(&path).is_err());
    }
}

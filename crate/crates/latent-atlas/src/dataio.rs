//! Dataset loading, validation, scaling, and target management.
//!
//! Observations are rows, features are columns. Image-like data is
//! flattened row-major into feature vectors; the original tensor shape is
//! kept so effect maps can be reshaped back later.

use std::collections::HashSet;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense observations-by-features matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    obs_ids: Vec<String>,
    feature_names: Option<Vec<String>>,
    tensor_shape: Option<Vec<usize>>,
    n_features: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    /// Build a matrix from row-major values, checking every invariant:
    /// finite values, unique ids, and a tensor shape consistent with the
    /// feature count.
    pub fn new(
        obs_ids: Vec<String>,
        n_features: usize,
        values: Vec<f64>,
        feature_names: Option<Vec<String>>,
        tensor_shape: Option<Vec<usize>>,
    ) -> Result<Self> {
        if values.len() != obs_ids.len() * n_features {
            return Err(Error::Data(format!(
                "value buffer holds {} cells, expected {} obs x {} features",
                values.len(),
                obs_ids.len(),
                n_features
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != n_features {
                return Err(Error::Data(format!(
                    "{} feature names for {} features",
                    names.len(),
                    n_features
                )));
            }
        }
        if let Some(shape) = &tensor_shape {
            if shape.is_empty() || shape.contains(&0) {
                return Err(Error::Data("tensor shape must be positive integers".into()));
            }
            let prod: usize = shape.iter().product();
            if prod != n_features {
                return Err(Error::Data(format!(
                    "tensor shape {:?} has {} cells but matrix has {} features",
                    shape, prod, n_features
                )));
            }
        }
        let mut seen = HashSet::with_capacity(obs_ids.len());
        for id in &obs_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate observation id `{id}`")));
            }
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (bad / n_features.max(1), bad % n_features.max(1));
            return Err(Error::Data(format!(
                "non-finite value at row {} (id `{}`), column {}",
                row, obs_ids[row], col
            )));
        }
        Ok(FeatureMatrix { obs_ids, feature_names, tensor_shape, n_features, values })
    }

    pub fn n_obs(&self) -> usize {
        self.obs_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn obs_ids(&self) -> &[String] {
        &self.obs_ids
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Name of feature `j`, falling back to `f{j}` for unnamed matrices.
    pub fn feature_name(&self, j: usize) -> String {
        match &self.feature_names {
            Some(names) => names[j].clone(),
            None => format!("f{j}"),
        }
    }

    pub fn tensor_shape(&self) -> Option<&[usize]> {
        self.tensor_shape.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_features + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column `j` gathered into a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_obs()).map(|i| self.get(i, j)).collect()
    }

    /// New matrix holding the given observation rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<FeatureMatrix> {
        let mut values = Vec::with_capacity(rows.len() * self.n_features);
        let mut ids = Vec::with_capacity(rows.len());
        for &i in rows {
            values.extend_from_slice(self.row(i));
            ids.push(self.obs_ids[i].clone());
        }
        FeatureMatrix::new(
            ids,
            self.n_features,
            values,
            self.feature_names.clone(),
            self.tensor_shape.clone(),
        )
    }
}

/// How to treat rows containing NaN or infinite cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonFinitePolicy {
    /// Fail the whole load, naming the offending cell.
    #[default]
    RejectFile,
    /// Drop the offending rows and count them as a warning.
    DropRow,
}

/// Options shared by the dataset loaders.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub non_finite: NonFinitePolicy,
    /// Feature columns to exclude by name (CSV only).
    pub exclude_features: Vec<String>,
    /// Tensor shape to attach to a CSV load (tensor files carry their own).
    pub tensor_shape: Option<Vec<usize>>,
}

/// Outcome bookkeeping for a load: rows dropped under the drop-row policy.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dropped_rows: Vec<String>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Load a feature matrix from a UTF-8, comma-separated, headered CSV with
/// one id column. Column order is preserved.
pub fn load_feature_csv(
    path: &Path,
    id_column: &str,
    opts: &LoadOptions,
) -> Result<(FeatureMatrix, LoadReport)> {
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let id_idx = headers
        .iter()
        .position(|h| h == id_column)
        .ok_or_else(|| Error::Data(format!("{}: id column `{id_column}` not found", path.display())))?;

    let excluded: HashSet<&str> = opts.exclude_features.iter().map(String::as_str).collect();
    for name in &excluded {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::Data(format!(
                "{}: excluded feature `{name}` not present",
                path.display()
            )));
        }
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != id_idx && !excluded.contains(headers[c].as_str()))
        .collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].clone()).collect();

    let mut obs_ids = Vec::new();
    let mut values = Vec::new();
    let mut report = LoadReport::default();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            Error::Data(format!("{}: row {}: {e}", path.display(), row_idx + 1))
        })?;
        let id = record.get(id_idx).unwrap_or("").to_owned();
        let mut row = Vec::with_capacity(feature_cols.len());
        let mut bad_cell: Option<String> = None;
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("");
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                Ok(_) => {
                    bad_cell = Some(format!(
                        "{}: non-finite value at row {} (id `{id}`), column `{}`",
                        path.display(),
                        row_idx + 1,
                        headers[c]
                    ));
                    break;
                }
                Err(_) => {
                    return Err(Error::Data(format!(
                        "{}: cannot parse `{cell}` as a number at row {} (id `{id}`), column `{}`",
                        path.display(),
                        row_idx + 1,
                        headers[c]
                    )))
                }
            }
        }
        match bad_cell {
            Some(msg) => match opts.non_finite {
                NonFinitePolicy::RejectFile => return Err(Error::Data(msg)),
                NonFinitePolicy::DropRow => report.dropped_rows.push(id),
            },
            None => {
                obs_ids.push(id);
                values.extend_from_slice(&row);
            }
        }
    }

    let matrix = FeatureMatrix::new(
        obs_ids,
        feature_cols.len(),
        values,
        Some(feature_names),
        opts.tensor_shape.clone(),
    )?;
    Ok((matrix, report))
}

/// JSON sidecar describing a raw tensor dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSidecar {
    pub n_obs: usize,
    pub shape: Vec<usize>,
    pub obs_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_names: Option<Vec<String>>,
}

/// Load a raw little-endian f32 tensor dataset described by a JSON sidecar.
/// Each observation's tensor is flattened row-major into one matrix row.
pub fn load_tensor_dataset(
    data_path: &Path,
    sidecar_path: &Path,
    opts: &LoadOptions,
) -> Result<(FeatureMatrix, LoadReport)> {
    let sidecar: TensorSidecar = serde_json::from_str(&read_to_string(sidecar_path)?)
        .map_err(|e| Error::Data(format!("{}: bad sidecar: {e}", sidecar_path.display())))?;
    if sidecar.obs_ids.len() != sidecar.n_obs {
        return Err(Error::Data(format!(
            "{}: sidecar declares {} observations but lists {} ids",
            sidecar_path.display(),
            sidecar.n_obs,
            sidecar.obs_ids.len()
        )));
    }
    if sidecar.shape.is_empty() || sidecar.shape.contains(&0) {
        return Err(Error::Data(format!(
            "{}: tensor shape must be positive integers",
            sidecar_path.display()
        )));
    }
    let n_features: usize = sidecar.shape.iter().product();

    let mut file = fs::File::open(data_path).map_err(|e| Error::io(data_path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(data_path, e))?;
    let expected = sidecar.n_obs * n_features * 4;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "{}: holds {} bytes, expected {} ({} obs x {} features x 4)",
            data_path.display(),
            bytes.len(),
            expected,
            sidecar.n_obs,
            n_features
        )));
    }

    let mut obs_ids = Vec::with_capacity(sidecar.n_obs);
    let mut values = Vec::with_capacity(sidecar.n_obs * n_features);
    let mut report = LoadReport::default();
    for (i, id) in sidecar.obs_ids.iter().enumerate() {
        let start = i * n_features * 4;
        let row: Vec<f64> = (0..n_features)
            .map(|j| {
                let o = start + j * 4;
                f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64
            })
            .collect();
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            match opts.non_finite {
                NonFinitePolicy::RejectFile => {
                    return Err(Error::Data(format!(
                        "{}: non-finite value at row {i} (id `{id}`), column {col}",
                        data_path.display()
                    )))
                }
                NonFinitePolicy::DropRow => {
                    report.dropped_rows.push(id.clone());
                    continue;
                }
            }
        }
        obs_ids.push(id.clone());
        values.extend_from_slice(&row);
    }

    let matrix =
        FeatureMatrix::new(obs_ids, n_features, values, sidecar.feature_names, Some(sidecar.shape))?;
    Ok((matrix, report))
}

/// Write a matrix in the raw f32 tensor format (data file + JSON sidecar).
pub fn write_tensor_dataset(
    data_path: &Path,
    sidecar_path: &Path,
    m: &FeatureMatrix,
) -> Result<()> {
    let shape = match m.tensor_shape() {
        Some(s) => s.to_vec(),
        None => vec![m.n_features()],
    };
    let sidecar = TensorSidecar {
        n_obs: m.n_obs(),
        shape,
        obs_ids: m.obs_ids().to_vec(),
        feature_names: m.feature_names().map(<[String]>::to_vec),
    };
    let mut bytes = Vec::with_capacity(m.values().len() * 4);
    for &v in m.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    crate::pipeline::artifacts::write_atomic(data_path, &bytes)?;
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Data(format!("sidecar encode: {e}")))?;
    crate::pipeline::artifacts::write_atomic(sidecar_path, json.as_bytes())
}

/// Per-feature min/max learned on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    /// True exactly where min == max.
    pub constant_features: Vec<bool>,
}

impl ScalingParams {
    pub fn n_features(&self) -> usize {
        self.mins.len()
    }
}

/// Fit per-feature min/max on the training split only.
pub fn scale_fit(train: &FeatureMatrix) -> Result<ScalingParams> {
    if train.n_obs() == 0 {
        return Err(Error::Invalid("cannot fit scaling on an empty matrix".into()));
    }
    let d = train.n_features();
    let mut mins = vec![f64::INFINITY; d];
    let mut maxs = vec![f64::NEG_INFINITY; d];
    for i in 0..train.n_obs() {
        let row = train.row(i);
        for j in 0..d {
            mins[j] = mins[j].min(row[j]);
            maxs[j] = maxs[j].max(row[j]);
        }
    }
    let constant_features = mins.iter().zip(&maxs).map(|(a, b)| a == b).collect();
    Ok(ScalingParams { mins, maxs, constant_features })
}

/// Map each value to `(x - min) / (max - min)`. Constant features map to 0.
/// Out-of-sample values are deliberately not clamped, so they may fall
/// outside \[0,1\].
pub fn scale_apply(params: &ScalingParams, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.n_features() != params.n_features() {
        return Err(Error::Invalid(format!(
            "scaling fitted on {} features, matrix has {}",
            params.n_features(),
            m.n_features()
        )));
    }
    let d = m.n_features();
    let mut values = Vec::with_capacity(m.values().len());
    for i in 0..m.n_obs() {
        for (j, &v) in m.row(i).iter().enumerate() {
            if params.constant_features[j] {
                values.push(0.0);
            } else {
                values.push((v - params.mins[j]) / (params.maxs[j] - params.mins[j]));
            }
        }
    }
    FeatureMatrix::new(
        m.obs_ids().to_vec(),
        d,
        values,
        m.feature_names().map(<[String]>::to_vec),
        m.tensor_shape().map(<[usize]>::to_vec),
    )
}

/// Whether a target carries continuous or 0/1-coded binary values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Continuous,
    Binary,
}

/// A variable of interest aligned with one observation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVariable {
    pub name: String,
    pub kind: TargetKind,
    pub values: Vec<f64>,
    pub obs_ids: Vec<String>,
}

impl TargetVariable {
    pub fn new(name: String, kind: TargetKind, values: Vec<f64>, obs_ids: Vec<String>) -> Result<Self> {
        if values.len() != obs_ids.len() {
            return Err(Error::Data(format!(
                "target `{name}`: {} values for {} observations",
                values.len(),
                obs_ids.len()
            )));
        }
        match kind {
            TargetKind::Binary => {
                if values.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Data(format!(
                        "binary target `{name}` contains values other than 0 and 1"
                    )));
                }
            }
            TargetKind::Continuous => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "continuous target `{name}` contains non-finite values"
                    )));
                }
            }
        }
        Ok(TargetVariable { name, kind, values, obs_ids })
    }
}

/// Expand categorical labels into one-vs-rest binary targets, one per
/// distinct label, named after the label. Label order is sorted so the
/// expansion is deterministic.
pub fn binarize_target(obs_ids: &[String], labels: &[String]) -> Result<Vec<TargetVariable>> {
    if obs_ids.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} labels for {} observations",
            labels.len(),
            obs_ids.len()
        )));
    }
    let mut distinct: Vec<&String> = labels.iter().collect::<HashSet<_>>().into_iter().collect();
    distinct.sort();
    if distinct.len() < 2 {
        return Err(Error::Data(
            "categorical target has a single distinct label; nothing to contrast".into(),
        ));
    }
    distinct
        .into_iter()
        .map(|label| {
            let values = labels.iter().map(|l| if l == label { 1.0 } else { 0.0 }).collect();
            TargetVariable::new(label.clone(), TargetKind::Binary, values, obs_ids.to_vec())
        })
        .collect()
}

//! Atomic artifact writing and run-directory layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::FeatureMatrix;
use crate::error::{Error, Result};

/// Write `bytes` to `path` atomically: write to a temporary sibling, then
/// rename over the destination. Readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    use std::io::Write;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Pretty-printed JSON artifact, written atomically.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invalid(format!("{}: encode: {e}", path.display())))?;
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

/// Parse a JSON artifact.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: parse: {e}", path.display())))
}

/// Sidecar for an internal f64 matrix artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixMeta {
    pub n_obs: usize,
    pub n_features: usize,
    pub obs_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor_shape: Option<Vec<usize>>,
    /// Rows discarded at load time under the drop-row policy.
    #[serde(default)]
    pub dropped_rows: Vec<String>,
}

/// Persist a matrix losslessly: raw little-endian f64, row-major, plus a
/// JSON sidecar. Internal artifact format — stages re-read exactly the
/// bits earlier stages computed, so staged and monolithic runs agree.
pub fn write_matrix_f64(
    data_path: &Path,
    meta_path: &Path,
    m: &FeatureMatrix,
    dropped_rows: &[String],
) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.values().len() * 8);
    for v in m.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(data_path, &bytes)?;
    write_json(
        meta_path,
        &MatrixMeta {
            n_obs: m.n_obs(),
            n_features: m.n_features(),
            obs_ids: m.obs_ids().to_vec(),
            feature_names: m.feature_names().map(<[String]>::to_vec),
            tensor_shape: m.tensor_shape().map(<[usize]>::to_vec),
            dropped_rows: dropped_rows.to_vec(),
        },
    )
}

/// Read a matrix written by [`write_matrix_f64`].
pub fn read_matrix_f64(data_path: &Path, meta_path: &Path) -> Result<(FeatureMatrix, MatrixMeta)> {
    let meta: MatrixMeta = read_json(meta_path)?;
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    let expect = meta.n_obs * meta.n_features * 8;
    if bytes.len() != expect {
        return Err(Error::Data(format!(
            "{}: {} bytes but sidecar declares {} x {} f64 values ({expect} bytes)",
            data_path.display(),
            bytes.len(),
            meta.n_obs,
            meta.n_features
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let matrix = FeatureMatrix::new(
        meta.obs_ids.clone(),
        meta.n_features,
        values,
        meta.feature_names.clone(),
        meta.tensor_shape.clone(),
    )?;
    Ok((matrix, meta))
}

/// Fixed layout of a run directory. Every stage knows where its inputs and
/// outputs live relative to the run root, which is what makes the staged
/// and single-shot invocations interchangeable.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    /// Wall-clock milliseconds for one stage — the only artifacts that
    /// legitimately differ between reruns.
    pub fn timing(&self, stage: &str) -> PathBuf {
        self.root.join(format!("timings/{stage}.ms"))
    }

    pub fn scaling(&self) -> PathBuf {
        self.root.join("data/scaling.json")
    }

    /// Scaled split matrix: raw f64 data + JSON sidecar.
    pub fn split_data(&self, split: &str) -> (PathBuf, PathBuf) {
        (
            self.root.join(format!("data/{split}.f64")),
            self.root.join(format!("data/{split}.meta.json")),
        )
    }

    /// Target values for a split, JSON.
    pub fn targets(&self, split: &str) -> PathBuf {
        self.root.join(format!("data/{split}.targets.json"))
    }

    pub fn embedder_model(&self) -> PathBuf {
        self.root.join("embed/model.json")
    }

    /// Embedded coordinates for a split (CSV; floats round-trip exactly).
    pub fn embedding(&self, split: &str) -> PathBuf {
        self.root.join(format!("embed/{split}.csv"))
    }

    pub fn dls(&self) -> PathBuf {
        self.root.join("dls/space.json")
    }

    /// Statistics-split pixel assignment in the fitted grid.
    pub fn dls_statistics(&self) -> PathBuf {
        self.root.join("dls/statistics.json")
    }

    pub fn occupancy_pgm(&self) -> PathBuf {
        self.root.join("dls/occupancy.pgm")
    }

    pub fn occupied_csv(&self) -> PathBuf {
        self.root.join("dls/occupied.csv")
    }

    pub fn stat_map_csv(&self, target: &str) -> PathBuf {
        self.root.join(format!("statmap/{target}.csv"))
    }

    pub fn stat_map_pgm(&self, target: &str) -> PathBuf {
        self.root.join(format!("statmap/{target}.pgm"))
    }

    pub fn clusters(&self, target: &str) -> PathBuf {
        self.root.join(format!("statmap/{target}.clusters.json"))
    }

    /// Embedding scatter with this target's cluster outlines.
    pub fn overlay_svg(&self, target: &str) -> PathBuf {
        self.root.join(format!("statmap/{target}.svg"))
    }

    pub fn profile_csv(&self, target: &str) -> PathBuf {
        self.root.join(format!("profile/{target}.csv"))
    }

    /// Per-target profile details (summaries the report consumes).
    pub fn profile_json(&self, target: &str) -> PathBuf {
        self.root.join(format!("profile/{target}.json"))
    }

    /// Signed effect map of one cluster rendered over the tensor shape.
    pub fn rmap_pgm(&self, target: &str, cluster_id: u32) -> PathBuf {
        self.root.join(format!("profile/{target}.cluster{cluster_id}.rmap.pgm"))
    }

    /// Raw float tensor of one cluster's signed effect map + sidecar.
    pub fn rmap_tensor(&self, target: &str, cluster_id: u32) -> (PathBuf, PathBuf) {
        (
            self.root.join(format!("profile/{target}.cluster{cluster_id}.rmap.f32")),
            self.root.join(format!("profile/{target}.cluster{cluster_id}.rmap.json")),
        )
    }

    pub fn predictor_model(&self) -> PathBuf {
        self.root.join("predict/model.json")
    }

    /// Which split/task/vocabulary the predictor was trained with.
    pub fn training_meta(&self) -> PathBuf {
        self.root.join("predict/training.json")
    }

    pub fn predictions_csv(&self) -> PathBuf {
        self.root.join("predict/predictions.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("predict/metrics.json")
    }

    /// Scatter of the embedding colored by target (no overlays).
    pub fn embedding_svg(&self) -> PathBuf {
        self.root.join("render/embedding.svg")
    }
}

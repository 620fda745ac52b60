//! Pipeline configuration: a single JSON document declaring data roles,
//! per-module parameters, the master seed, and the output directory.
//! Unknown keys anywhere are a hard error.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::NonFinitePolicy;
use crate::dls::BinningMode;
use crate::embedder::EmbedParams;
use crate::error::{Error, Result};
use crate::predictor::Task;
use crate::statmap::{Connectivity, CorrMethod};

/// Split roles, named consistently across artifacts and subcommands.
pub const SPLIT_EMBEDDING: &str = "embedding";
pub const SPLIT_STATISTICS: &str = "statistics";
pub const SPLIT_PREDICTION: &str = "prediction";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every random draw in the pipeline derives from it.
    pub seed: u64,
    /// Output directory. Optional here because `--out` or
    /// `LATENT_ATLAS_OUT` may supply it; required once resolved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker-thread cap (0 or absent = all cores); `--threads` or
    /// `LATENT_ATLAS_THREADS` may override. Never affects results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub data: DataConfig,
    /// Fit an embedding with these parameters …
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EmbedParams>,
    /// … or take coordinates from a CSV. Exactly one of the two.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precomputed: Option<PrecomputedConfig>,
    #[serde(default)]
    pub dls: DlsConfig,
    #[serde(default)]
    pub statmap: StatmapConfig,
    #[serde(default)]
    pub profiler: ProfilerConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Id column name for every CSV in this run.
    #[serde(default = "default_id_column")]
    pub id_column: String,
    /// Policy for non-finite feature cells.
    #[serde(default)]
    pub non_finite: NonFinitePolicy,
    /// Feature columns dropped at load time (CSV inputs).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude_features: Vec<String>,
    /// Tensor shape attached to CSV-loaded features (for profile maps).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor_shape: Option<Vec<usize>>,
    /// Single-dataset mode: one source split by `split.embedding_fraction`
    /// into the embedding set and a remainder serving as both the
    /// statistics and prediction sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    /// Explicit-roles mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistics: Option<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<DatasetConfig>,
}

fn default_id_column() -> String {
    "id".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Feature CSV (header row, one id column) …
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    /// … or a raw f32 tensor file with its JSON sidecar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor_data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor_sidecar: Option<PathBuf>,
    /// Target CSV: id column plus `target_column`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_kind: Option<TargetKindConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKindConfig {
    /// String labels; one-vs-rest binary targets for maps, one multiclass
    /// classifier for prediction.
    Categorical,
    Continuous,
    /// 0/1-valued.
    Binary,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of observations (after a seeded shuffle) assigned to the
    /// embedding set; `floor(fraction * n)` rows, original order kept.
    pub embedding_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecomputedConfig {
    /// CSV of coordinates covering every observation id in this run:
    /// id column plus one column per embedding dimension.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DlsConfig {
    pub overlap_target: f64,
    pub r_max: u32,
    pub binning: BinningMode,
    /// Pin the resolution instead of searching for it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_r: Option<u32>,
}

impl Default for DlsConfig {
    fn default() -> Self {
        DlsConfig {
            overlap_target: 0.05,
            r_max: 1024,
            binning: BinningMode::default(),
            fixed_r: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatmapConfig {
    /// Gaussian bandwidth in pixels; absent = max(1, R/32).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Correlation method; absent = point-biserial for binary targets,
    /// Pearson for continuous.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<CorrMethod>,
    pub r_min: f64,
    pub connectivity: Connectivity,
    pub min_pixels: usize,
}

impl Default for StatmapConfig {
    fn default() -> Self {
        StatmapConfig {
            sigma: None,
            method: None,
            r_min: 0.2,
            connectivity: Connectivity::default(),
            min_pixels: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfilerConfig {
    /// Minimum observations inside a cluster for it to be profiled.
    pub min_members: usize,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        ProfilerConfig { min_members: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    /// Absent = classification for categorical/binary training targets,
    /// regression for continuous.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub n_perms: usize,
    pub k: usize,
    pub n_trees: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    /// Absent = 1 for classification, 5 for regression.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_samples_leaf: Option<usize>,
    /// Absent = max(1, floor(sqrt(d))) classification, max(1, floor(d/3))
    /// regression.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            task: None,
            n_perms: 100,
            k: 5,
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: None,
            mtry: None,
        }
    }
}

impl DatasetConfig {
    fn validate(&self, role: &str, base: &Path) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        match (&self.features, &self.tensor_data, &self.tensor_sidecar) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            (None, None, None) => {
                return err(format!(
                    "data.{role}: provide either `features` or `tensor_data` + `tensor_sidecar`"
                ));
            }
            (Some(_), _, _) => {
                return err(format!("data.{role}: `features` excludes the tensor inputs"));
            }
            _ => {
                return err(format!(
                    "data.{role}: `tensor_data` and `tensor_sidecar` go together"
                ));
            }
        }
        if self.targets.is_some() {
            if self.target_column.is_none() {
                return err(format!("data.{role}: `targets` requires `target_column`"));
            }
            if self.target_kind.is_none() {
                return err(format!("data.{role}: `targets` requires `target_kind`"));
            }
        } else if self.target_column.is_some() || self.target_kind.is_some() {
            return err(format!("data.{role}: target options given without `targets`"));
        }
        for path in [&self.features, &self.tensor_data, &self.tensor_sidecar, &self.targets]
            .into_iter()
            .flatten()
        {
            let resolved = resolve_path(base, path);
            if !resolved.is_file() {
                return err(format!(
                    "data.{role}: `{}` does not exist",
                    resolved.display()
                ));
            }
        }
        Ok(())
    }

    pub fn has_targets(&self) -> bool {
        self.targets.is_some()
    }
}

/// Interpret a config-relative path: absolute paths pass through, relative
/// ones are anchored at the config file's directory.
pub fn resolve_path(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl PipelineConfig {
    /// Parse and validate a config file. `out_override` and
    /// `threads_override` carry CLI values, which beat the
    /// `LATENT_ATLAS_OUT` / `LATENT_ATLAS_THREADS` environment variables,
    /// which beat the file.
    pub fn load(
        path: &Path,
        out_override: Option<PathBuf>,
        threads_override: Option<usize>,
    ) -> Result<ResolvedConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

        if let Some(out) = out_override {
            config.output_dir = Some(out);
        } else if let Ok(out) = std::env::var("LATENT_ATLAS_OUT") {
            config.output_dir = Some(PathBuf::from(out));
        }
        if let Some(threads) = threads_override {
            config.threads = Some(threads);
        } else if let Ok(threads) = std::env::var("LATENT_ATLAS_THREADS") {
            let parsed = threads.parse().map_err(|_| {
                Error::Config(format!("LATENT_ATLAS_THREADS: `{threads}` is not a number"))
            })?;
            config.threads = Some(parsed);
        }

        config.validate(&base)?;
        let output_dir = resolve_path(&base, &config.output_dir.clone().expect("validated"));
        Ok(ResolvedConfig { config, base, output_dir })
    }

    fn validate(&self, base: &Path) -> Result<()> {
        let err = |msg: &str| Err(Error::Config(msg.into()));
        if self.output_dir.is_none() {
            return err("no output directory: set `output_dir`, pass --out, or export LATENT_ATLAS_OUT");
        }
        match (&self.embedder, &self.precomputed) {
            (Some(_), Some(_)) => {
                return err("`embedder` and `precomputed` are mutually exclusive — pick one")
            }
            (None, None) => return err("one of `embedder` or `precomputed` is required"),
            _ => {}
        }
        if let Some(pre) = &self.precomputed {
            let resolved = resolve_path(base, &pre.path);
            if !resolved.is_file() {
                return Err(Error::Config(format!(
                    "precomputed: `{}` does not exist",
                    resolved.display()
                )));
            }
        }

        let d = &self.data;
        let single = d.dataset.is_some();
        let roles = d.embedding.is_some() || d.statistics.is_some() || d.prediction.is_some();
        match (single, roles) {
            (true, true) => {
                return err("data: `dataset` (single-dataset mode) excludes the per-role sets")
            }
            (false, false) => {
                return err("data: provide `dataset` + `split`, or an `embedding` set")
            }
            (true, false) => {
                let split = match &d.split {
                    None => return err("data: single-dataset mode requires `split`"),
                    Some(s) => s,
                };
                if !(split.embedding_fraction > 0.0 && split.embedding_fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "data.split: embedding_fraction must be in (0, 1], got {}",
                        split.embedding_fraction
                    )));
                }
                d.dataset.as_ref().expect("single mode").validate("dataset", base)?;
            }
            (false, true) => {
                if d.split.is_some() {
                    return err("data: `split` only applies to single-dataset mode");
                }
                let embedding = match &d.embedding {
                    None => return err("data: an `embedding` set is required"),
                    Some(e) => e,
                };
                embedding.validate(SPLIT_EMBEDDING, base)?;
                if let Some(s) = &d.statistics {
                    s.validate(SPLIT_STATISTICS, base)?;
                    if !s.has_targets() {
                        return err("data.statistics: a statistics set requires `targets`");
                    }
                }
                if let Some(p) = &d.prediction {
                    p.validate(SPLIT_PREDICTION, base)?;
                }
            }
        }

        if self.dls.overlap_target < 0.0 || self.dls.overlap_target >= 1.0 {
            return Err(Error::Config(format!(
                "dls.overlap_target must be in [0, 1), got {}",
                self.dls.overlap_target
            )));
        }
        if self.dls.r_max < 2 {
            return err("dls.r_max must be at least 2");
        }
        if self.statmap.r_min <= 0.0 {
            return err("statmap.r_min must be positive");
        }
        if let Some(sigma) = self.statmap.sigma {
            if sigma <= 0.0 {
                return err("statmap.sigma must be positive");
            }
        }
        if self.predictor.k < 2 {
            return err("predictor.k must be at least 2");
        }
        if self.predictor.n_perms == 0 || self.predictor.n_trees == 0 {
            return err("predictor.n_perms and n_trees must be positive");
        }
        Ok(())
    }

    /// The dataset description for a role, honoring single-dataset mode
    /// (where every role shares one source).
    pub fn dataset_for(&self, role: &str) -> Option<&DatasetConfig> {
        if self.data.dataset.is_some() {
            return self.data.dataset.as_ref();
        }
        match role {
            SPLIT_EMBEDDING => self.data.embedding.as_ref(),
            SPLIT_STATISTICS => self.data.statistics.as_ref(),
            SPLIT_PREDICTION => self.data.prediction.as_ref(),
            _ => None,
        }
    }

    /// Splits that exist in this run, in pipeline order.
    pub fn active_splits(&self) -> Vec<&'static str> {
        let mut splits = vec![SPLIT_EMBEDDING];
        if self.data.dataset.is_some() {
            // The remainder backs both roles unless the split takes all.
            if self.data.split.map(|s| s.embedding_fraction < 1.0).unwrap_or(false) {
                splits.push(SPLIT_STATISTICS);
                splits.push(SPLIT_PREDICTION);
            }
        } else {
            if self.data.statistics.is_some() {
                splits.push(SPLIT_STATISTICS);
            }
            if self.data.prediction.is_some() {
                splits.push(SPLIT_PREDICTION);
            }
        }
        splits
    }
}

/// A validated config plus the anchor directory for its relative paths
/// and the fully resolved output directory.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: PipelineConfig,
    pub base: PathBuf,
    pub output_dir: PathBuf,
}

impl ResolvedConfig {
    pub fn path(&self, p: &Path) -> PathBuf {
        resolve_path(&self.base, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("config.json");
        fs::write(&path, body).unwrap();
        path
    }

    fn touch(dir: &Path, name: &str) -> String {
        fs::write(dir.join(name), "id,a\nx,1\n").unwrap();
        name.to_owned()
    }

    fn minimal(dir: &Path) -> String {
        let features = touch(dir, "data.csv");
        format!(
            r#"{{
  "seed": 7,
  "output_dir": "out",
  "data": {{ "embedding": {{ "features": "{features}" }} }},
  "embedder": {{ "k": 5 }}
}}"#
        )
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &minimal(dir.path()));
        let resolved = PipelineConfig::load(&path, None, None).unwrap();
        let c = &resolved.config;
        assert_eq!(c.seed, 7);
        assert_eq!(c.data.id_column, "id");
        assert_eq!(c.dls.overlap_target, 0.05);
        assert_eq!(c.dls.r_max, 1024);
        assert_eq!(c.statmap.r_min, 0.2);
        assert_eq!(c.statmap.min_pixels, 5);
        assert_eq!(c.statmap.connectivity, Connectivity::Full);
        assert_eq!(c.profiler.min_members, 5);
        assert_eq!(c.predictor.n_perms, 100);
        assert_eq!(c.predictor.k, 5);
        assert_eq!(c.predictor.n_trees, 100);
        let e = c.embedder.as_ref().unwrap();
        assert_eq!(e.k, 5);
        assert_eq!(e.min_dist, 0.1);
        assert_eq!(e.epochs, 500);
        assert_eq!(resolved.output_dir, dir.path().join("out"));
        assert_eq!(c.active_splits(), [SPLIT_EMBEDDING]);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let dir = tempfile::tempdir().unwrap();
        let body = minimal(dir.path()).replace("\"seed\": 7", "\"seed\": 7, \"sede\": 1");
        let path = write_config(dir.path(), &body);
        let e = PipelineConfig::load(&path, None, None).unwrap_err();
        assert!(e.to_string().contains("sede"), "{e}");
        assert_eq!(e.exit_code(), 2);

        // Nested unknown keys too.
        let body = minimal(dir.path()).replace("\"k\": 5", "\"k\": 5, \"neighbours\": 5");
        let path = write_config(dir.path(), &body);
        assert!(PipelineConfig::load(&path, None, None).is_err());
    }

    #[test]
    fn seed_is_required() {
        let dir = tempfile::tempdir().unwrap();
        let body = minimal(dir.path()).replace("\"seed\": 7,", "");
        let path = write_config(dir.path(), &body);
        let e = PipelineConfig::load(&path, None, None).unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn embedder_and_precomputed_are_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "emb.csv");
        let body = minimal(dir.path()).replace(
            "\"embedder\": { \"k\": 5 }",
            "\"embedder\": { \"k\": 5 }, \"precomputed\": { \"path\": \"emb.csv\" }",
        );
        let path = write_config(dir.path(), &body);
        let e = PipelineConfig::load(&path, None, None).unwrap_err();
        assert!(e.to_string().contains("mutually exclusive"), "{e}");

        let body = minimal(dir.path()).replace(",\n  \"embedder\": { \"k\": 5 }", "");
        let path = write_config(dir.path(), &body);
        assert!(PipelineConfig::load(&path, None, None).is_err());
    }

    #[test]
    fn missing_paths_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let body = minimal(dir.path()).replace("data.csv", "absent.csv");
        let path = write_config(dir.path(), &body);
        let e = PipelineConfig::load(&path, None, None).unwrap_err();
        assert!(e.to_string().contains("absent.csv"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn statistics_set_requires_targets() {
        let dir = tempfile::tempdir().unwrap();
        let stats = touch(dir.path(), "stats.csv");
        let body = minimal(dir.path()).replace(
            "} }",
            &format!("}}, \"statistics\": {{ \"features\": \"{stats}\" }} }}"),
        );
        let path = write_config(dir.path(), &body);
        let e = PipelineConfig::load(&path, None, None).unwrap_err();
        assert!(e.to_string().contains("targets"), "{e}");
    }

    #[test]
    fn single_dataset_mode_needs_split_and_excludes_roles() {
        let dir = tempfile::tempdir().unwrap();
        let features = touch(dir.path(), "all.csv");
        let body = format!(
            r#"{{
  "seed": 1,
  "output_dir": "out",
  "data": {{ "dataset": {{ "features": "{features}" }} }},
  "embedder": {{}}
}}"#
        );
        let path = write_config(dir.path(), &body);
        let e = PipelineConfig::load(&path, None, None).unwrap_err();
        assert!(e.to_string().contains("split"), "{e}");

        let body = body.replace(
            "} },",
            "} , \"split\": { \"embedding_fraction\": 0.8 } },",
        );
        let path = write_config(dir.path(), &body);
        let resolved = PipelineConfig::load(&path, None, None).unwrap();
        assert_eq!(
            resolved.config.active_splits(),
            [SPLIT_EMBEDDING, SPLIT_STATISTICS, SPLIT_PREDICTION]
        );
        assert!(resolved.config.dataset_for(SPLIT_STATISTICS).is_some());
    }

    #[test]
    fn override_precedence_is_cli_env_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &minimal(dir.path()));
        // CLI beats everything.
        let r =
            PipelineConfig::load(&path, Some(PathBuf::from("/cli")), Some(3)).unwrap();
        assert_eq!(r.output_dir, PathBuf::from("/cli"));
        assert_eq!(r.config.threads, Some(3));
        // File value stands when no override is given (env not set here).
        let r = PipelineConfig::load(&path, None, None).unwrap();
        assert_eq!(r.output_dir, dir.path().join("out"));
        assert_eq!(r.config.threads, None);
    }

    #[test]
    fn target_options_must_be_complete() {
        let dir = tempfile::tempdir().unwrap();
        let labels = touch(dir.path(), "labels.csv");
        let body = minimal(dir.path()).replace(
            "\"features\": \"data.csv\"",
            &format!("\"features\": \"data.csv\", \"targets\": \"{labels}\""),
        );
        let path = write_config(dir.path(), &body);
        let e = PipelineConfig::load(&path, None, None).unwrap_err();
        assert!(e.to_string().contains("target_column"), "{e}");
    }

    #[test]
    fn config_echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &minimal(dir.path()));
        let resolved = PipelineConfig::load(&path, None, None).unwrap();
        let json = serde_json::to_string_pretty(&resolved.config).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.seed, resolved.config.seed);
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&resolved.config).unwrap());
    }
}

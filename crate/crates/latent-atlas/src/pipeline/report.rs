//! The run report: a single JSON summary assembled from whatever artifacts
//! exist on disk, plus the pipeline orchestrator that produces them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::artifacts::{read_json, write_json, MatrixMeta, RunLayout};
use super::config::{ResolvedConfig, SPLIT_EMBEDDING, SPLIT_PREDICTION, SPLIT_STATISTICS};
use super::stages::{
    self, sanitize_target, training_split, MapArtifact, MapOptions, MetricsArtifact,
    ProfileArtifact, TargetData, TrainingMeta,
};
use crate::dls::DiscreteLatentSpace;
use crate::embedder;
use crate::error::{Error, Result};
use crate::render::{self, PointColor};

pub const REPORT_FORMAT: &str = "latent-atlas-report";
pub const REPORT_VERSION: u32 = 1;

/// Canonical stage order. `transform`, `map`, `profile`, `train`, and
/// `predict` are skipped when the active splits or targets don't call
/// for them.
pub const STAGES: [&str; 9] =
    ["ingest", "embed", "transform", "dls", "map", "profile", "train", "predict", "report"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub stages_completed: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Wall-clock stage durations — the one run-dependent field.
    pub timings_ms: BTreeMap<String, u128>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<BTreeMap<String, SplitSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dls: Option<DlsSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maps: Vec<MapSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profiles: Vec<ProfileSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSummary {
    pub n_obs: usize,
    pub n_features: usize,
    pub dropped_rows: usize,
    pub has_targets: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DlsSummary {
    pub r: u32,
    pub d: usize,
    pub occupied_pixels: usize,
    pub realized_overlap: f64,
    pub resolution_warning: bool,
    /// Statistics-split occupancy of the same grid, when assigned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistics_occupied: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistics_clamped: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSummary {
    pub target: String,
    pub method: crate::statmap::CorrMethod,
    pub sigma: f64,
    pub defined_pixels: usize,
    pub positive_clusters: usize,
    pub negative_clusters: usize,
    pub dropped_components: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub target: String,
    pub clusters: Vec<ClusterEffectSummary>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterEffectSummary {
    pub cluster_id: u32,
    pub n_in: usize,
    pub n_out: usize,
    pub sufficient_effect: bool,
    /// Strongest feature by effect size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_feature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_r: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub trained_on: String,
    pub task: crate::predictor::Task,
    pub n_train: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_predicted: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsArtifact>,
}

/// Which stages this configuration calls for, in execution order.
pub fn plan(rc: &ResolvedConfig) -> Vec<&'static str> {
    let splits = rc.config.active_splits();
    let has_statistics_targets = splits.contains(&SPLIT_STATISTICS)
        && rc
            .config
            .dataset_for(SPLIT_STATISTICS)
            .map(|d| d.has_targets())
            .unwrap_or(false);
    let trainable = training_split(rc).is_some();
    let mut plan = vec!["ingest", "embed"];
    if splits.len() > 1 {
        plan.push("transform");
    }
    plan.push("dls");
    if has_statistics_targets {
        plan.push("map");
        plan.push("profile");
    }
    if trainable {
        plan.push("train");
        if splits.contains(&SPLIT_PREDICTION) {
            plan.push("predict");
        }
    }
    plan.push("report");
    plan
}

/// Run one named stage (the default pipeline behavior; the CLI passes
/// target/method options to `map` and `profile` separately).
pub fn run_named_stage(rc: &ResolvedConfig, layout: &RunLayout, name: &'static str) -> Result<()> {
    stages::run_stage(layout, name, || match name {
        "ingest" => stages::ingest(rc, layout),
        "embed" => stages::embed(rc, layout),
        "transform" => stages::transform(rc, layout),
        "dls" => stages::dls(rc, layout),
        "map" => stages::map(rc, layout, &MapOptions::default()),
        "profile" => stages::profile(rc, layout, None),
        "train" => stages::train(rc, layout),
        "predict" => stages::predict(rc, layout),
        "report" => report_stage(rc, layout),
        other => Err(Error::Invalid(format!("unknown stage `{other}`"))),
    })
}

/// Run the full pipeline. On a stage failure a partial report (with
/// `failed_stage` and `error` set) is still written before returning.
pub fn run_pipeline(rc: &ResolvedConfig) -> Result<RunReport> {
    let layout = RunLayout::new(&rc.output_dir);
    for stage in plan(rc) {
        if let Err(e) = run_named_stage(rc, &layout, stage) {
            let mut report = assemble(rc, &layout);
            report.failed_stage = Some(stage.to_owned());
            report.error = Some(e.to_string());
            let _ = write_json(&layout.report(), &report);
            return Err(e);
        }
    }
    read_json(&layout.report())
}

/// The terminal stage: render the embedding scatter and write the report.
pub fn report_stage(rc: &ResolvedConfig, layout: &RunLayout) -> Result<()> {
    render_embedding_scatter(layout)?;
    let mut report = assemble(rc, layout);
    // The report cannot time itself; record it as completed regardless.
    if !report.stages_completed.iter().any(|s| s == "report") {
        report.stages_completed.push("report".to_owned());
    }
    write_json(&layout.report(), &report)
}

/// Scatter of the embedding split colored by its target (when 2-D).
fn render_embedding_scatter(layout: &RunLayout) -> Result<()> {
    let path = layout.embedding(SPLIT_EMBEDDING);
    if !path.is_file() {
        return Ok(());
    }
    let embedding = embedder::load_precomputed(&path, "id")?;
    if embedding.n_components != 2 {
        return Ok(());
    }
    let targets: Option<TargetData> = {
        let path = layout.targets(SPLIT_EMBEDDING);
        if path.is_file() {
            Some(read_json(&path)?)
        } else {
            None
        }
    };
    let svg = match &targets {
        Some(TargetData::Categorical { labels, .. }) => {
            render::embedding_svg(&embedding, &PointColor::Categorical(labels), None)?
        }
        Some(TargetData::Binary { name, values, .. }) => {
            let labels: Vec<String> = values
                .iter()
                .map(|&v| if v == 1.0 { name.clone() } else { "rest".into() })
                .collect();
            render::embedding_svg(&embedding, &PointColor::Categorical(&labels), None)?
        }
        Some(TargetData::Continuous { values, .. }) => {
            render::embedding_svg(&embedding, &PointColor::Continuous(values), None)?
        }
        None => render::embedding_svg(&embedding, &PointColor::None, None)?,
    };
    super::artifacts::write_atomic(&layout.embedding_svg(), svg.as_bytes())
}

fn try_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Option<T> {
    if path.is_file() {
        read_json(path).ok()
    } else {
        None
    }
}

/// Build a report from whatever artifacts exist; tolerant of gaps so it
/// can describe partial (failed) runs too.
pub fn assemble(rc: &ResolvedConfig, layout: &RunLayout) -> RunReport {
    let mut warnings = Vec::new();

    let mut stages_completed = Vec::new();
    let mut timings_ms = BTreeMap::new();
    for stage in STAGES {
        let path = layout.timing(stage);
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(ms) = text.trim().parse::<u128>() {
                stages_completed.push(stage.to_owned());
                timings_ms.insert(stage.to_owned(), ms);
            }
        }
    }

    let mut data: BTreeMap<String, SplitSummary> = BTreeMap::new();
    for split in rc.config.active_splits() {
        let (_, meta_path) = layout.split_data(split);
        if let Some(meta) = try_json::<MatrixMeta>(&meta_path) {
            let dropped = meta.dropped_rows.len();
            if dropped > 0 {
                warnings.push(format!(
                    "{split}: dropped {dropped} observation(s) with non-finite values"
                ));
            }
            data.insert(
                split.to_owned(),
                SplitSummary {
                    n_obs: meta.n_obs,
                    n_features: meta.n_features,
                    dropped_rows: dropped,
                    has_targets: layout.targets(split).is_file(),
                },
            );
        }
    }

    let space: Option<DiscreteLatentSpace> = try_json(&layout.dls());
    let stats_space: Option<DiscreteLatentSpace> = try_json(&layout.dls_statistics());
    let dls = space.as_ref().map(|s| {
        if s.resolution_warning {
            warnings.push(format!(
                "resolution search stopped at r_max = {}; realized overlap {:.4} misses the {:.4} target",
                s.r, s.realized_overlap, s.overlap_target
            ));
        }
        if s.clamp_warnings > 0 {
            warnings.push(format!(
                "{} embedding point(s) were clamped to the grid extent",
                s.clamp_warnings
            ));
        }
        if let Some(stats) = &stats_space {
            if stats.clamp_warnings > 0 {
                warnings.push(format!(
                    "{} statistics point(s) fell outside the embedding extent and were clamped",
                    stats.clamp_warnings
                ));
            }
        }
        if s.d != 2 {
            warnings.push(format!(
                "latent space is {}-dimensional; PGM/SVG rasters were skipped",
                s.d
            ));
        }
        DlsSummary {
            r: s.r,
            d: s.d,
            occupied_pixels: s.occupied.len(),
            realized_overlap: s.realized_overlap,
            resolution_warning: s.resolution_warning,
            statistics_occupied: stats_space.as_ref().map(|t| t.occupied.len()),
            statistics_clamped: stats_space.as_ref().map(|t| t.clamp_warnings),
        }
    });

    // Map + profile summaries keyed by the statistics targets.
    let mut maps = Vec::new();
    let mut profiles = Vec::new();
    if let Some(targets) = try_json::<TargetData>(&layout.targets(SPLIT_STATISTICS)) {
        if let Ok(variables) = targets.map_targets() {
            for variable in &variables {
                let file = sanitize_target(&variable.name);
                if let Some(map) = try_json::<MapArtifact>(&layout.clusters(&file)) {
                    maps.push(MapSummary {
                        target: map.target.clone(),
                        method: map.method,
                        sigma: map.sigma,
                        defined_pixels: map.defined_pixels,
                        positive_clusters: map
                            .clusters
                            .clusters
                            .iter()
                            .filter(|c| c.sign == crate::statmap::Sign::Positive)
                            .count(),
                        negative_clusters: map
                            .clusters
                            .clusters
                            .iter()
                            .filter(|c| c.sign == crate::statmap::Sign::Negative)
                            .count(),
                        dropped_components: map.clusters.dropped.len(),
                    });
                }
                if let Some(profile) = try_json::<ProfileArtifact>(&layout.profile_json(&file)) {
                    for skip in &profile.skipped {
                        warnings.push(format!(
                            "target `{}` cluster {}: profile skipped ({})",
                            profile.target, skip.cluster_id, skip.reason
                        ));
                    }
                    for p in &profile.profiles {
                        if !p.sufficient_effect {
                            warnings.push(format!(
                                "target `{}` cluster {}: no feature reaches a medium effect size",
                                profile.target, p.cluster_id
                            ));
                        }
                    }
                    profiles.push(ProfileSummary {
                        target: profile.target.clone(),
                        skipped: profile.skipped.len(),
                        clusters: profile
                            .profiles
                            .iter()
                            .map(|p| {
                                let top = p
                                    .effects
                                    .iter()
                                    .max_by(|a, b| a.r.total_cmp(&b.r));
                                ClusterEffectSummary {
                                    cluster_id: p.cluster_id,
                                    n_in: p.n_in,
                                    n_out: p.n_out,
                                    sufficient_effect: p.sufficient_effect,
                                    top_feature: top.map(|e| e.feature_name.clone()),
                                    top_r: top.map(|e| e.r),
                                }
                            })
                            .collect(),
                    });
                }
            }
        }
    }
    if !maps.is_empty() {
        warnings.push(
            "p-values are not corrected for multiple comparisons; treat per-feature \
             significance as exploratory"
                .to_owned(),
        );
    }

    let prediction = try_json::<TrainingMeta>(&layout.training_meta()).map(|meta| {
        let n_predicted = if layout.predictions_csv().is_file() {
            std::fs::read_to_string(layout.predictions_csv())
                .ok()
                .map(|text| text.lines().count().saturating_sub(1))
        } else {
            None
        };
        PredictionSummary {
            trained_on: meta.split,
            task: meta.task,
            n_train: meta.n_train,
            n_predicted,
            metrics: try_json(&layout.metrics()),
        }
    });
    if training_split(rc).is_none() {
        warnings.push("predictor skipped: no split has targets".to_owned());
    } else if !rc.config.active_splits().contains(&SPLIT_PREDICTION) {
        warnings.push("prediction skipped: no prediction split".to_owned());
    }

    RunReport {
        format: REPORT_FORMAT.to_owned(),
        version: REPORT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: rc.config.seed,
        stages_completed,
        failed_stage: None,
        error: None,
        timings_ms,
        warnings,
        data: if data.is_empty() { None } else { Some(data) },
        dls,
        maps,
        profiles,
        prediction,
    }
}

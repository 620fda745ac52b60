//! The pipeline stages. Every stage reads its inputs from and writes its
//! outputs to the run directory, so a monolithic `run` and stage-by-stage
//! invocation produce byte-identical artifacts by construction.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::artifacts::{
    read_json, read_matrix_f64, write_atomic, write_json, write_matrix_f64, RunLayout,
};
use super::config::{
    DatasetConfig, ResolvedConfig, TargetKindConfig, SPLIT_EMBEDDING, SPLIT_PREDICTION,
    SPLIT_STATISTICS,
};
use crate::dataio::{
    binarize_target, load_feature_csv, load_tensor_dataset, scale_apply, scale_fit,
    FeatureMatrix, LoadOptions, ScalingParams, TargetKind, TargetVariable,
};
use crate::dls::{linear_index, DiscreteLatentSpace, DlsParams};
use crate::embedder::{self, Embedding};
use crate::error::{Error, Result};
use crate::predictor::{self, ForestParams, Predictions, Task};
use crate::profiler::{cluster_profile, profiles_to_csv, EffectSizeProfile};
use crate::render::{self, PointColor};
use crate::seed;
use crate::statmap::{correlation_map, default_sigma, extract_clusters, ClusterSet, CorrMethod};

/// Time a stage body and persist its wall-clock milliseconds — the single
/// artifact class that may differ between reruns.
pub fn run_stage<F: FnOnce() -> Result<()>>(
    layout: &RunLayout,
    stage: &'static str,
    f: F,
) -> Result<()> {
    let start = std::time::Instant::now();
    f().map_err(|e| e.in_stage(stage))?;
    let ms = start.elapsed().as_millis();
    write_atomic(&layout.timing(stage), format!("{ms}\n").as_bytes())
}

/// Missing prior-stage artifact: tell the user which command to run.
fn require<'a>(path: &'a Path, prior: &str) -> Result<&'a Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Invalid(format!(
            "`{}` not found; run {prior} first",
            path.display()
        )))
    }
}

/// Target values attached to a split, persisted at ingest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetData {
    Categorical { name: String, obs_ids: Vec<String>, labels: Vec<String> },
    Binary { name: String, obs_ids: Vec<String>, values: Vec<f64> },
    Continuous { name: String, obs_ids: Vec<String>, values: Vec<f64> },
}

impl TargetData {
    pub fn name(&self) -> &str {
        match self {
            TargetData::Categorical { name, .. }
            | TargetData::Binary { name, .. }
            | TargetData::Continuous { name, .. } => name,
        }
    }

    /// Statistical targets for the map stage: one-vs-rest per label for
    /// categorical data, the variable itself otherwise.
    pub fn map_targets(&self) -> Result<Vec<TargetVariable>> {
        match self {
            TargetData::Categorical { obs_ids, labels, .. } => binarize_target(obs_ids, labels),
            TargetData::Binary { name, obs_ids, values } => Ok(vec![TargetVariable::new(
                name.clone(),
                TargetKind::Binary,
                values.clone(),
                obs_ids.clone(),
            )?]),
            TargetData::Continuous { name, obs_ids, values } => Ok(vec![TargetVariable::new(
                name.clone(),
                TargetKind::Continuous,
                values.clone(),
                obs_ids.clone(),
            )?]),
        }
    }

    pub fn default_method(&self) -> CorrMethod {
        match self {
            TargetData::Continuous { .. } => CorrMethod::Pearson,
            _ => CorrMethod::PointBiserial,
        }
    }

    fn default_task(&self) -> Task {
        match self {
            TargetData::Continuous { .. } => Task::Regression,
            _ => Task::Classification,
        }
    }

    /// Training vector: categorical labels become indices into the sorted
    /// distinct vocabulary (returned alongside); numeric kinds pass through.
    fn training_values(&self) -> Result<(Vec<f64>, Option<Vec<String>>)> {
        match self {
            TargetData::Categorical { labels, .. } => {
                let vocabulary: Vec<String> = {
                    let set: BTreeSet<&String> = labels.iter().collect();
                    set.into_iter().cloned().collect()
                };
                let y = labels
                    .iter()
                    .map(|l| {
                        vocabulary.binary_search(l).expect("label in vocabulary") as f64
                    })
                    .collect();
                Ok((y, Some(vocabulary)))
            }
            TargetData::Binary { values, .. } | TargetData::Continuous { values, .. } => {
                Ok((values.clone(), None))
            }
        }
    }

    /// Truth vector against a training vocabulary (categorical only);
    /// labels unseen in training cannot be scored and are an error.
    fn truth_values(&self, vocabulary: Option<&[String]>) -> Result<Vec<f64>> {
        match (self, vocabulary) {
            (TargetData::Categorical { labels, .. }, Some(vocab)) => labels
                .iter()
                .map(|l| {
                    vocab
                        .binary_search(l)
                        .map(|i| i as f64)
                        .map_err(|_| {
                            Error::Data(format!(
                                "label `{l}` in the prediction targets never appeared in training"
                            ))
                        })
                })
                .collect(),
            (TargetData::Categorical { .. }, None) => Err(Error::Data(
                "categorical prediction targets against a non-categorical model".into(),
            )),
            (TargetData::Binary { values, .. }, _)
            | (TargetData::Continuous { values, .. }, _) => Ok(values.clone()),
        }
    }
}

/// File-system-safe name for a target: anything outside [A-Za-z0-9._-]
/// becomes `_`.
pub fn sanitize_target(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || ".-_".contains(c) { c } else { '_' })
        .collect();
    if safe.is_empty() {
        "_".into()
    } else {
        safe
    }
}

fn load_split_matrix(layout: &RunLayout, split: &str) -> Result<(FeatureMatrix, Vec<String>)> {
    let (data, meta) = layout.split_data(split);
    require(&data, "ingest")?;
    require(&meta, "ingest")?;
    let (matrix, info) = read_matrix_f64(&data, &meta)?;
    Ok((matrix, info.dropped_rows))
}

fn load_split_embedding(layout: &RunLayout, split: &str) -> Result<Embedding> {
    let path = layout.embedding(split);
    let prior = if split == SPLIT_EMBEDDING { "embed" } else { "transform" };
    require(&path, prior)?;
    embedder::load_precomputed(&path, "id")
}

fn load_split_targets(layout: &RunLayout, split: &str) -> Result<Option<TargetData>> {
    let path = layout.targets(split);
    if path.is_file() {
        Ok(Some(read_json(&path)?))
    } else {
        Ok(None)
    }
}

/// Which split trains the predictor: the embedding set when it has
/// targets (its points were embedded directly), otherwise the statistics
/// set. `None` when no split has targets.
pub fn training_split(rc: &ResolvedConfig) -> Option<&'static str> {
    let has = |role: &str| {
        rc.config.dataset_for(role).map(DatasetConfig::has_targets).unwrap_or(false)
    };
    if has(SPLIT_EMBEDDING) {
        Some(SPLIT_EMBEDDING)
    } else if rc.config.active_splits().contains(&SPLIT_STATISTICS) && has(SPLIT_STATISTICS) {
        Some(SPLIT_STATISTICS)
    } else {
        None
    }
}

// ---------------------------------------------------------------- ingest

/// Load every dataset, split if in single-dataset mode, fit scaling on the
/// embedding set, and persist scaled matrices + targets.
pub fn ingest(rc: &ResolvedConfig, layout: &RunLayout) -> Result<()> {
    write_json(&layout.config(), &rc.config)?;

    let opts = LoadOptions {
        non_finite: rc.config.data.non_finite,
        exclude_features: rc.config.data.exclude_features.clone(),
        tensor_shape: rc.config.data.tensor_shape.clone(),
    };
    let id_column = &rc.config.data.id_column;

    // (split name, matrix, dropped rows, dataset description).
    let mut splits: Vec<(&'static str, FeatureMatrix, Vec<String>, &DatasetConfig)> = Vec::new();
    if let Some(dataset) = &rc.config.data.dataset {
        let (full, report) = load_dataset(rc, dataset, id_column, &opts)?;
        let fraction = rc.config.data.split.expect("validated").embedding_fraction;
        let (embed_rows, rest_rows) = seeded_split(full.n_obs(), fraction, rc.config.seed);
        if embed_rows.is_empty() {
            return Err(Error::Data(format!(
                "embedding fraction {fraction} leaves an empty embedding set for {} observations",
                full.n_obs()
            )));
        }
        splits.push((SPLIT_EMBEDDING, full.select_rows(&embed_rows)?, report.clone(), dataset));
        if !rest_rows.is_empty() {
            let rest = full.select_rows(&rest_rows)?;
            splits.push((SPLIT_STATISTICS, rest.clone(), Vec::new(), dataset));
            splits.push((SPLIT_PREDICTION, rest, Vec::new(), dataset));
        }
    } else {
        for role in rc.config.active_splits() {
            let dataset = rc.config.dataset_for(role).expect("active role");
            let (matrix, dropped) = load_dataset(rc, dataset, id_column, &opts)?;
            splits.push((role, matrix, dropped, dataset));
        }
    }

    let embedding_matrix = &splits.first().expect("embedding split").1;
    let scaling = scale_fit(embedding_matrix)?;
    write_json(&layout.scaling(), &scaling)?;

    for (role, matrix, dropped, dataset) in &splits {
        let scaled = scale_apply(&scaling, matrix)?;
        let (data_path, meta_path) = layout.split_data(role);
        write_matrix_f64(&data_path, &meta_path, &scaled, dropped)?;
        if dataset.has_targets() {
            let targets = load_targets(rc, dataset, id_column, matrix.obs_ids())?;
            write_json(&layout.targets(role), &targets)?;
        }
    }
    Ok(())
}

fn load_dataset(
    rc: &ResolvedConfig,
    dataset: &DatasetConfig,
    id_column: &str,
    opts: &LoadOptions,
) -> Result<(FeatureMatrix, Vec<String>)> {
    let (matrix, report) = if let Some(features) = &dataset.features {
        load_feature_csv(&rc.path(features), id_column, opts)?
    } else {
        let data = dataset.tensor_data.as_ref().expect("validated");
        let sidecar = dataset.tensor_sidecar.as_ref().expect("validated");
        load_tensor_dataset(&rc.path(data), &rc.path(sidecar), opts)?
    };
    Ok((matrix, report.dropped_rows))
}

/// Read a target CSV and align it with a split's observations by id.
fn load_targets(
    rc: &ResolvedConfig,
    dataset: &DatasetConfig,
    id_column: &str,
    obs_ids: &[String],
) -> Result<TargetData> {
    let path = rc.path(dataset.targets.as_ref().expect("has targets"));
    let column = dataset.target_column.as_ref().expect("validated");
    let kind = dataset.target_kind.expect("validated");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!("{}: column `{name}` not found", path.display()))
        })
    };
    let id_idx = find(id_column)?;
    let value_idx = find(column)?;
    let mut by_id: HashMap<String, String> = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), row + 1)))?;
        let id = record.get(id_idx).unwrap_or("").to_owned();
        if by_id.insert(id.clone(), record.get(value_idx).unwrap_or("").to_owned()).is_some() {
            return Err(Error::Data(format!(
                "{}: duplicate target row for id `{id}`",
                path.display()
            )));
        }
    }
    let raw: Vec<String> = obs_ids
        .iter()
        .map(|id| {
            by_id.get(id).cloned().ok_or_else(|| {
                Error::Data(format!("{}: no target value for id `{id}`", path.display()))
            })
        })
        .collect::<Result<_>>()?;

    let parse_numeric = |raw: &[String]| -> Result<Vec<f64>> {
        raw.iter()
            .zip(obs_ids)
            .map(|(cell, id)| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "{}: cannot parse target `{cell}` for id `{id}`",
                        path.display()
                    ))
                })
            })
            .collect()
    };
    let name = column.clone();
    let obs_ids = obs_ids.to_vec();
    match kind {
        TargetKindConfig::Categorical => {
            Ok(TargetData::Categorical { name, obs_ids, labels: raw })
        }
        TargetKindConfig::Binary => {
            let values = parse_numeric(&raw)?;
            // Validation (0/1 only) happens in the domain type.
            TargetVariable::new(name.clone(), TargetKind::Binary, values.clone(), obs_ids.clone())?;
            Ok(TargetData::Binary { name, obs_ids, values })
        }
        TargetKindConfig::Continuous => {
            let values = parse_numeric(&raw)?;
            TargetVariable::new(
                name.clone(),
                TargetKind::Continuous,
                values.clone(),
                obs_ids.clone(),
            )?;
            Ok(TargetData::Continuous { name, obs_ids, values })
        }
    }
}

/// Seeded split: shuffle indices, take `floor(fraction * n)` for the
/// embedding set, and restore original order within each side.
fn seeded_split(n: usize, fraction: f64, master_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = seed::stream(master_seed, "split", &[]);
    indices.shuffle(&mut rng);
    let n_embed = ((fraction * n as f64).floor() as usize).min(n);
    let mut embed: Vec<usize> = indices[..n_embed].to_vec();
    let mut rest: Vec<usize> = indices[n_embed..].to_vec();
    embed.sort_unstable();
    rest.sort_unstable();
    (embed, rest)
}

// ----------------------------------------------------------------- embed

/// Fit the embedder on the embedding split (or ingest precomputed
/// coordinates) and persist the embedding-set coordinates.
pub fn embed(rc: &ResolvedConfig, layout: &RunLayout) -> Result<()> {
    let (x, _) = load_split_matrix(layout, SPLIT_EMBEDDING)?;
    let embedding = if let Some(params) = &rc.config.embedder {
        let model = embedder::fit(&x, params, rc.config.seed)?;
        let scaling: ScalingParams = read_json(&layout.scaling())?;
        embedder::save_model(&model, &scaling, &layout.embedder_model())?;
        model.embedding
    } else {
        select_precomputed(rc, x.obs_ids())?
    };
    write_atomic(&layout.embedding(SPLIT_EMBEDDING), embedding.to_csv().as_bytes())
}

/// Rows of the user-provided coordinate CSV for the given ids, in order.
fn select_precomputed(rc: &ResolvedConfig, obs_ids: &[String]) -> Result<Embedding> {
    let pre = rc.config.precomputed.as_ref().expect("precomputed mode");
    let id_column = pre.id_column.as_deref().unwrap_or(&rc.config.data.id_column);
    let full = embedder::load_precomputed(&rc.path(&pre.path), id_column)?;
    let row_of: HashMap<&String, usize> =
        full.obs_ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut coords = Vec::with_capacity(obs_ids.len() * full.n_components);
    for id in obs_ids {
        let &row = row_of.get(id).ok_or_else(|| {
            Error::Data(format!(
                "precomputed embedding `{}` has no row for id `{id}`",
                rc.path(&pre.path).display()
            ))
        })?;
        coords.extend_from_slice(full.row(row));
    }
    Embedding::new(full.n_components, obs_ids.to_vec(), coords)
}

// ------------------------------------------------------------- transform

/// Project the statistics and prediction splits into the fitted space.
pub fn transform(rc: &ResolvedConfig, layout: &RunLayout) -> Result<()> {
    let splits: Vec<&str> =
        rc.config.active_splits().into_iter().filter(|s| *s != SPLIT_EMBEDDING).collect();
    if splits.is_empty() {
        return Ok(());
    }
    if rc.config.embedder.is_some() {
        let model_path = layout.embedder_model();
        require(&model_path, "embed")?;
        let model = embedder::load_model(&model_path)?;
        for split in splits {
            let (x, _) = load_split_matrix(layout, split)?;
            let embedding = embedder::transform(&model.model, &x)?;
            write_atomic(&layout.embedding(split), embedding.to_csv().as_bytes())?;
        }
    } else {
        for split in splits {
            let (x, _) = load_split_matrix(layout, split)?;
            let embedding = select_precomputed(rc, x.obs_ids())?;
            write_atomic(&layout.embedding(split), embedding.to_csv().as_bytes())?;
        }
    }
    Ok(())
}

// ------------------------------------------------------------------- dls

/// Discretize the embedding-set coordinates at the auto-found resolution.
pub fn dls(rc: &ResolvedConfig, layout: &RunLayout) -> Result<()> {
    let embedding = load_split_embedding(layout, SPLIT_EMBEDDING)?;
    let params = DlsParams {
        overlap_target: rc.config.dls.overlap_target,
        r_max: rc.config.dls.r_max,
        binning: rc.config.dls.binning,
        fixed_r: rc.config.dls.fixed_r,
    };
    let space = DiscreteLatentSpace::build(
        &embedding.coords,
        embedding.n_obs(),
        embedding.n_components,
        &embedding.obs_ids,
        &params,
    )?;
    write_json(&layout.dls(), &space)?;
    write_atomic(&layout.occupied_csv(), space.occupied_csv().as_bytes())?;
    if space.d == 2 {
        write_atomic(&layout.occupancy_pgm(), &render::occupancy_pgm(&space)?)?;
    }
    Ok(())
}

// ------------------------------------------------------------------- map

#[derive(Debug, Default, Clone)]
pub struct MapOptions {
    /// Restrict to one target by name.
    pub target: Option<String>,
    /// Override the correlation method.
    pub method: Option<CorrMethod>,
}

/// Per-target artifacts of the map stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapArtifact {
    pub target: String,
    pub method: CorrMethod,
    pub sigma: f64,
    pub defined_pixels: usize,
    pub clusters: ClusterSet,
}

/// Correlation maps and cluster extraction for every statistics target.
pub fn map(rc: &ResolvedConfig, layout: &RunLayout, opts: &MapOptions) -> Result<()> {
    let space: DiscreteLatentSpace = {
        let path = layout.dls();
        require(&path, "dls")?;
        read_json(&path)?
    };
    let embedding = load_split_embedding(layout, SPLIT_STATISTICS)?;
    let targets = load_split_targets(layout, SPLIT_STATISTICS)?.ok_or_else(|| {
        Error::Invalid("no statistics targets on disk; run ingest first".into())
    })?;

    // Assign the statistics points into the fitted grid.
    let (point_pixels, clamped) = space.assign(&embedding.coords, embedding.n_obs())?;
    let occupied: Vec<u64> = {
        let set: BTreeSet<u64> = point_pixels
            .chunks_exact(space.d)
            .map(|pixel| linear_index(pixel, space.r))
            .collect();
        set.into_iter().collect()
    };
    let realized_overlap = 1.0 - occupied.len() as f64 / embedding.n_obs() as f64;
    let stats_space = DiscreteLatentSpace {
        r: space.r,
        d: space.d,
        norm: space.norm.clone(),
        binning: space.binning,
        obs_ids: embedding.obs_ids.clone(),
        point_pixels,
        occupied,
        overlap_target: space.overlap_target,
        realized_overlap,
        resolution_warning: false,
        clamp_warnings: clamped,
    };
    write_json(&layout.dls_statistics(), &stats_space)?;

    let sigma = rc.config.statmap.sigma.unwrap_or_else(|| default_sigma(space.r));
    let method =
        opts.method.or(rc.config.statmap.method).unwrap_or_else(|| targets.default_method());
    let variables = targets.map_targets()?;
    check_target_names(&variables)?;
    let selected: Vec<&TargetVariable> = match &opts.target {
        Some(wanted) => {
            let found: Vec<&TargetVariable> =
                variables.iter().filter(|v| &v.name == wanted).collect();
            if found.is_empty() {
                let names: Vec<&str> = variables.iter().map(|v| v.name.as_str()).collect();
                return Err(Error::Invalid(format!(
                    "no target named `{wanted}`; available: {}",
                    names.join(", ")
                )));
            }
            found
        }
        None => variables.iter().collect(),
    };

    for variable in selected {
        let file = sanitize_target(&variable.name);
        let corr = correlation_map(&stats_space, sigma, variable, method)?;
        write_atomic(&layout.stat_map_csv(&file), corr.to_csv().as_bytes())?;
        let clusters = extract_clusters(
            &corr,
            rc.config.statmap.r_min,
            rc.config.statmap.connectivity,
            rc.config.statmap.min_pixels,
        )?;
        let artifact = MapArtifact {
            target: variable.name.clone(),
            method,
            sigma,
            defined_pixels: corr.values.iter().filter(|v| v.is_some()).count(),
            clusters,
        };
        write_json(&layout.clusters(&file), &artifact)?;
        if space.d == 2 {
            write_atomic(&layout.stat_map_pgm(&file), &render::correlation_pgm(&corr)?)?;
            let svg = overlay_svg(&embedding, variable, &stats_space, &artifact.clusters)?;
            write_atomic(&layout.overlay_svg(&file), svg.as_bytes())?;
        }
    }
    Ok(())
}

/// The embedding scatter colored by one target with cluster outlines.
fn overlay_svg(
    embedding: &Embedding,
    variable: &TargetVariable,
    space: &DiscreteLatentSpace,
    clusters: &ClusterSet,
) -> Result<String> {
    match variable.kind {
        TargetKind::Binary => {
            let labels: Vec<String> = variable
                .values
                .iter()
                .map(|&v| if v == 1.0 { variable.name.clone() } else { "rest".into() })
                .collect();
            render::embedding_svg(
                embedding,
                &PointColor::Categorical(&labels),
                Some((space, clusters)),
            )
        }
        TargetKind::Continuous => render::embedding_svg(
            embedding,
            &PointColor::Continuous(&variable.values),
            Some((space, clusters)),
        ),
    }
}

/// Distinct target names must stay distinct after filename sanitization.
fn check_target_names(variables: &[TargetVariable]) -> Result<()> {
    let mut seen: HashMap<String, &str> = HashMap::new();
    for v in variables {
        if let Some(other) = seen.insert(sanitize_target(&v.name), &v.name) {
            return Err(Error::Data(format!(
                "targets `{other}` and `{}` collide after filename sanitization",
                v.name
            )));
        }
    }
    Ok(())
}

// --------------------------------------------------------------- profile

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedCluster {
    pub cluster_id: u32,
    pub reason: String,
}

/// Per-target profile artifact consumed by the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileArtifact {
    pub target: String,
    pub profiles: Vec<EffectSizeProfile>,
    pub skipped: Vec<SkippedCluster>,
}

/// Effect-size profiles for every cluster of every mapped target.
pub fn profile(rc: &ResolvedConfig, layout: &RunLayout, target: Option<&str>) -> Result<()> {
    let stats_space: DiscreteLatentSpace = {
        let path = layout.dls_statistics();
        require(&path, "map")?;
        read_json(&path)?
    };
    let (x, _) = load_split_matrix(layout, SPLIT_STATISTICS)?;
    let targets = load_split_targets(layout, SPLIT_STATISTICS)?.ok_or_else(|| {
        Error::Invalid("no statistics targets on disk; run ingest first".into())
    })?;
    let variables = targets.map_targets()?;
    let names: Vec<String> = variables
        .iter()
        .map(|v| v.name.clone())
        .filter(|n| target.map(|t| t == n).unwrap_or(true))
        .collect();
    if names.is_empty() {
        let all: Vec<&str> = variables.iter().map(|v| v.name.as_str()).collect();
        return Err(Error::Invalid(format!(
            "no target named `{}`; available: {}",
            target.unwrap_or_default(),
            all.join(", ")
        )));
    }

    for name in names {
        let file = sanitize_target(&name);
        let map_artifact: MapArtifact = {
            let path = layout.clusters(&file);
            require(&path, "map")?;
            read_json(&path)?
        };
        let mut profiles = Vec::new();
        let mut skipped = Vec::new();
        for cluster in &map_artifact.clusters.clusters {
            match cluster_profile(cluster, &x, &stats_space, rc.config.profiler.min_members) {
                Ok(p) => profiles.push(p),
                Err(e) => {
                    skipped.push(SkippedCluster { cluster_id: cluster.id, reason: e.to_string() })
                }
            }
        }
        write_atomic(&layout.profile_csv(&file), profiles_to_csv(&profiles).as_bytes())?;
        for p in &profiles {
            if let Some(shape) = &p.tensor_shape {
                let signed = p.signed_r_map();
                let (tensor_path, sidecar_path) = layout.rmap_tensor(&file, p.cluster_id);
                let rmap = FeatureMatrix::new(
                    vec![format!("cluster{}", p.cluster_id)],
                    signed.len(),
                    signed.clone(),
                    None,
                    Some(shape.clone()),
                )?;
                crate::dataio::write_tensor_dataset(&tensor_path, &sidecar_path, &rmap)?;
                if shape.len() == 2 {
                    write_atomic(
                        &layout.rmap_pgm(&file, p.cluster_id),
                        &render::signed_map_pgm(&signed, shape)?,
                    )?;
                }
            }
        }
        write_json(
            &layout.profile_json(&file),
            &ProfileArtifact { target: name, profiles, skipped },
        )?;
    }
    Ok(())
}

// ----------------------------------------------------------------- train

/// What the predictor was trained on; consumed by predict and the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub split: String,
    pub task: Task,
    pub n_train: usize,
    /// Sorted distinct labels for categorical targets; class i in the
    /// model is `vocabulary[i]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
}

/// Train the cross-validated forest ensemble on the embedded coordinates
/// of the training split.
pub fn train(rc: &ResolvedConfig, layout: &RunLayout) -> Result<()> {
    let split = training_split(rc).ok_or_else(|| {
        Error::Invalid("no split has targets to train the predictor on".into())
    })?;
    let embedding = load_split_embedding(layout, split)?;
    let targets = load_split_targets(layout, split)?
        .ok_or_else(|| Error::Invalid(format!("no {split} targets on disk; run ingest first")))?;
    let (y, vocabulary) = targets.training_values()?;
    let task = rc.config.predictor.task.unwrap_or_else(|| targets.default_task());
    let params = ForestParams {
        n_trees: rc.config.predictor.n_trees,
        max_depth: rc.config.predictor.max_depth,
        min_samples_leaf: rc.config.predictor.min_samples_leaf,
        mtry: rc.config.predictor.mtry,
    };
    let ensemble = predictor::train_cv(
        &embedding.coords,
        embedding.n_components,
        &y,
        task,
        &params,
        rc.config.predictor.n_perms,
        rc.config.predictor.k,
        rc.config.seed,
    )?;
    predictor::save_model(&ensemble, &layout.predictor_model())?;
    write_json(
        &layout.training_meta(),
        &TrainingMeta { split: split.into(), task, n_train: embedding.n_obs(), vocabulary },
    )
}

// --------------------------------------------------------------- predict

/// Predict the prediction split and, when it has targets, evaluate.
pub fn predict(_rc: &ResolvedConfig, layout: &RunLayout) -> Result<()> {
    let model_path = layout.predictor_model();
    require(&model_path, "train")?;
    let ensemble = predictor::load_model(&model_path)?;
    let meta: TrainingMeta = read_json(&layout.training_meta())?;
    let embedding = load_split_embedding(layout, SPLIT_PREDICTION)?;
    let predictions =
        predictor::predict(&ensemble, &embedding.coords, embedding.n_obs())?;

    let decode = |value: f64| -> String {
        match &meta.vocabulary {
            Some(vocab) => vocab[value as usize].clone(),
            None => format!("{value}"),
        }
    };
    let mut csv = String::from("id,prediction");
    if let Predictions::Classification { classes, .. } = &predictions {
        for class in classes {
            csv.push_str(&format!(",p_{}", decode(*class)));
        }
    }
    csv.push('\n');
    for (i, id) in embedding.obs_ids.iter().enumerate() {
        csv.push_str(id);
        match &predictions {
            Predictions::Classification { labels, probabilities, .. } => {
                csv.push_str(&format!(",{}", decode(labels[i])));
                for p in &probabilities[i] {
                    csv.push_str(&format!(",{p}"));
                }
            }
            Predictions::Regression { values } => csv.push_str(&format!(",{}", values[i])),
        }
        csv.push('\n');
    }
    write_atomic(&layout.predictions_csv(), csv.as_bytes())?;

    if let Some(targets) = load_split_targets(layout, SPLIT_PREDICTION)? {
        let truth = targets.truth_values(meta.vocabulary.as_deref())?;
        let metrics = predictor::evaluate(predictions.point_values(), &truth, meta.task)?;
        let artifact = MetricsArtifact {
            task: meta.task,
            accuracy: metrics.accuracy,
            classes: metrics
                .confusion_classes
                .as_ref()
                .map(|cs| cs.iter().map(|&c| decode(c)).collect()),
            confusion: metrics.confusion.clone(),
            pearson_r: metrics.pearson_r,
            rmse: metrics.rmse,
        };
        write_json(&layout.metrics(), &artifact)?;
    }
    Ok(())
}

/// Evaluation metrics with class indices decoded back to labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    /// Rows = truth, columns = predicted, indexed by `classes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}

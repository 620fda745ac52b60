//! Discrete latent space: normalize an embedding to the unit cube and bin
//! it into a square pixel grid whose resolution is found automatically
//! from a target overlap fraction.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest grid (cells = R^D) the library will materialize.
pub const MAX_GRID_CELLS: u64 = 1 << 26;

/// Default target for the fraction of observations sharing a pixel.
pub const DEFAULT_OVERLAP_TARGET: f64 = 0.05;

/// Default upper bound for the resolution search.
pub const DEFAULT_R_MAX: u32 = 1024;

/// Per-dimension affine map fitted on the reference embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl NormalizationParams {
    pub fn dims(&self) -> usize {
        self.mins.len()
    }
}

/// Fit the per-dimension (min, max) over `n_obs` rows of `d` coordinates.
/// Constant dimensions are rejected: they cannot be stretched to [0,1].
pub fn normalize_fit(coords: &[f64], n_obs: usize, d: usize) -> Result<NormalizationParams> {
    debug_assert_eq!(coords.len(), n_obs * d);
    if n_obs < 2 {
        return Err(Error::Invalid("normalization needs at least 2 observations".into()));
    }
    let mut mins = vec![f64::INFINITY; d];
    let mut maxs = vec![f64::NEG_INFINITY; d];
    for i in 0..n_obs {
        for j in 0..d {
            let v = coords[i * d + j];
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    if let Some(j) = (0..d).find(|&j| mins[j] == maxs[j]) {
        return Err(Error::Invalid(format!(
            "embedding dimension {j} is constant ({}); cannot normalize",
            mins[j]
        )));
    }
    Ok(NormalizationParams { mins, maxs })
}

/// Apply a fitted map. Coordinates outside the fitted range land outside
/// [0,1]; discretization clamps them later.
pub fn normalize_apply(params: &NormalizationParams, coords: &[f64]) -> Vec<f64> {
    let d = params.dims();
    coords
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let j = idx % d;
            (v - params.mins[j]) / (params.maxs[j] - params.mins[j])
        })
        .collect()
}

/// How a unit-interval coordinate becomes a pixel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinningMode {
    /// `floor(u * R)`, clamped to `R - 1` at `u >= 1` — uniform bin widths.
    #[default]
    Floor,
    /// `floor(u * (R - 1) + 0.5)` — round to the nearest pixel center.
    Nearest,
}

/// Bin one coordinate. The flag reports values outside [0,1], which only
/// projected (out-of-sample) points can produce.
fn bin_coord(u: f64, r: u32, mode: BinningMode) -> (u32, bool) {
    let raw = match mode {
        BinningMode::Floor => (u * r as f64).floor(),
        BinningMode::Nearest => (u * (r - 1) as f64 + 0.5).floor(),
    };
    let clamped = raw.clamp(0.0, (r - 1) as f64) as u32;
    (clamped, !(0.0..=1.0).contains(&u))
}

/// Bin every point at resolution `r`. Returns the flattened `n_obs x d`
/// pixel indices and the number of points with any out-of-range coordinate.
pub fn discretize(
    points01: &[f64],
    n_obs: usize,
    d: usize,
    r: u32,
    mode: BinningMode,
) -> Result<(Vec<u32>, usize)> {
    if r < 2 {
        return Err(Error::Invalid(format!("resolution must be at least 2, got {r}")));
    }
    debug_assert_eq!(points01.len(), n_obs * d);
    let mut pixels = Vec::with_capacity(n_obs * d);
    let mut clamp_warnings = 0usize;
    for i in 0..n_obs {
        let mut out_of_range = false;
        for j in 0..d {
            let (p, clamped) = bin_coord(points01[i * d + j], r, mode);
            out_of_range |= clamped;
            pixels.push(p);
        }
        clamp_warnings += usize::from(out_of_range);
    }
    Ok((pixels, clamp_warnings))
}

/// Row-major-style linear index with dimension 0 fastest.
pub fn linear_index(pixel: &[u32], r: u32) -> u64 {
    pixel.iter().rev().fold(0u64, |acc, &p| acc * r as u64 + p as u64)
}

/// Inverse of [`linear_index`].
pub fn pixel_coords(mut linear: u64, r: u32, d: usize) -> Vec<u32> {
    let mut pixel = Vec::with_capacity(d);
    for _ in 0..d {
        pixel.push((linear % r as u64) as u32);
        linear /= r as u64;
    }
    pixel
}

/// Fraction of observations that share a pixel with an earlier one:
/// `1 - distinct_occupied / n_obs`.
pub fn overlap(points01: &[f64], n_obs: usize, d: usize, r: u32, mode: BinningMode) -> Result<f64> {
    let (pixels, _) = discretize(points01, n_obs, d, r, mode)?;
    let distinct: HashSet<u64> =
        (0..n_obs).map(|i| linear_index(&pixels[i * d..(i + 1) * d], r)).collect();
    Ok(1.0 - distinct.len() as f64 / n_obs as f64)
}

/// Find the smallest resolution in `[2, r_max]` whose overlap does not
/// exceed the target.
///
/// Overlap is non-increasing in R on average but not strictly, so the
/// binary-search candidate is confirmed by a linear scan over the
/// resolutions below it; the returned R is therefore the true minimum.
/// When no resolution satisfies the target (duplicate points, say), the
/// result is `(r_max, true)`.
pub fn find_resolution(
    points01: &[f64],
    n_obs: usize,
    d: usize,
    overlap_target: f64,
    r_max: u32,
    mode: BinningMode,
) -> Result<(u32, bool)> {
    if n_obs < 2 {
        return Err(Error::Invalid("resolution search needs at least 2 observations".into()));
    }
    if !(0.0..1.0).contains(&overlap_target) {
        return Err(Error::Invalid(format!(
            "overlap target must lie in [0, 1), got {overlap_target}"
        )));
    }
    if r_max < 2 {
        return Err(Error::Invalid(format!("r_max must be at least 2, got {r_max}")));
    }
    let ok = |r: u32| -> Result<bool> {
        Ok(overlap(points01, n_obs, d, r, mode)? <= overlap_target)
    };

    // Binary search assuming monotonicity to get a cheap upper bound.
    let mut candidate = None;
    if ok(r_max)? {
        let (mut lo, mut hi) = (2u32, r_max);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if ok(mid)? {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        candidate = Some(lo);
    }

    // Confirm against non-monotone overlap: the first satisfying R below
    // the candidate (or anywhere, if the search found none) wins.
    let scan_end = candidate.unwrap_or(r_max);
    for r in 2..=scan_end {
        if ok(r)? {
            return Ok((r, false));
        }
    }
    Ok((r_max, true))
}

/// A fitted discrete latent space: the normalization map, the resolution,
/// the per-observation pixel assignment, and the occupancy of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLatentSpace {
    pub r: u32,
    pub d: usize,
    pub norm: NormalizationParams,
    pub binning: BinningMode,
    pub obs_ids: Vec<String>,
    /// Flattened `n_obs x d` pixel indices.
    pub point_pixels: Vec<u32>,
    /// Sorted distinct linear indices of occupied pixels.
    pub occupied: Vec<u64>,
    pub overlap_target: f64,
    pub realized_overlap: f64,
    /// Set when no resolution satisfied the target and `r == r_max`.
    pub resolution_warning: bool,
    /// Points whose coordinates fell outside [0,1] and were clamped.
    pub clamp_warnings: usize,
}

/// Settings for building a [`DiscreteLatentSpace`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DlsParams {
    pub overlap_target: f64,
    pub r_max: u32,
    pub binning: BinningMode,
    /// Pin the resolution instead of searching for it.
    pub fixed_r: Option<u32>,
}

impl Default for DlsParams {
    fn default() -> Self {
        DlsParams {
            overlap_target: DEFAULT_OVERLAP_TARGET,
            r_max: DEFAULT_R_MAX,
            binning: BinningMode::default(),
            fixed_r: None,
        }
    }
}

fn check_grid_size(r: u32, d: usize) -> Result<()> {
    let mut cells = 1u64;
    for _ in 0..d {
        cells = cells
            .checked_mul(r as u64)
            .filter(|&c| c <= MAX_GRID_CELLS)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "grid {r}^{d} exceeds the {MAX_GRID_CELLS}-cell memory guard"
                ))
            })?;
    }
    Ok(())
}

impl DiscreteLatentSpace {
    /// Normalize `coords` (`n_obs x d`, row-major), pick a resolution, and
    /// bin every observation.
    pub fn build(
        coords: &[f64],
        n_obs: usize,
        d: usize,
        obs_ids: &[String],
        params: &DlsParams,
    ) -> Result<DiscreteLatentSpace> {
        if obs_ids.len() != n_obs {
            return Err(Error::Invalid(format!(
                "{} ids for {n_obs} observations",
                obs_ids.len()
            )));
        }
        let norm = normalize_fit(coords, n_obs, d)?;
        let points01 = normalize_apply(&norm, coords);
        let (r, warning) = match params.fixed_r {
            Some(r) => (r, false),
            None => find_resolution(
                &points01,
                n_obs,
                d,
                params.overlap_target,
                params.r_max,
                params.binning,
            )?,
        };
        check_grid_size(r, d)?;
        let (point_pixels, clamp_warnings) = discretize(&points01, n_obs, d, r, params.binning)?;
        debug_assert_eq!(clamp_warnings, 0, "training points stay inside the unit cube");
        let mut occupied: Vec<u64> =
            (0..n_obs).map(|i| linear_index(&point_pixels[i * d..(i + 1) * d], r)).collect();
        occupied.sort_unstable();
        occupied.dedup();
        let realized_overlap = 1.0 - occupied.len() as f64 / n_obs as f64;
        Ok(DiscreteLatentSpace {
            r,
            d,
            norm,
            binning: params.binning,
            obs_ids: obs_ids.to_vec(),
            point_pixels,
            occupied,
            overlap_target: params.overlap_target,
            realized_overlap,
            resolution_warning: warning,
            clamp_warnings,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.obs_ids.len()
    }

    pub fn n_cells(&self) -> u64 {
        (self.r as u64).pow(self.d as u32)
    }

    /// Pixel of observation `i`.
    pub fn point_pixel(&self, i: usize) -> &[u32] {
        &self.point_pixels[i * self.d..(i + 1) * self.d]
    }

    /// Linear pixel index of observation `i`.
    pub fn point_linear(&self, i: usize) -> u64 {
        linear_index(self.point_pixel(i), self.r)
    }

    pub fn is_occupied(&self, linear: u64) -> bool {
        self.occupied.binary_search(&linear).is_ok()
    }

    /// Bin out-of-sample coordinates with the stored map and resolution.
    /// Returns flattened pixels and the count of clamped points.
    pub fn assign(&self, coords: &[f64], n_obs: usize) -> Result<(Vec<u32>, usize)> {
        if coords.len() != n_obs * self.d {
            return Err(Error::Invalid(format!(
                "expected {n_obs} x {} coordinates, got {}",
                self.d,
                coords.len()
            )));
        }
        let points01 = normalize_apply(&self.norm, coords);
        discretize(&points01, n_obs, self.d, self.r, self.binning)
    }

    /// Occupied cells as CSV (`pixel_0,...,pixel_{D-1}` header), any D.
    pub fn occupied_csv(&self) -> String {
        let header: Vec<String> = (0..self.d).map(|j| format!("pixel_{j}")).collect();
        let mut out = header.join(",");
        out.push('\n');
        for &lin in &self.occupied {
            let pixel = pixel_coords(lin, self.r, self.d);
            let row: Vec<String> = pixel.iter().map(u32::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

//! Gaussian proximity fields over the discrete latent space, per-pixel
//! correlation with a variable of interest, and signed suprathreshold
//! cluster extraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::TargetVariable;
use crate::dls::{linear_index, pixel_coords, DiscreteLatentSpace};
use crate::error::{Error, Result};

/// Default minimum |r| for cluster extraction.
pub const DEFAULT_R_MIN: f64 = 0.2;

/// Default minimum cluster size in pixels.
pub const DEFAULT_MIN_PIXELS: usize = 5;

/// σ rule: grows with the grid, never below one pixel.
pub fn default_sigma(r: u32) -> f64 {
    (r as f64 / 32.0).max(1.0)
}

/// Truncated Gaussian proximity: `exp(-d^2 / 2σ^2)` for Euclidean pixel
/// distance `d <= 4σ`, exactly 0 beyond.
fn proximity(d2: f64, sigma: f64) -> f64 {
    if d2 <= 16.0 * sigma * sigma {
        (-d2 / (2.0 * sigma * sigma)).exp()
    } else {
        0.0
    }
}

/// Squared Euclidean distance between two pixels, exact in integers.
fn pixel_d2(a: &[u32], b: &[u32]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let diff = x as i64 - y as i64;
            (diff * diff) as u64
        })
        .sum()
}

/// One observation's proximity bump over the whole grid, as a dense
/// row-major array of `R^D` values.
pub fn gaussian_slice(center: &[u32], sigma: f64, r: u32, d: usize) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    if center.len() != d || center.iter().any(|&c| c >= r) {
        return Err(Error::Invalid("slice center outside the grid".into()));
    }
    let cells = (r as u64).pow(d as u32);
    let mut out = Vec::with_capacity(cells as usize);
    for lin in 0..cells {
        let pixel = pixel_coords(lin, r, d);
        out.push(proximity(pixel_d2(&pixel, center) as f64, sigma));
    }
    Ok(out)
}

/// Correlation method. Point-biserial is Pearson's formula applied to a
/// 0/1 target — they coincide by definition, so both share one code path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrMethod {
    #[default]
    Pearson,
    PointBiserial,
}

/// Pearson product-moment correlation, two-pass centered. `Ok(None)`
/// marks an undefined correlation (either vector constant).
pub fn correlate(x: &[f64], y: &[f64], _method: CorrMethod) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!(
            "correlate: length mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Invalid(format!(
            "correlate needs at least 3 observations, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Per-pixel correlation between proximity-to-observations and a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMap {
    pub r: u32,
    pub d: usize,
    pub sigma: f64,
    pub method: CorrMethod,
    pub target_name: String,
    /// Dense row-major grid; `None` where the proximity vector is constant.
    pub values: Vec<Option<f64>>,
}

impl CorrelationMap {
    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, linear: u64) -> Option<f64> {
        self.values[linear as usize]
    }

    /// CSV export: pixel coordinates, r (empty when undefined), defined flag.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = (0..self.d).map(|j| format!("pixel_{j}")).collect();
        header.push("r".into());
        header.push("defined".into());
        let mut out = header.join(",");
        out.push('\n');
        for (lin, v) in self.values.iter().enumerate() {
            let pixel = pixel_coords(lin as u64, self.r, self.d);
            for p in &pixel {
                out.push_str(&p.to_string());
                out.push(',');
            }
            match v {
                Some(r) => out.push_str(&format!("{r},1\n")),
                None => out.push_str(",0\n"),
            }
        }
        out
    }
}

/// Build the correlation map for one target over the observations housed
/// in the DLS. Pixels whose proximity vector is constant across
/// observations (no observation within 4σ, or all equidistant) are
/// undefined. Per-pixel work runs in parallel; the result is
/// order-independent and bit-identical to a sequential pass.
pub fn correlation_map(
    dls: &DiscreteLatentSpace,
    sigma: f64,
    target: &TargetVariable,
    method: CorrMethod,
) -> Result<CorrelationMap> {
    if sigma <= 0.0 {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    if target.obs_ids != dls.obs_ids {
        return Err(Error::Invalid(format!(
            "target `{}` is not aligned with the observations in the latent space",
            target.name
        )));
    }
    let n = dls.n_obs();
    let y = &target.values;
    let my = y.iter().sum::<f64>() / n as f64;
    let syy: f64 = y.iter().map(|&v| (v - my) * (v - my)).sum();

    // Observations sharing an occupied pixel share their distance to every
    // map pixel, so group once: member count and target sum per occupied cell.
    let occ = &dls.occupied;
    let mut m_count = vec![0u32; occ.len()];
    let mut y_sum = vec![0f64; occ.len()];
    for (i, &yi) in y.iter().enumerate() {
        let slot = occ.binary_search(&dls.point_linear(i)).expect("occupied is exact");
        m_count[slot] += 1;
        y_sum[slot] += yi;
    }
    let occ_pixels: Vec<Vec<u32>> =
        occ.iter().map(|&lin| pixel_coords(lin, dls.r, dls.d)).collect();

    let cells = dls.n_cells() as usize;
    let radius2 = (16.0 * sigma * sigma).floor() as u64; // integer d^2 comparison is exact
    let values: Vec<Option<f64>> = (0..cells)
        .into_par_iter()
        .map(|lin| {
            let pixel = pixel_coords(lin as u64, dls.r, dls.d);
            // Grouped sums over observations within 4σ of this pixel.
            let mut sv = 0.0; // Σ v_i
            let mut svv = 0.0; // Σ v_i^2
            let mut svy = 0.0; // Σ v_i y_i
            let mut m = 0u64; // observations within radius
            let mut first_d2 = 0u64;
            let mut all_same_d2 = true;
            for (q, qpixel) in occ_pixels.iter().enumerate() {
                let d2 = pixel_d2(&pixel, qpixel);
                if d2 > radius2 {
                    continue;
                }
                if m == 0 {
                    first_d2 = d2;
                } else if d2 != first_d2 {
                    all_same_d2 = false;
                }
                let g = proximity(d2 as f64, sigma);
                let mc = m_count[q] as f64;
                sv += mc * g;
                svv += mc * g * g;
                svy += g * y_sum[q];
                m += m_count[q] as u64;
            }
            // Constant proximity vector: nobody in range, or everyone in
            // range at one shared distance.
            if m == 0 || (m == n as u64 && all_same_d2) || syy == 0.0 {
                return None;
            }
            let nf = n as f64;
            let sxx = svv - sv * sv / nf;
            let sxy = svy - sv * my;
            if sxx <= 0.0 {
                return None;
            }
            Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
        })
        .collect();

    Ok(CorrelationMap {
        r: dls.r,
        d: dls.d,
        sigma,
        method,
        target_name: target.name.clone(),
        values,
    })
}

/// Connectivity rule for cluster extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    /// Orthogonal neighbors only (4-neighborhood in 2-D).
    Orthogonal,
    /// All `3^D - 1` surrounding cells (8-neighborhood in 2-D).
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    Positive,
    Negative,
}

/// A maximal connected suprathreshold component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u32,
    pub sign: Sign,
    /// Sorted linear pixel indices.
    pub pixels: Vec<u64>,
    /// Signed r at the peak-|r| pixel.
    pub peak_r: f64,
    pub peak_pixel: u64,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }
}

/// Extraction result: kept clusters plus the components dropped for size,
/// so the suprathreshold partition stays auditable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub r_min: f64,
    pub min_pixels: usize,
    pub connectivity: Connectivity,
    pub clusters: Vec<Cluster>,
    /// Components smaller than `min_pixels`, id 0, same ordering rule.
    pub dropped: Vec<Cluster>,
}

fn neighbors(pixel: &[u32], r: u32, connectivity: Connectivity) -> Vec<u64> {
    let d = pixel.len();
    let mut out = Vec::new();
    match connectivity {
        Connectivity::Orthogonal => {
            for j in 0..d {
                for delta in [-1i64, 1] {
                    let v = pixel[j] as i64 + delta;
                    if (0..r as i64).contains(&v) {
                        let mut p = pixel.to_vec();
                        p[j] = v as u32;
                        out.push(linear_index(&p, r));
                    }
                }
            }
        }
        Connectivity::Full => {
            // Walk the 3^D offset cube, skipping the all-zero offset.
            let total = 3u32.pow(d as u32);
            'offsets: for code in 0..total {
                let mut c = code;
                let mut p = Vec::with_capacity(d);
                let mut all_zero = true;
                for &axis in pixel {
                    let delta = (c % 3) as i64 - 1;
                    c /= 3;
                    all_zero &= delta == 0;
                    let v = axis as i64 + delta;
                    if !(0..r as i64).contains(&v) {
                        continue 'offsets;
                    }
                    p.push(v as u32);
                }
                if !all_zero {
                    out.push(linear_index(&p, r));
                }
            }
        }
    }
    out
}

/// Extract signed clusters from a correlation map: connected components
/// of `{r >= r_min}` (positive) and `{r <= -r_min}` (negative), dropping
/// components under `min_pixels`, ordered by peak |r| descending.
pub fn extract_clusters(
    map: &CorrelationMap,
    r_min: f64,
    connectivity: Connectivity,
    min_pixels: usize,
) -> Result<ClusterSet> {
    if r_min <= 0.0 {
        return Err(Error::Invalid(format!("r_min must be positive, got {r_min}")));
    }
    let in_set = |lin: u64, sign: Sign| -> bool {
        match map.values[lin as usize] {
            Some(v) => match sign {
                Sign::Positive => v >= r_min,
                Sign::Negative => v <= -r_min,
            },
            None => false,
        }
    };

    let mut all = Vec::new();
    for sign in [Sign::Positive, Sign::Negative] {
        let mut visited = vec![false; map.values.len()];
        for start in 0..map.values.len() as u64 {
            if visited[start as usize] || !in_set(start, sign) {
                continue;
            }
            // Flood fill one component.
            let mut pixels = Vec::new();
            let mut stack = vec![start];
            visited[start as usize] = true;
            while let Some(lin) = stack.pop() {
                pixels.push(lin);
                let pixel = pixel_coords(lin, map.r, map.d);
                for nb in neighbors(&pixel, map.r, connectivity) {
                    if !visited[nb as usize] && in_set(nb, sign) {
                        visited[nb as usize] = true;
                        stack.push(nb);
                    }
                }
            }
            pixels.sort_unstable();
            let (&peak_pixel, peak_r) = pixels
                .iter()
                .map(|lin| (lin, map.values[*lin as usize].unwrap()))
                .max_by(|a, b| {
                    a.1.abs()
                        .partial_cmp(&b.1.abs())
                        .unwrap()
                        .then(b.0.cmp(a.0)) // tie: lower pixel index wins
                })
                .unwrap();
            all.push(Cluster { id: 0, sign, pixels, peak_r, peak_pixel });
        }
    }

    // Peak |r| descending; ties resolved by lowest member pixel for a
    // deterministic order.
    all.sort_by(|a, b| {
        b.peak_r
            .abs()
            .partial_cmp(&a.peak_r.abs())
            .unwrap()
            .then(a.pixels[0].cmp(&b.pixels[0]))
    });
    let (mut clusters, dropped): (Vec<Cluster>, Vec<Cluster>) =
        all.into_iter().partition(|c| c.size() >= min_pixels);
    for (i, c) in clusters.iter_mut().enumerate() {
        c.id = i as u32 + 1;
    }
    Ok(ClusterSet { r_min, min_pixels, connectivity, clusters, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{TargetKind, TargetVariable};
    use crate::dls::{BinningMode, DlsParams, NormalizationParams};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("o{i}")).collect()
    }

    fn target(values: Vec<f64>, n: usize) -> TargetVariable {
        TargetVariable::new("t".into(), TargetKind::Continuous, values, ids(n)).unwrap()
    }

    #[test]
    fn sigma_rule() {
        assert_eq!(default_sigma(32), 1.0);
        assert_eq!(default_sigma(256), 8.0);
        assert_eq!(default_sigma(8), 1.0); // floor of the rule
    }

    #[test]
    fn gaussian_slice_shape() {
        let r = 33;
        let sigma = 2.0;
        let center = [16u32, 16];
        let slice = gaussian_slice(&center, sigma, r, 2).unwrap();
        let at = |x: u32, y: u32| slice[linear_index(&[x, y], r) as usize];
        assert_eq!(at(16, 16), 1.0);
        // Euclidean distance exactly σ.
        assert!((at(18, 16) - (-0.5f64).exp()).abs() < 1e-15);
        // Distance 4σ inclusive is kept, one pixel past is exactly 0.
        assert!(at(24, 16) > 0.0);
        assert_eq!(at(25, 16), 0.0);
        // Bounds and radial monotonicity along a row.
        assert!(slice.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for x in 16..32 {
            assert!(at(x + 1, 16) <= at(x, 16));
        }
    }

    #[test]
    fn gaussian_slice_rejects_bad_sigma() {
        assert!(gaussian_slice(&[0, 0], 0.0, 8, 2).is_err());
        assert!(gaussian_slice(&[0, 0], -1.0, 8, 2).is_err());
    }

    #[test]
    fn correlate_hand_values() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [0.0, 0.0, 1.0, 1.0];
        let r = correlate(&x, &y, CorrMethod::Pearson).unwrap().unwrap();
        // Textbook point-biserial: (M1 - M0) / s_n * sqrt(p q).
        let (m1, m0) = (3.5, 1.5);
        let s_n = (5.0f64 / 4.0).sqrt();
        let oracle = (m1 - m0) / s_n * (0.5f64 * 0.5).sqrt();
        assert!((r - oracle).abs() < 1e-12, "{r} vs {oracle}");
        // Point-biserial and Pearson are the same computation.
        let pb = correlate(&x, &y, CorrMethod::PointBiserial).unwrap().unwrap();
        assert_eq!(r.to_bits(), pb.to_bits());
    }

    #[test]
    fn correlate_perfect_and_degenerate() {
        let x = [1.0, 2.0, 5.0];
        assert_eq!(correlate(&x, &x, CorrMethod::Pearson).unwrap(), Some(1.0));
        assert_eq!(correlate(&x, &[2.0, 2.0, 2.0], CorrMethod::Pearson).unwrap(), None);
        assert!(correlate(&x, &[1.0, 2.0], CorrMethod::Pearson).is_err());
        assert!(correlate(&[1.0, 2.0], &[1.0, 2.0], CorrMethod::Pearson).is_err());
    }

    #[test]
    fn correlate_affine_invariance() {
        let mut rng = crate::seed::stream(5, "affine", &[]);
        use rand::Rng;
        let x: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let y2: Vec<f64> = y.iter().map(|&v| 2.0 * v + 3.0).collect();
        let r1 = correlate(&x, &y, CorrMethod::Pearson).unwrap().unwrap();
        let r2 = correlate(&x, &y2, CorrMethod::Pearson).unwrap().unwrap();
        assert!((r1 - r2).abs() < 1e-12);
    }

    /// Two tight blobs at opposite corners with binary blob membership.
    fn blob_dls() -> (DiscreteLatentSpace, TargetVariable) {
        let mut coords = Vec::new();
        let mut y = Vec::new();
        let mut rng = crate::seed::stream(9, "blobs", &[]);
        use rand::Rng;
        for i in 0..40 {
            let blob1 = i >= 20;
            let (cx, cy) = if blob1 { (0.9, 0.9) } else { (0.1, 0.1) };
            coords.push(cx + rng.random::<f64>() * 0.08);
            coords.push(cy + rng.random::<f64>() * 0.08);
            y.push(f64::from(blob1));
        }
        let dls = DiscreteLatentSpace::build(
            &coords,
            40,
            2,
            &ids(40),
            &DlsParams { fixed_r: Some(32), ..Default::default() },
        )
        .unwrap();
        (dls, target(y, 40))
    }

    #[test]
    fn blob_map_extremes_sit_on_the_blobs() {
        let (dls, t) = blob_dls();
        let map = correlation_map(&dls, 2.0, &t, CorrMethod::PointBiserial).unwrap();
        let mut best: Option<(u64, f64)> = None;
        let mut worst: Option<(u64, f64)> = None;
        for (lin, v) in map.values.iter().enumerate() {
            if let Some(r) = *v {
                if best.is_none_or(|(_, b)| r > b) {
                    best = Some((lin as u64, r));
                }
                if worst.is_none_or(|(_, w)| r < w) {
                    worst = Some((lin as u64, r));
                }
            }
        }
        // Blob 1 (target 1) lives in the high corner, blob 0 in the low one.
        let best_pixel = pixel_coords(best.unwrap().0, map.r, 2);
        let worst_pixel = pixel_coords(worst.unwrap().0, map.r, 2);
        assert!(best_pixel.iter().all(|&p| p >= 16), "{best_pixel:?}");
        assert!(worst_pixel.iter().all(|&p| p < 16), "{worst_pixel:?}");
        assert!(best.unwrap().1 > 0.5 && worst.unwrap().1 < -0.5);
    }

    #[test]
    fn map_matches_naive_per_pixel_correlate() {
        let (dls, t) = blob_dls();
        let sigma = 1.5;
        let map = correlation_map(&dls, sigma, &t, CorrMethod::Pearson).unwrap();
        // Naive oracle: materialize each pixel's proximity vector and call
        // the scalar kernel.
        let n = dls.n_obs();
        for lin in 0..map.n_cells() as u64 {
            let pixel = pixel_coords(lin, map.r, 2);
            let v: Vec<f64> = (0..n)
                .map(|i| proximity(pixel_d2(&pixel, dls.point_pixel(i)) as f64, sigma))
                .collect();
            let expected = correlate(&v, &t.values, CorrMethod::Pearson).unwrap();
            match (map.value(lin), expected) {
                (None, None) => {}
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "pixel {pixel:?}: {a} vs {b}"),
                (a, b) => panic!("definedness mismatch at {pixel:?}: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn map_runs_are_bit_identical() {
        let (dls, t) = blob_dls();
        let a = correlation_map(&dls, 2.0, &t, CorrMethod::Pearson).unwrap();
        let b = correlation_map(&dls, 2.0, &t, CorrMethod::Pearson).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_observation_map_is_fully_undefined() {
        // A one-observation space cannot come out of `build`; assemble it
        // by hand to pin the degenerate-map contract.
        let dls = DiscreteLatentSpace {
            r: 8,
            d: 2,
            norm: NormalizationParams { mins: vec![0.0, 0.0], maxs: vec![1.0, 1.0] },
            binning: BinningMode::Floor,
            obs_ids: ids(1),
            point_pixels: vec![3, 3],
            occupied: vec![linear_index(&[3, 3], 8)],
            overlap_target: 0.05,
            realized_overlap: 0.0,
            resolution_warning: false,
            clamp_warnings: 0,
        };
        let t = target(vec![1.0], 1);
        let map = correlation_map(&dls, 2.0, &t, CorrMethod::Pearson).unwrap();
        assert!(map.values.iter().all(Option::is_none));
    }

    #[test]
    fn label_swap_negates_map_and_swaps_clusters() {
        let (dls, t) = blob_dls();
        let swapped = TargetVariable::new(
            "t".into(),
            TargetKind::Binary,
            t.values.iter().map(|&v| 1.0 - v).collect(),
            t.obs_ids.clone(),
        )
        .unwrap();
        let m1 = correlation_map(&dls, 2.0, &t, CorrMethod::PointBiserial).unwrap();
        let m2 = correlation_map(&dls, 2.0, &swapped, CorrMethod::PointBiserial).unwrap();
        for (a, b) in m1.values.iter().zip(&m2.values) {
            match (a, b) {
                (None, None) => {}
                (Some(x), Some(y)) => assert!((x + y).abs() < 1e-12),
                _ => panic!("definedness must agree under label swap"),
            }
        }
        let c1 = extract_clusters(&m1, 0.2, Connectivity::Full, 1).unwrap();
        let c2 = extract_clusters(&m2, 0.2, Connectivity::Full, 1).unwrap();
        let pos1: Vec<_> =
            c1.clusters.iter().filter(|c| c.sign == Sign::Positive).map(|c| &c.pixels).collect();
        let neg2: Vec<_> =
            c2.clusters.iter().filter(|c| c.sign == Sign::Negative).map(|c| &c.pixels).collect();
        assert_eq!(pos1, neg2);
    }

    #[test]
    fn blob_map_yields_one_cluster_per_sign() {
        let (dls, t) = blob_dls();
        let map = correlation_map(&dls, 2.0, &t, CorrMethod::PointBiserial).unwrap();
        let set = extract_clusters(&map, 0.2, Connectivity::Full, 5).unwrap();
        let pos: Vec<_> = set.clusters.iter().filter(|c| c.sign == Sign::Positive).collect();
        let neg: Vec<_> = set.clusters.iter().filter(|c| c.sign == Sign::Negative).collect();
        assert_eq!(pos.len(), 1, "{:?}", set.clusters.len());
        assert_eq!(neg.len(), 1);
        // Positive and negative clusters never share a pixel.
        for p in &pos {
            for q in &neg {
                assert!(p.pixels.iter().all(|x| !q.pixels.contains(x)));
            }
        }
    }

    fn tiny_map(cells: Vec<Option<f64>>, r: u32) -> CorrelationMap {
        CorrelationMap {
            r,
            d: 2,
            sigma: 1.0,
            method: CorrMethod::Pearson,
            target_name: "t".into(),
            values: cells,
        }
    }

    #[test]
    fn single_pixel_cluster() {
        let mut cells = vec![Some(0.0); 16];
        cells[5] = Some(0.9);
        let set = extract_clusters(&tiny_map(cells, 4), 0.2, Connectivity::Full, 1).unwrap();
        assert_eq!(set.clusters.len(), 1);
        assert_eq!(set.clusters[0].pixels, [5]);
        assert_eq!(set.clusters[0].id, 1);
        assert_eq!(set.clusters[0].peak_r, 0.9);
    }

    #[test]
    fn diagonal_adjacency_depends_on_connectivity() {
        // Pixels (1,1) and (2,2) on a 4x4 grid: linear 5 and 10.
        let mut cells = vec![Some(0.0); 16];
        cells[5] = Some(0.5);
        cells[10] = Some(0.6);
        let eight = extract_clusters(&tiny_map(cells.clone(), 4), 0.2, Connectivity::Full, 1)
            .unwrap();
        assert_eq!(eight.clusters.len(), 1);
        assert_eq!(eight.clusters[0].pixels, [5, 10]);
        let four =
            extract_clusters(&tiny_map(cells, 4), 0.2, Connectivity::Orthogonal, 1).unwrap();
        assert_eq!(four.clusters.len(), 2);
        // Ordering: peak |r| 0.6 first.
        assert_eq!(four.clusters[0].pixels, [10]);
        assert_eq!(four.clusters[1].pixels, [5]);
    }

    #[test]
    fn extraction_partitions_the_suprathreshold_set() {
        let (dls, t) = blob_dls();
        let map = correlation_map(&dls, 1.2, &t, CorrMethod::Pearson).unwrap();
        let set = extract_clusters(&map, 0.3, Connectivity::Orthogonal, 4).unwrap();
        let mut covered: Vec<u64> = set
            .clusters
            .iter()
            .chain(&set.dropped)
            .flat_map(|c| c.pixels.iter().copied())
            .collect();
        covered.sort_unstable();
        let mut expected: Vec<u64> = (0..map.n_cells() as u64)
            .filter(|&lin| map.value(lin).is_some_and(|v| v.abs() >= 0.3))
            .collect();
        expected.sort_unstable();
        assert_eq!(covered, expected);
        // Kept clusters all meet the size floor; dropped ones do not.
        assert!(set.clusters.iter().all(|c| c.size() >= 4));
        assert!(set.dropped.iter().all(|c| c.size() < 4));
    }

    #[test]
    fn undefined_pixels_are_not_clustered() {
        let cells = vec![Some(0.9), None, Some(0.9), Some(0.0)];
        let set = extract_clusters(&tiny_map(cells, 2), 0.2, Connectivity::Full, 1).unwrap();
        // (0,0) and (0,1) are adjacent under 8-connectivity, but the map
        // has them in one component only because the None at linear 1 is
        // skipped, not treated as 0.
        assert_eq!(set.clusters.len(), 1);
        assert_eq!(set.clusters[0].pixels, [0, 2]);
    }

    #[test]
    fn r_min_must_be_positive() {
        let cells = vec![Some(0.0); 4];
        assert!(extract_clusters(&tiny_map(cells, 2), 0.0, Connectivity::Full, 1).is_err());
    }

    #[test]
    fn map_csv_format() {
        let cells = vec![Some(0.5), None, Some(-0.25), Some(0.0)];
        let csv = tiny_map(cells, 2).to_csv();
        assert_eq!(csv, "pixel_0,pixel_1,r,defined\n0,0,0.5,1\n1,0,,0\n0,1,-0.25,1\n1,1,0,1\n");
    }
}

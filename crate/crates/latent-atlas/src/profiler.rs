//! Per-cluster stereotypical feature profiles: Mann-Whitney tests of each
//! feature for observations inside a cluster versus those outside.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureMatrix;
use crate::dls::DiscreteLatentSpace;
use crate::error::{Error, Result};
use crate::statmap::Cluster;

/// Default minimum group size on each side of the test.
pub const DEFAULT_MIN_MEMBERS: usize = 5;

/// Effect floor below which a whole profile is reported as insufficient.
pub const SUFFICIENT_EFFECT_R: f64 = 0.2;

/// Observations inside a cluster (pixel containment) and the complement.
pub fn cluster_members(cluster: &Cluster, dls: &DiscreteLatentSpace) -> (Vec<usize>, Vec<usize>) {
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for i in 0..dls.n_obs() {
        if cluster.pixels.binary_search(&dls.point_linear(i)).is_ok() {
            inside.push(i);
        } else {
            outside.push(i);
        }
    }
    (inside, outside)
}

/// Mann-Whitney test result for one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U for the first sample: pairs where a exceeds b, ties counted half.
    pub u: f64,
    /// Tie-corrected normal approximation z-score.
    pub z: f64,
    /// Two-sided p from the normal approximation, in (0, 1].
    pub p: f64,
}

/// Rank-sum Mann-Whitney with midranks and tie-corrected variance.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("mann_whitney needs non-empty groups".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;

    // Pool, sort, and assign midranks; remember which sample each value
    // came from and collect tie-group sizes for the variance correction.
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("feature values are finite"));
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0; // Σ (t³ − t)
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        // Ranks are 1-based: positions i..j share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &pooled[i..j] {
            if item.1 {
                rank_sum_a += midrank;
            }
        }
        tie_term += t * t * t - t;
        i = j;
    }

    let u = rank_sum_a - na * (na + 1.0) / 2.0;
    let mu = na * nb / 2.0;
    let sigma2 = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let sigma = sigma2.max(0.0).sqrt();
    let (z, p) = if sigma == 0.0 {
        (0.0, 1.0)
    } else {
        let z = (u - mu) / sigma;
        let p = libm::erfc(z.abs() / std::f64::consts::SQRT_2).max(f64::MIN_POSITIVE);
        (z, p)
    };
    Ok(MannWhitney { u, z, p })
}

/// Rank-biserial-style effect size r = |z| / sqrt(N).
pub fn effect_size_r(z: f64, n: usize) -> f64 {
    z.abs() / (n as f64).sqrt()
}

/// Which side of the comparison has the larger median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Median inside > median outside.
    Positive,
    /// Median inside < median outside.
    Negative,
    /// Medians equal.
    Neutral,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Positive => "+",
            Direction::Negative => "-",
            Direction::Neutral => "neutral",
        }
    }

    pub fn signum(self) -> f64 {
        match self {
            Direction::Positive => 1.0,
            Direction::Negative => -1.0,
            Direction::Neutral => 0.0,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One feature's inside-vs-outside comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEffect {
    pub feature_name: String,
    pub u: f64,
    pub z: f64,
    pub p: f64,
    /// Unsigned effect size |z|/√N in [0, 1].
    pub r: f64,
    pub direction: Direction,
}

/// Stereotypical profile of a cluster across every feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSizeProfile {
    pub cluster_id: u32,
    pub n_in: usize,
    pub n_out: usize,
    pub effects: Vec<FeatureEffect>,
    /// False when no feature reaches the reporting floor.
    pub sufficient_effect: bool,
    /// Tensor shape of the source data, when it has one.
    pub tensor_shape: Option<Vec<usize>>,
}

impl EffectSizeProfile {
    /// Signed effect map (r × direction), shaped like one input
    /// observation when the dataset is tensor-shaped.
    pub fn signed_r_map(&self) -> Vec<f64> {
        self.effects.iter().map(|e| e.r * e.direction.signum()).collect()
    }
}

/// Profile one cluster: Mann-Whitney per feature, inside vs outside.
/// Per-feature tests run in parallel; output order is the feature order.
pub fn cluster_profile(
    cluster: &Cluster,
    x: &FeatureMatrix,
    dls: &DiscreteLatentSpace,
    min_members: usize,
) -> Result<EffectSizeProfile> {
    if x.obs_ids() != dls.obs_ids {
        return Err(Error::Invalid(
            "feature matrix is not aligned with the observations in the latent space".into(),
        ));
    }
    let (inside, outside) = cluster_members(cluster, dls);
    if inside.is_empty() {
        return Err(Error::Invalid(format!(
            "cluster {} covers no occupied pixel; not profilable",
            cluster.id
        )));
    }
    if inside.len() < min_members || outside.len() < min_members {
        return Err(Error::Invalid(format!(
            "cluster {}: {} inside / {} outside, need at least {min_members} per side",
            cluster.id,
            inside.len(),
            outside.len()
        )));
    }
    let n = inside.len() + outside.len();
    let effects: Vec<FeatureEffect> = (0..x.n_features())
        .into_par_iter()
        .map(|j| {
            let a: Vec<f64> = inside.iter().map(|&i| x.get(i, j)).collect();
            let b: Vec<f64> = outside.iter().map(|&i| x.get(i, j)).collect();
            let mw = mann_whitney(&a, &b)?;
            let (med_a, med_b) = (median(&a), median(&b));
            let direction = if med_a > med_b {
                Direction::Positive
            } else if med_a < med_b {
                Direction::Negative
            } else {
                Direction::Neutral
            };
            Ok(FeatureEffect {
                feature_name: x.feature_name(j),
                u: mw.u,
                z: mw.z,
                p: mw.p,
                r: effect_size_r(mw.z, n),
                direction,
            })
        })
        .collect::<Result<_>>()?;
    let sufficient_effect = effects.iter().any(|e| e.r >= SUFFICIENT_EFFECT_R);
    Ok(EffectSizeProfile {
        cluster_id: cluster.id,
        n_in: inside.len(),
        n_out: outside.len(),
        effects,
        sufficient_effect,
        tensor_shape: x.tensor_shape().map(<[usize]>::to_vec),
    })
}

/// Profile CSV over a set of clusters:
/// `cluster_id,feature_name,U,z,p,r,direction,n_in,n_out`.
pub fn profiles_to_csv(profiles: &[EffectSizeProfile]) -> String {
    let mut out = String::from("cluster_id,feature_name,U,z,p,r,direction,n_in,n_out\n");
    for profile in profiles {
        for e in &profile.effects {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                profile.cluster_id,
                e.feature_name,
                e.u,
                e.z,
                e.p,
                e.r,
                e.direction.as_str(),
                profile.n_in,
                profile.n_out
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dls::{DiscreteLatentSpace, DlsParams};
    use crate::statmap::Sign;
    use proptest::prelude::*;

    /// Exhaustive pair-count oracle: pairs where a exceeds b, half per tie.
    fn u_oracle(a: &[f64], b: &[f64]) -> f64 {
        let mut u = 0.0;
        for &x in a {
            for &y in b {
                if x > y {
                    u += 1.0;
                } else if x == y {
                    u += 0.5;
                }
            }
        }
        u
    }

    /// Direct-formula z with independently recomputed tie correction.
    fn z_oracle(a: &[f64], b: &[f64]) -> f64 {
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let n = na + nb;
        let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut ties = 0.0;
        let mut i = 0;
        while i < pooled.len() {
            let j = pooled[i..].iter().take_while(|&&v| v == pooled[i]).count() + i;
            let t = (j - i) as f64;
            ties += t * t * t - t;
            i = j;
        }
        let sigma = (na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)))).sqrt();
        if sigma == 0.0 {
            return 0.0;
        }
        (u_oracle(a, b) - na * nb / 2.0) / sigma
    }

    #[test]
    fn u_counts_exceeding_pairs() {
        let mw = mann_whitney(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(mw.u, 0.0);
        assert!(mw.z < 0.0);
    }

    #[test]
    fn identical_multisets_are_null() {
        let v = [1.0, 2.0, 3.0];
        let mw = mann_whitney(&v, &v).unwrap();
        assert_eq!(mw.u, 4.5); // n_a·n_b/2 with ties counted half
        assert_eq!(mw.z, 0.0);
        assert_eq!(mw.p, 1.0);
    }

    #[test]
    fn constant_pool_is_null_not_nan() {
        let mw = mann_whitney(&[5.0, 5.0], &[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((mw.z, mw.p), (0.0, 1.0));
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(mann_whitney(&[], &[1.0]).is_err());
        assert!(mann_whitney(&[1.0], &[]).is_err());
    }

    #[test]
    fn matches_oracles_on_small_random_groups() {
        use rand::Rng;
        let mut rng = crate::seed::stream(21, "mwu-oracle", &[]);
        for trial in 0..200 {
            let na = rng.random_range(1..=8);
            let nb = rng.random_range(1..=8);
            // Coarse integer values force heavy ties.
            let a: Vec<f64> = (0..na).map(|_| f64::from(rng.random_range(0..5))).collect();
            let b: Vec<f64> = (0..nb).map(|_| f64::from(rng.random_range(0..5))).collect();
            let mw = mann_whitney(&a, &b).unwrap();
            assert_eq!(mw.u, u_oracle(&a, &b), "trial {trial}: {a:?} vs {b:?}");
            assert!((mw.z - z_oracle(&a, &b)).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn effect_size_formula() {
        assert_eq!(effect_size_r(0.0, 10), 0.0);
        assert_eq!(effect_size_r(3.0, 9), 1.0);
        assert_eq!(effect_size_r(2.5, 100), 0.25);
        assert_eq!(effect_size_r(-2.5, 100), 0.25);
    }

    #[test]
    fn p_two_sided_known_value() {
        // z = 1.96 → two-sided p ≈ 0.05 (textbook normal quantile).
        let p = libm::erfc(1.959964f64 / std::f64::consts::SQRT_2);
        assert!((p - 0.05).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn u_a_plus_u_b_is_the_pair_count(
            a in proptest::collection::vec(0i32..6, 1..10),
            b in proptest::collection::vec(0i32..6, 1..10),
        ) {
            let af: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
            let bf: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
            let ua = mann_whitney(&af, &bf).unwrap();
            let ub = mann_whitney(&bf, &af).unwrap();
            prop_assert!((ua.u + ub.u - (af.len() * bf.len()) as f64).abs() < 1e-9);
            // Swapping groups preserves |z| and p.
            prop_assert!((ua.z + ub.z).abs() < 1e-9);
            prop_assert!((ua.p - ub.p).abs() < 1e-12);
        }

        #[test]
        fn rank_statistic_ignores_monotone_transforms(
            a in proptest::collection::vec(0.0f64..10.0, 2..12),
            b in proptest::collection::vec(0.0f64..10.0, 2..12),
        ) {
            let mw1 = mann_whitney(&a, &b).unwrap();
            let ta: Vec<f64> = a.iter().map(|&v| (v * 0.7).exp()).collect();
            let tb: Vec<f64> = b.iter().map(|&v| (v * 0.7).exp()).collect();
            let mw2 = mann_whitney(&ta, &tb).unwrap();
            prop_assert_eq!(mw1.u, mw2.u);
            prop_assert!((mw1.z - mw2.z).abs() < 1e-12);
        }
    }

    /// Two 10-observation groups in opposite grid corners; features 1 and 3
    /// (of 5) shift between groups, the rest are common noise.
    fn fixture() -> (DiscreteLatentSpace, FeatureMatrix, Cluster) {
        use rand::Rng;
        let n = 20;
        let ids: Vec<String> = (0..n).map(|i| format!("o{i}")).collect();
        let mut rng = crate::seed::stream(33, "profiler-fixture", &[]);
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            let inside = i < 10;
            let (cx, cy) = if inside { (0.1, 0.1) } else { (0.9, 0.9) };
            coords.push(cx + rng.random::<f64>() * 0.05);
            coords.push(cy + rng.random::<f64>() * 0.05);
            for j in 0..5 {
                let shift = if inside && (j == 1 || j == 3) { 3.0 } else { 0.0 };
                values.push(shift + rng.random::<f64>());
            }
        }
        let m = FeatureMatrix::new(ids.clone(), 5, values, None, None).unwrap();
        let dls = DiscreteLatentSpace::build(
            &coords,
            n,
            2,
            &ids,
            &DlsParams { fixed_r: Some(16), ..Default::default() },
        )
        .unwrap();
        // Cluster = every pixel in the low corner quadrant.
        let mut pixels: Vec<u64> = (0..n)
            .filter(|&i| dls.point_pixel(i).iter().all(|&p| p < 8))
            .map(|i| dls.point_linear(i))
            .collect();
        pixels.sort_unstable();
        pixels.dedup();
        let cluster =
            Cluster { id: 1, sign: Sign::Positive, peak_r: 0.9, peak_pixel: pixels[0], pixels };
        (dls, m, cluster)
    }

    #[test]
    fn members_split_by_pixel_containment() {
        let (dls, _, cluster) = fixture();
        let (inside, outside) = cluster_members(&cluster, &dls);
        assert_eq!(inside, (0..10).collect::<Vec<_>>());
        assert_eq!(outside, (10..20).collect::<Vec<_>>());
    }

    #[test]
    fn profile_finds_the_shifted_features() {
        let (dls, m, cluster) = fixture();
        let profile = cluster_profile(&cluster, &m, &dls, 5).unwrap();
        assert_eq!(profile.effects.len(), 5);
        assert_eq!((profile.n_in, profile.n_out), (10, 10));
        let mut by_r: Vec<usize> = (0..5).collect();
        by_r.sort_by(|&a, &b| {
            profile.effects[b].r.partial_cmp(&profile.effects[a].r).unwrap()
        });
        let mut top2 = [by_r[0], by_r[1]];
        top2.sort_unstable();
        assert_eq!(top2, [1, 3]);
        for &j in &top2 {
            assert!(profile.effects[j].r >= 0.3);
            assert_eq!(profile.effects[j].direction, Direction::Positive);
        }
        assert!(profile.sufficient_effect);
        // Signed map length matches the feature count (no tensor shape here).
        assert_eq!(profile.signed_r_map().len(), 5);
        assert!(profile.signed_r_map()[1] > 0.0);
    }

    #[test]
    fn identical_feature_is_neutral() {
        let (dls, m, cluster) = fixture();
        // Overwrite feature 0 with a constant by rebuilding the matrix.
        let mut values = Vec::new();
        for i in 0..m.n_obs() {
            for j in 0..m.n_features() {
                values.push(if j == 0 { 7.0 } else { m.get(i, j) });
            }
        }
        let m2 =
            FeatureMatrix::new(m.obs_ids().to_vec(), m.n_features(), values, None, None).unwrap();
        let profile = cluster_profile(&cluster, &m2, &dls, 5).unwrap();
        assert_eq!(profile.effects[0].r, 0.0);
        assert_eq!(profile.effects[0].direction, Direction::Neutral);
        assert_eq!(profile.effects[0].p, 1.0);
    }

    #[test]
    fn unprofilable_clusters_are_rejected() {
        let (dls, m, mut cluster) = fixture();
        // A cluster over unoccupied pixels only.
        let free = (0..dls.n_cells()).find(|&lin| !dls.is_occupied(lin)).unwrap();
        cluster.pixels = vec![free];
        let err = cluster_profile(&cluster, &m, &dls, 5).unwrap_err();
        assert!(err.to_string().contains("not profilable"), "{err}");
    }

    #[test]
    fn min_members_is_enforced() {
        let (dls, m, cluster) = fixture();
        let err = cluster_profile(&cluster, &m, &dls, 11).unwrap_err();
        assert!(err.to_string().contains("need at least 11"), "{err}");
    }

    #[test]
    fn swapping_groups_flips_direction_only() {
        let (dls, m, cluster) = fixture();
        let profile = cluster_profile(&cluster, &m, &dls, 5).unwrap();
        // Complement cluster: all occupied pixels not in the original.
        let comp_pixels: Vec<u64> = dls
            .occupied
            .iter()
            .copied()
            .filter(|lin| cluster.pixels.binary_search(lin).is_err())
            .collect();
        let comp = Cluster { pixels: comp_pixels, ..cluster.clone() };
        let flipped = cluster_profile(&comp, &m, &dls, 5).unwrap();
        for (e1, e2) in profile.effects.iter().zip(&flipped.effects) {
            assert!((e1.r - e2.r).abs() < 1e-12);
            assert!((e1.p - e2.p).abs() < 1e-12);
            match e1.direction {
                Direction::Positive => assert_eq!(e2.direction, Direction::Negative),
                Direction::Negative => assert_eq!(e2.direction, Direction::Positive),
                Direction::Neutral => assert_eq!(e2.direction, Direction::Neutral),
            }
        }
    }

    #[test]
    fn csv_lists_every_feature_once() {
        let (dls, m, cluster) = fixture();
        let profile = cluster_profile(&cluster, &m, &dls, 5).unwrap();
        let csv = profiles_to_csv(&[profile]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "cluster_id,feature_name,U,z,p,r,direction,n_in,n_out");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("1,f0,"));
        assert!(lines[1].ends_with(",10,10"));
    }

    #[test]
    fn tensor_shape_flows_into_the_profile() {
        let (dls, m, cluster) = fixture();
        // Give the matrix a [5] tensor shape.
        let m2 = FeatureMatrix::new(
            m.obs_ids().to_vec(),
            5,
            m.values().to_vec(),
            None,
            Some(vec![5]),
        )
        .unwrap();
        let profile = cluster_profile(&cluster, &m2, &dls, 5).unwrap();
        assert_eq!(profile.tensor_shape.as_deref(), Some(&[5usize][..]));
        assert_eq!(profile.signed_r_map().len(), 5);
    }
}

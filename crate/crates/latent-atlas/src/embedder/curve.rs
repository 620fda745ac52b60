//! Least-squares fit of the embedding-space weight curve
//! `φ(x) = 1 / (1 + a·x^(2b))` to the min_dist/spread target shape.

use crate::error::{Error, Result};

const GRID_POINTS: usize = 300;
const LM_ITERATIONS: usize = 200;

/// Fit (a, b) by damped least squares on a fixed 300-point grid over
/// `[0, 3·spread]`. The optimizer runs a fixed iteration budget and
/// returns the best parameters found along with the final residual.
pub fn fit_curve_ab(min_dist: f64, spread: f64) -> Result<(f64, f64, f64)> {
    if !(min_dist > 0.0 && spread > 0.0 && min_dist < spread * 10.0) {
        return Err(Error::Invalid(format!(
            "need 0 < min_dist < 10*spread, got min_dist={min_dist}, spread={spread}"
        )));
    }
    let xs: Vec<f64> =
        (0..GRID_POINTS).map(|i| 3.0 * spread * i as f64 / (GRID_POINTS - 1) as f64).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x <= min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();

    let phi = |a: f64, b: f64, x: f64| 1.0 / (1.0 + a * x.powf(2.0 * b));
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter().zip(&ys).map(|(&x, &y)| (phi(a, b, x) - y).powi(2)).sum()
    };

    let (mut a, mut b) = (1.0, 1.0);
    let mut lambda = 1e-3;
    let mut best = sse(a, b);
    for _ in 0..LM_ITERATIONS {
        // Normal equations for the 2-parameter Jacobian.
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let t = x.powf(2.0 * b);
            let denom = (1.0 + a * t) * (1.0 + a * t);
            let da = -t / denom;
            let db = if x > 0.0 { -2.0 * a * t * x.ln() / denom } else { 0.0 };
            let r = phi(a, b, x) - y;
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        // Solve (JᵀJ + λ·diag(JᵀJ)) Δ = -Jᵀr.
        let daa = jaa * (1.0 + lambda);
        let dbb = jbb * (1.0 + lambda);
        let det = daa * dbb - jab * jab;
        if det.abs() < 1e-300 {
            break;
        }
        let step_a = (-ga * dbb + gb * jab) / det;
        let step_b = (-gb * daa + ga * jab) / det;
        let (na, nb) = ((a + step_a).max(1e-3), (b + step_b).max(1e-3));
        let candidate = sse(na, nb);
        if candidate < best {
            (a, b) = (na, nb);
            best = candidate;
            lambda = (lambda * 0.5).max(1e-12);
        } else {
            lambda *= 2.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    Ok((a, b, best))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: three rounds of nested grid search over the
    /// same objective.
    fn grid_search_oracle(min_dist: f64, spread: f64) -> (f64, f64) {
        let xs: Vec<f64> =
            (0..GRID_POINTS).map(|i| 3.0 * spread * i as f64 / (GRID_POINTS - 1) as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| if x <= min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
            .collect();
        let sse = |a: f64, b: f64| -> f64 {
            xs.iter()
                .zip(&ys)
                .map(|(&x, &y)| (1.0 / (1.0 + a * x.powf(2.0 * b)) - y).powi(2))
                .sum()
        };
        let (mut a_lo, mut a_hi, mut b_lo, mut b_hi) = (0.05, 10.0, 0.05, 3.0);
        let mut best = (1.0, 1.0);
        for _ in 0..4 {
            let mut best_sse = f64::INFINITY;
            for ia in 0..60 {
                for ib in 0..60 {
                    let a = a_lo + (a_hi - a_lo) * ia as f64 / 59.0;
                    let b = b_lo + (b_hi - b_lo) * ib as f64 / 59.0;
                    let s = sse(a, b);
                    if s < best_sse {
                        best_sse = s;
                        best = (a, b);
                    }
                }
            }
            let (aw, bw) = ((a_hi - a_lo) / 10.0, (b_hi - b_lo) / 10.0);
            a_lo = (best.0 - aw).max(0.01);
            a_hi = best.0 + aw;
            b_lo = (best.1 - bw).max(0.01);
            b_hi = best.1 + bw;
        }
        best
    }

    #[test]
    fn default_parameters_hit_the_known_fit() {
        let (a, b, _) = fit_curve_ab(0.1, 1.0).unwrap();
        assert!((a - 1.577).abs() <= 0.02, "a = {a}");
        assert!((b - 0.895).abs() <= 0.02, "b = {b}");
    }

    #[test]
    fn matches_grid_search_oracle() {
        for (min_dist, spread) in [(0.1, 1.0), (0.5, 1.0), (0.25, 2.0)] {
            let (a, b, _) = fit_curve_ab(min_dist, spread).unwrap();
            let (oa, ob) = grid_search_oracle(min_dist, spread);
            assert!((a - oa).abs() <= 0.02, "min_dist={min_dist}: a {a} vs oracle {oa}");
            assert!((b - ob).abs() <= 0.02, "min_dist={min_dist}: b {b} vs oracle {ob}");
        }
    }

    #[test]
    fn phi_at_zero_is_one() {
        let (a, b, _) = fit_curve_ab(0.1, 1.0).unwrap();
        let phi0 = 1.0 / (1.0 + a * 0.0f64.powf(2.0 * b));
        assert_eq!(phi0, 1.0);
    }

    #[test]
    fn phi_is_monotone_decreasing() {
        let (a, b, _) = fit_curve_ab(0.1, 1.0).unwrap();
        let phi = |x: f64| 1.0 / (1.0 + a * x.powf(2.0 * b));
        let mut prev = phi(0.0);
        for i in 1..100 {
            let v = phi(i as f64 * 0.05);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn larger_min_dist_gives_smaller_a() {
        let sweep = [0.05, 0.1, 0.25, 0.5];
        let fits: Vec<f64> =
            sweep.iter().map(|&md| fit_curve_ab(md, 1.0).unwrap().0).collect();
        for pair in fits.windows(2) {
            assert!(pair[1] < pair[0], "a must fall as min_dist grows: {fits:?}");
        }
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(fit_curve_ab(0.0, 1.0).is_err());
        assert!(fit_curve_ab(11.0, 1.0).is_err());
        assert!(fit_curve_ab(0.1, 0.0).is_err());
    }
}

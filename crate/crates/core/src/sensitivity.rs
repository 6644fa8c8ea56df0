//! High-probability sensitivity of the quantize-and-sum query, measured in
//! integer grid units, and a coupling sampler that checks it empirically.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_all_finite, ensure_unit_open, invalid, Result};
use crate::quantize::QuantizerConfig;
use crate::rng::{domain, seeded, stream_seed};

/// `(Δ₁, Δ₂, Δ∞)` in grid units, valid with probability at least `1 - holds_with_delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBounds {
    pub delta_1: f64,
    pub delta_2: f64,
    pub delta_inf: f64,
    pub holds_with_delta: f64,
}

/// Worst-case bounds over all inputs with `‖x‖₂ ≤ D`, with `q = X^max / (k - 1)`:
///
/// ```text
/// Δ∞ = k + 1
/// Δ₁ = √d D/q + √(2 √d D ln(2/δ) / q) + 4/3 ln(2/δ)
/// Δ₂ = D/q + √(Δ₁ + √(2 √d D ln(2/δ) / q))
/// ```
pub fn sensitivity_bounds(clip_bound: f64, xmax: f64, levels: u32, d: usize, delta: f64) -> Result<SensitivityBounds> {
    if levels < 2 {
        return Err(invalid(format!("need k >= 2, got {levels}")));
    }
    if !(clip_bound.is_finite() && clip_bound >= 0.0) {
        return Err(invalid(format!("D must be nonnegative, got {clip_bound}")));
    }
    if !(xmax.is_finite() && xmax > 0.0) {
        return Err(invalid(format!("X^max must be positive, got {xmax}")));
    }
    if d == 0 {
        return Err(invalid("d must be positive"));
    }
    ensure_unit_open("delta", delta)?;

    let q = xmax / (levels - 1) as f64;
    let log_term = (2.0 / delta).ln();
    let sqrt_d = (d as f64).sqrt();
    let cross = (2.0 * sqrt_d * clip_bound * log_term / q).sqrt();
    let delta_1 = sqrt_d * clip_bound / q + cross + 4.0 / 3.0 * log_term;
    let delta_2 = clip_bound / q + (delta_1 + cross).sqrt();
    Ok(SensitivityBounds {
        delta_1,
        delta_2,
        delta_inf: f64::from(levels) + 1.0,
        holds_with_delta: delta,
    })
}

/// Bounds specific to one neighbouring pair, driven by `x - x'` in units of the grid spacing.
pub fn pairwise_bounds(x: &[f64], x_prime: &[f64], cfg: &QuantizerConfig, delta: f64) -> Result<SensitivityBounds> {
    if x.len() != x_prime.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", x.len(), x_prime.len())));
    }
    ensure_all_finite("x", x)?;
    ensure_all_finite("x_prime", x_prime)?;
    ensure_unit_open("delta", delta)?;

    let spacing = cfg.spacing();
    let (mut l1, mut l2sq, mut linf) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(x_prime) {
        let diff = (cfg.clip(a) - cfg.clip(b)).abs();
        l1 += diff;
        l2sq += diff * diff;
        linf = linf.max(diff);
    }
    let a = l1 / spacing;
    let log_term = (2.0 / delta).ln();
    Ok(SensitivityBounds {
        delta_1: a + (2.0 * a * log_term).sqrt() + 4.0 / 3.0 * log_term,
        delta_2: l2sq.sqrt() / spacing + (a + (8.0 * a * log_term).sqrt() + 4.0 / 3.0 * log_term).sqrt(),
        delta_inf: linf / spacing + 2.0,
        holds_with_delta: delta,
    })
}

/// Jointly sampled quantizations of two inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledPair {
    pub y: Vec<u32>,
    pub y_prime: Vec<u32>,
    pub l1_dist: f64,
    pub l2_dist: f64,
    pub linf_dist: f64,
}

/// Quantizes `x` and `x'` together. Coordinates whose clipped values share a
/// grid cell reuse one uniform draw, so they round apart with probability equal
/// to the gap between their round-up probabilities. Other coordinates are
/// drawn independently. Each marginal matches [`crate::quantize::stochastic_quantize`].
pub fn coupled_quantize_pair<R: Rng + ?Sized>(
    x: &[f64],
    x_prime: &[f64],
    cfg: &QuantizerConfig,
    rng: &mut R,
) -> Result<CoupledPair> {
    if x.len() != x_prime.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", x.len(), x_prime.len())));
    }
    ensure_all_finite("x", x)?;
    ensure_all_finite("x_prime", x_prime)?;

    let mut y = Vec::with_capacity(x.len());
    let mut y_prime = Vec::with_capacity(x.len());
    let (mut l1, mut l2sq, mut linf) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(x_prime) {
        // Order the pair so `hi >= lo`, then map back.
        let swapped = a < b;
        let (hi, lo) = if swapped { (b, a) } else { (a, b) };
        let (r_hi, up_hi) = cfg.locate(cfg.clip(hi));
        let (r_lo, up_lo) = cfg.locate(cfg.clip(lo));
        let (q_hi, q_lo) = if r_hi == r_lo {
            let alpha: f64 = rng.random();
            (r_hi + u32::from(alpha < up_hi), r_lo + u32::from(alpha < up_lo))
        } else {
            let u_hi: f64 = rng.random();
            let u_lo: f64 = rng.random();
            (r_hi + u32::from(u_hi < up_hi), r_lo + u32::from(u_lo < up_lo))
        };
        let (qa, qb) = if swapped { (q_lo, q_hi) } else { (q_hi, q_lo) };
        let gap = f64::from(qa.abs_diff(qb));
        l1 += gap;
        l2sq += gap * gap;
        linf = linf.max(gap);
        y.push(qa);
        y_prime.push(qb);
    }
    Ok(CoupledPair {
        y,
        y_prime,
        l1_dist: l1,
        l2_dist: l2sq.sqrt(),
        linf_dist: linf,
    })
}

pub const MIN_CHECK_TRIALS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCheckReport {
    pub trials: u64,
    pub violations: u64,
    pub violation_frequency: f64,
    /// `δ + 3 sqrt(δ(1-δ)/trials)`.
    pub threshold: f64,
    pub passed: bool,
    pub bounds: SensitivityBounds,
    pub max_l1: f64,
    pub max_l2: f64,
    pub max_linf: f64,
}

/// Samples `trials` coupled pairs and counts how often any of the three
/// pairwise bounds is exceeded.
pub fn empirical_sensitivity_check(
    x: &[f64],
    x_prime: &[f64],
    cfg: &QuantizerConfig,
    delta: f64,
    trials: u64,
    seed: u64,
) -> Result<SensitivityCheckReport> {
    if trials < MIN_CHECK_TRIALS {
        return Err(invalid(format!(
            "need at least {MIN_CHECK_TRIALS} trials, got {trials}"
        )));
    }
    let bounds = pairwise_bounds(x, x_prime, cfg, delta)?;
    // Fixed-size chunks keep the result independent of the thread count.
    const CHUNK: u64 = 1024;
    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<Result<(u64, f64, f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = (0u64, 0.0f64, 0.0f64, 0.0f64);
            for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let mut rng = seeded(stream_seed(seed, domain::TRIALS, t));
                let pair = coupled_quantize_pair(x, x_prime, cfg, &mut rng)?;
                let tol = 1e-9;
                if pair.l1_dist > bounds.delta_1 + tol
                    || pair.l2_dist > bounds.delta_2 + tol
                    || pair.linf_dist > bounds.delta_inf + tol
                {
                    acc.0 += 1;
                }
                acc.1 = acc.1.max(pair.l1_dist);
                acc.2 = acc.2.max(pair.l2_dist);
                acc.3 = acc.3.max(pair.linf_dist);
            }
            Ok(acc)
        })
        .collect();

    let (mut violations, mut max_l1, mut max_l2, mut max_linf) = (0u64, 0.0f64, 0.0f64, 0.0f64);
    for p in partials {
        let (v, a, b, c) = p?;
        violations += v;
        max_l1 = max_l1.max(a);
        max_l2 = max_l2.max(b);
        max_linf = max_linf.max(c);
    }
    let violation_frequency = violations as f64 / trials as f64;
    let threshold = delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
    Ok(SensitivityCheckReport {
        trials,
        violations,
        violation_frequency,
        threshold,
        passed: violation_frequency <= threshold,
        bounds,
        max_l1,
        max_l2,
        max_linf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::stochastic_quantize;
    use crate::stats::binomial_std_error;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn worst_case_example() {
        let b = sensitivity_bounds(1.0, 1.0, 5, 16, 0.01).unwrap();
        assert_eq!(b.delta_inf, 6.0);
        // Evaluated term by term in extended precision.
        assert_relative_eq!(b.delta_1, 36.085412201147, max_relative = 1e-9);
        assert_relative_eq!(b.delta_2, 11.007595967727, max_relative = 1e-9);
        assert_eq!(sensitivity_bounds(1.0, 1.0, 4, 16, 0.01).unwrap().delta_inf, 5.0);
    }

    #[test]
    fn zero_diameter_collapse() {
        let delta = 1e-3;
        let b = sensitivity_bounds(0.0, 1.0, 8, 100, delta).unwrap();
        let expect = 4.0 / 3.0 * (2.0 / delta).ln();
        assert_relative_eq!(b.delta_1, expect, max_relative = 1e-14);
        assert_relative_eq!(b.delta_2, expect.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn bad_arguments() {
        assert!(sensitivity_bounds(1.0, 1.0, 1, 4, 0.1).is_err());
        assert!(sensitivity_bounds(1.0, 0.0, 4, 4, 0.1).is_err());
        assert!(sensitivity_bounds(1.0, 1.0, 4, 4, 1.0).is_err());
        assert!(sensitivity_bounds(-1.0, 1.0, 4, 4, 0.5).is_err());
    }

    #[test]
    fn identical_inputs_coincide() {
        let cfg = QuantizerConfig::new(6, 1.0).unwrap();
        let x = [0.13, -0.72, 0.5, 0.99, -1.0];
        let mut rng = seeded(4);
        for _ in 0..1000 {
            let p = coupled_quantize_pair(&x, &x, &cfg, &mut rng).unwrap();
            assert_eq!(p.y, p.y_prime);
            assert_eq!(p.l1_dist, 0.0);
        }
        let r = empirical_sensitivity_check(&x, &x, &cfg, 0.01, 2000, 1).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.passed);
    }

    #[test]
    fn same_cell_disagreement_rate() {
        // k = 2 on [-1, 1]: round-up probabilities 0.75 and 0.65.
        let cfg = QuantizerConfig::new(2, 1.0).unwrap();
        let mut rng = seeded(8);
        let trials = 200_000u64;
        let differ = (0..trials)
            .filter(|_| coupled_quantize_pair(&[0.5], &[0.3], &cfg, &mut rng).unwrap().linf_dist == 1.0)
            .count();
        let freq = differ as f64 / trials as f64;
        assert!(
            (freq - 0.10).abs() < 3.0 * binomial_std_error(0.10, trials),
            "freq {freq}"
        );
    }

    #[test]
    fn marginals_match_quantizer() {
        let cfg = QuantizerConfig::new(3, 1.0).unwrap();
        let x = [0.2, -0.4, 0.9];
        let xp = [-0.6, -0.3, 0.1];
        let trials = 100_000;
        let mut coupled = [[0.0f64; 3]; 3];
        let mut direct = [[0.0f64; 3]; 3];
        let mut rng = seeded(12);
        for _ in 0..trials {
            let p = coupled_quantize_pair(&x, &xp, &cfg, &mut rng).unwrap();
            let q = stochastic_quantize(&x, &cfg, &mut rng).unwrap();
            for j in 0..3 {
                coupled[j][p.y[j] as usize] += 1.0 / trials as f64;
                direct[j][q.levels[j] as usize] += 1.0 / trials as f64;
            }
        }
        for j in 0..3 {
            assert!(crate::stats::total_variation(&coupled[j], &direct[j]) < 0.01);
        }
    }

    #[test]
    fn single_coordinate_linf_slack() {
        let cfg = QuantizerConfig::new(7, 1.0).unwrap();
        let mut rng = seeded(2);
        for i in 0..2000 {
            let a = -1.0 + 2.0 * ((i * 37) % 101) as f64 / 100.0;
            let b = -1.0 + 2.0 * ((i * 53) % 97) as f64 / 96.0;
            let p = coupled_quantize_pair(&[a], &[b], &cfg, &mut rng).unwrap();
            assert!(p.linf_dist <= (a - b).abs() / cfg.spacing() + 2.0 + 1e-12);
        }
    }

    #[test]
    fn too_few_trials_rejected() {
        let cfg = QuantizerConfig::new(2, 1.0).unwrap();
        assert!(empirical_sensitivity_check(&[0.0], &[0.1], &cfg, 0.1, 999, 0).is_err());
    }

    #[test]
    fn check_is_deterministic() {
        let cfg = QuantizerConfig::new(4, 1.0).unwrap();
        let x = [0.3, -0.2, 0.1, 0.0];
        let xp = [-0.3, 0.2, 0.4, -0.1];
        let a = empirical_sensitivity_check(&x, &xp, &cfg, 0.05, 5000, 9).unwrap();
        let b = empirical_sensitivity_check(&x, &xp, &cfg, 0.05, 5000, 9).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn monotone_in_diameter_and_grid(
            d in 1usize..512,
            k in 2u32..64,
            dd in 0.01f64..10.0,
            scale in 1.01f64..4.0,
            delta in 1e-9f64..0.5,
        ) {
            let base = sensitivity_bounds(dd, 1.0, k, d, delta).unwrap();
            let wider = sensitivity_bounds(dd * scale, 1.0, k, d, delta).unwrap();
            prop_assert!(wider.delta_1 >= base.delta_1);
            prop_assert!(wider.delta_2 >= base.delta_2);
            // Larger X^max means larger q.
            let coarser = sensitivity_bounds(dd, scale, k, d, delta).unwrap();
            prop_assert!(coarser.delta_1 <= base.delta_1);
            prop_assert!(coarser.delta_2 <= base.delta_2);
        }

        #[test]
        fn worst_case_dominates_pairwise(
            k in 2u32..32,
            raw_a in prop::collection::vec(-1.0f64..1.0, 1..40),
            raw_b in prop::collection::vec(-1.0f64..1.0, 1..40),
            radius in 0.05f64..2.0,
            xmax_scale in 0.05f64..2.0,
            delta in 1e-9f64..0.5,
        ) {
            let d = raw_a.len().min(raw_b.len());
            let normalize = |v: &[f64]| {
                let n = crate::stats::l2_norm(v).max(1e-12);
                v.iter().map(|x| x * radius / n).collect::<Vec<f64>>()
            };
            let a = normalize(&raw_a[..d]);
            let b = normalize(&raw_b[..d]);
            let xmax = radius * xmax_scale;
            let cfg = QuantizerConfig::new(k, xmax).unwrap();
            let worst = sensitivity_bounds(radius, xmax, k, d, delta).unwrap();
            let pair = pairwise_bounds(&a, &b, &cfg, delta).unwrap();
            let tol = 1e-9 * (1.0 + worst.delta_1);
            prop_assert!(pair.delta_1 <= worst.delta_1 + tol);
            prop_assert!(pair.delta_2 <= worst.delta_2 + tol);
            prop_assert!(pair.delta_inf <= worst.delta_inf + 1e-9);
        }
    }
}

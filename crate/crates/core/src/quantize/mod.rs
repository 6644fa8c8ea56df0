//! k-level stochastic quantization onto the grid
//! `B(r) = -X^max + r * 2 X^max / (k - 1)` and additive Binomial noise.

pub mod wire;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_all_finite, ensure_unit_open, invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    levels: u32,
    xmax: f64,
}

impl QuantizerConfig {
    pub fn new(levels: u32, xmax: f64) -> Result<Self> {
        if levels < 2 {
            return Err(invalid(format!("need at least 2 quantization levels, got {levels}")));
        }
        if !(xmax.is_finite() && xmax > 0.0) {
            return Err(invalid(format!("X^max must be positive and finite, got {xmax}")));
        }
        Ok(Self { levels, xmax })
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    /// Distance between adjacent grid points, `2 X^max / (k - 1)`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.xmax / (self.levels - 1) as f64
    }

    pub fn bin(&self, r: u64) -> f64 {
        -self.xmax + r as f64 * self.spacing()
    }

    /// Lower grid index `r` with `x` in `[B(r), B(r+1)]` and the probability
    /// of rounding up. `x` must already be clipped.
    pub(crate) fn locate(&self, x: f64) -> (u32, f64) {
        let top = (self.levels - 1) as f64;
        let mut t = (x + self.xmax) * top / (2.0 * self.xmax);
        // Snap values that sit on a grid point up to rounding error.
        let nearest = t.round();
        if (t - nearest).abs() <= 4.0 * f64::EPSILON * nearest.max(1.0) {
            t = nearest;
        }
        let t = t.clamp(0.0, top);
        let r = (t.floor() as u32).min(self.levels - 2);
        (r, (t - r as f64).clamp(0.0, 1.0))
    }

    pub fn clip(&self, x: f64) -> f64 {
        x.clamp(-self.xmax, self.xmax)
    }
}

/// Output of [`stochastic_quantize`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quantized {
    pub levels: Vec<u32>,
    /// Coordinates that fell outside `[-X^max, X^max]` and were clamped.
    pub clip_events: usize,
}

/// Clamps every coordinate to `[-X^max, X^max]`, then rounds it to one of the
/// two neighbouring grid points with probabilities that keep `E[B(U)] = x`.
pub fn stochastic_quantize<R: Rng + ?Sized>(x: &[f64], cfg: &QuantizerConfig, rng: &mut R) -> Result<Quantized> {
    ensure_all_finite("x", x)?;
    let mut clip_events = 0;
    let levels = x
        .iter()
        .map(|&v| {
            let c = cfg.clip(v);
            if c != v {
                clip_events += 1;
            }
            let (r, up) = cfg.locate(c);
            r + u32::from(rng.random::<f64>() < up)
        })
        .collect();
    Ok(Quantized { levels, clip_events })
}

/// Adds independent `Bin(m, p)` draws to every level.
pub fn add_binomial_noise<R: Rng + ?Sized>(levels: &[u32], m: u64, p: f64, rng: &mut R) -> Result<Vec<u64>> {
    ensure_unit_open("p", p)?;
    if m == 0 {
        return Ok(levels.iter().map(|&l| u64::from(l)).collect());
    }
    let dist = Binomial::new(m, p).map_err(|e| invalid(format!("binomial({m}, {p}): {e}")))?;
    Ok(levels.iter().map(|&l| u64::from(l) + dist.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::stats::Welford;

    #[test]
    fn config_validation() {
        assert!(QuantizerConfig::new(1, 1.0).is_err());
        assert!(QuantizerConfig::new(2, 0.0).is_err());
        assert!(QuantizerConfig::new(2, f64::NAN).is_err());
        let c = QuantizerConfig::new(5, 2.0).unwrap();
        assert_eq!(c.spacing(), 1.0);
        assert_eq!(c.bin(0), -2.0);
        assert_eq!(c.bin(4), 2.0);
    }

    #[test]
    fn boundaries_are_deterministic() {
        let cfg = QuantizerConfig::new(3, 1.0).unwrap();
        let mut rng = seeded(1);
        for _ in 0..1000 {
            let q = stochastic_quantize(&[-1.0, 1.0, 0.0, -7.0, 3.0], &cfg, &mut rng).unwrap();
            assert_eq!(q.levels, vec![0, 2, 1, 0, 2]);
            assert_eq!(q.clip_events, 2);
        }
    }

    #[test]
    fn grid_points_map_to_themselves() {
        let cfg = QuantizerConfig::new(11, 0.1).unwrap();
        let mut rng = seeded(3);
        let pts: Vec<f64> = (0..11).map(|r| cfg.bin(r)).collect();
        for _ in 0..200 {
            let q = stochastic_quantize(&pts, &cfg, &mut rng).unwrap();
            assert_eq!(q.levels, (0..11).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn midpoint_splits_evenly() {
        let cfg = QuantizerConfig::new(3, 1.0).unwrap();
        let mut rng = seeded(5);
        let trials = 200_000;
        let ups = (0..trials)
            .filter(|_| stochastic_quantize(&[0.5], &cfg, &mut rng).unwrap().levels[0] == 2)
            .count();
        let freq = ups as f64 / trials as f64;
        let se = (0.25f64 / trials as f64).sqrt();
        assert!((freq - 0.5).abs() < 4.0 * se, "freq {freq}");
    }

    #[test]
    fn two_level_probability_and_mean() {
        // x = 0.3 on [-1, 1] with k = 2: P(level 1) = (0.3 + 1) / 2 = 0.65.
        let cfg = QuantizerConfig::new(2, 1.0).unwrap();
        let mut rng = seeded(11);
        let trials = 1_000_000u64;
        let mut w = Welford::new();
        let mut ups = 0u64;
        for _ in 0..trials {
            let l = stochastic_quantize(&[0.3], &cfg, &mut rng).unwrap().levels[0];
            ups += u64::from(l);
            w.push(cfg.bin(u64::from(l)));
        }
        let freq = ups as f64 / trials as f64;
        assert!((freq - 0.65).abs() < 3.0 * crate::stats::binomial_std_error(0.65, trials));
        assert!((w.mean() - 0.3).abs() < 3.0 * w.std_error(), "mean {}", w.mean());
    }

    #[test]
    fn rejects_non_finite() {
        let cfg = QuantizerConfig::new(2, 1.0).unwrap();
        assert!(stochastic_quantize(&[f64::NAN], &cfg, &mut seeded(0)).is_err());
    }

    #[test]
    fn zero_trials_is_identity() {
        let v = add_binomial_noise(&[0, 3, 7], 0, 0.5, &mut seeded(0)).unwrap();
        assert_eq!(v, vec![0, 3, 7]);
        assert!(add_binomial_noise(&[0], 1, 1.5, &mut seeded(0)).is_err());
    }

    #[test]
    fn noise_stays_in_range() {
        let mut rng = seeded(9);
        let v = add_binomial_noise(&vec![2u32; 10_000], 5, 0.3, &mut rng).unwrap();
        assert!(v.iter().all(|&x| (2..=7).contains(&x)));
    }

    #[test]
    fn large_trial_noise_moments() {
        // m = 10^6, p = 1/2: mean 5e5, variance 2.5e5.
        let (m, p, trials) = (1_000_000u64, 0.5, 20_000usize);
        let mut rng = seeded(21);
        let draws = add_binomial_noise(&vec![0u32; trials], m, p, &mut rng).unwrap();
        let w: Welford = draws.iter().map(|&v| v as f64).collect();
        let sd = (m as f64 * p * (1.0 - p)).sqrt();
        assert!((w.mean() - m as f64 * p).abs() < 3.0 * sd / (trials as f64).sqrt());
        assert!((w.variance() / (sd * sd) - 1.0).abs() < 0.05);
    }
}

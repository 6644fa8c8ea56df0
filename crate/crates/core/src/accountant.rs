//! Privacy accounting for the Gaussian and Binomial mechanisms.
//!
//! All functions here are pure. Logs are natural logs throughout.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_unit_open, invalid, Result};
use crate::sensitivity::SensitivityBounds;

/// An `(epsilon, delta)` guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        ensure_unit_open("delta", delta)?;
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub sigma: f64,
}

/// Parameters of the Binomial mechanism `f(D) + (Z - N p) * s`, `Z ~ Bin(N, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialSpec {
    trials: u64,
    success_prob: f64,
    scale: f64,
}

impl BinomialSpec {
    pub fn new(trials: u64, success_prob: f64, scale: f64) -> Result<Self> {
        if trials == 0 {
            return Err(invalid("binomial trials N must be at least 1"));
        }
        ensure_unit_open("p", success_prob)?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid(format!("scale s must be positive and finite, got {scale}")));
        }
        Ok(Self {
            trials,
            success_prob,
            scale,
        })
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn success_prob(&self) -> f64 {
        self.success_prob
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `N p (1 - p)`, the variance of one unscaled noise coordinate.
    pub fn variance_units(&self) -> f64 {
        self.trials as f64 * self.success_prob * (1.0 - self.success_prob)
    }

    /// Standard deviation of one scaled noise coordinate, `s * sqrt(N p (1-p))`.
    pub fn sigma(&self) -> f64 {
        self.scale * self.variance_units().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialConstants {
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDetail {
    pub name: String,
    pub required: f64,
    pub actual: f64,
    pub ok: bool,
}

/// Outcome of [`binomial_epsilon`].
///
/// `epsilon` is the sum of the three terms when every condition holds and
/// `+inf` otherwise; the terms are always filled in for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub term_gaussian_like: f64,
    pub term_l2_l1: f64,
    pub term_linf: f64,
    pub conditions_ok: bool,
    pub condition_details: Vec<ConditionDetail>,
}

impl EpsilonReport {
    pub fn failed_conditions(&self) -> impl Iterator<Item = &ConditionDetail> {
        self.condition_details.iter().filter(|c| !c.ok)
    }
}

/// Result of the Gaussian mechanism bound. `precondition_ok` is false when
/// `sigma < delta_2 * sqrt(2 log(1.25/delta))`, where the bound is not proven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianGuarantee {
    pub epsilon: f64,
    pub precondition_ok: bool,
}

fn gaussian_factor(delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt()
}

/// `epsilon = (delta_2 / sigma) * sqrt(2 log(1.25 / delta))`.
pub fn gaussian_epsilon(delta_2: f64, sigma: f64, delta: f64) -> Result<GaussianGuarantee> {
    ensure_finite("delta_2", delta_2)?;
    ensure_finite("sigma", sigma)?;
    if delta_2 < 0.0 {
        return Err(invalid("delta_2 must be nonnegative"));
    }
    if sigma <= 0.0 {
        return Err(invalid("sigma must be positive"));
    }
    ensure_unit_open("delta", delta)?;
    let factor = gaussian_factor(delta);
    Ok(GaussianGuarantee {
        epsilon: delta_2 / sigma * factor,
        precondition_ok: sigma >= delta_2 * factor,
    })
}

pub fn gaussian_mechanism_error(d: usize, sigma: f64) -> f64 {
    d as f64 * sigma * sigma
}

/// Guarantee of the client-side Gaussian DME protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianDmeGuarantee {
    pub epsilon: f64,
    /// Mean squared error divided by the dimension, `sigma^2 / n`.
    pub mse_per_d: f64,
    pub precondition_ok: bool,
}

/// Every client adds `N(0, sigma^2)` noise, so the mean carries variance
/// `sigma^2 / n` against an l2 sensitivity of `2D / n`.
pub fn gaussian_dme_epsilon(n: usize, clip_bound: f64, sigma: f64, delta: f64) -> Result<GaussianDmeGuarantee> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    ensure_finite("D", clip_bound)?;
    if clip_bound <= 0.0 {
        return Err(invalid("D must be positive"));
    }
    let rn = (n as f64).sqrt();
    let g = gaussian_epsilon(2.0 * clip_bound / rn, sigma, delta)?;
    Ok(GaussianDmeGuarantee {
        epsilon: g.epsilon,
        mse_per_d: sigma * sigma / n as f64,
        precondition_ok: g.precondition_ok,
    })
}

/// Noise level at which the Gaussian DME protocol spends exactly `epsilon`.
pub fn gaussian_dme_sigma(n: usize, clip_bound: f64, budget: PrivacyBudget) -> f64 {
    2.0 * clip_bound / (n as f64).sqrt() * gaussian_factor(budget.delta()) / budget.epsilon()
}

/// The constants `b_p`, `c_p`, `d_p`, evaluated at `min(p, 1 - p)`.
pub fn binomial_constants(p: f64) -> Result<BinomialConstants> {
    ensure_unit_open("p", p)?;
    let p = p.min(1.0 - p);
    let q = 1.0 - p;
    let sq = p * p + q * q;
    Ok(BinomialConstants {
        b: 2.0 * sq / 3.0 + (1.0 - 2.0 * p),
        c: std::f64::consts::SQRT_2 * (3.0 * p.powi(3) + 3.0 * q.powi(3) + 2.0 * sq),
        d: 4.0 / 3.0 * sq,
    })
}

/// Minimum `N p (1-p)` assumed by the concentration lemma behind the bound.
pub const MIN_VARIANCE_UNITS: f64 = 39.0;

/// Privacy of the `d`-dimensional Binomial mechanism.
///
/// The applicability conditions are evaluated and reported rather than
/// assumed; when any fails the returned `epsilon` is infinite.
pub fn binomial_epsilon(
    spec: &BinomialSpec,
    bounds: &SensitivityBounds,
    d: usize,
    delta: f64,
) -> Result<EpsilonReport> {
    if d == 0 {
        return Err(invalid("dimension d must be positive"));
    }
    ensure_unit_open("delta", delta)?;
    for (name, v) in [
        ("delta_1", bounds.delta_1),
        ("delta_2", bounds.delta_2),
        ("delta_inf", bounds.delta_inf),
    ] {
        ensure_finite(name, v)?;
        if v < 0.0 {
            return Err(invalid(format!("{name} must be nonnegative")));
        }
    }

    let consts = binomial_constants(spec.success_prob())?;
    let var = spec.variance_units();
    let s = spec.scale();
    let d = d as f64;

    let log_125 = (1.25 / delta).ln();
    let log_10 = (10.0 / delta).ln();
    let log_20d = (20.0 * d / delta).ln();

    let term_gaussian_like = bounds.delta_2 * (2.0 * log_125).sqrt() / (s * var.sqrt());
    let term_l2_l1 =
        (bounds.delta_2 * consts.c * log_10.sqrt() + bounds.delta_1 * consts.b) / (s * var * (1.0 - delta / 10.0));
    let term_linf =
        (2.0 / 3.0 * bounds.delta_inf * log_125 + bounds.delta_inf * consts.d * log_20d * log_10) / (s * var);

    let condition = |name: &str, required: f64| ConditionDetail {
        name: name.to_string(),
        required,
        actual: var,
        ok: var >= required,
    };
    let condition_details = vec![
        condition("Np(1-p) >= 23 log(10d/delta)", 23.0 * (10.0 * d / delta).ln()),
        condition("Np(1-p) >= 2 delta_inf / s", 2.0 * bounds.delta_inf / s),
        condition("Np(1-p) >= 39", MIN_VARIANCE_UNITS),
    ];
    let conditions_ok = condition_details.iter().all(|c| c.ok);

    Ok(EpsilonReport {
        epsilon: if conditions_ok {
            term_gaussian_like + term_l2_l1 + term_linf
        } else {
            f64::INFINITY
        },
        term_gaussian_like,
        term_l2_l1,
        term_linf,
        conditions_ok,
        condition_details,
    })
}

/// `d * s^2 * N p (1-p)`.
pub fn binomial_mechanism_error(d: usize, spec: &BinomialSpec) -> f64 {
    d as f64 * spec.scale() * spec.scale() * spec.variance_units()
}

/// Basic and advanced composition of `rounds` identical guarantees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComposedBudget {
    pub basic: PrivacyBudget,
    pub advanced: PrivacyBudget,
}

impl ComposedBudget {
    /// Whichever of the two has the smaller epsilon.
    pub fn best(&self) -> PrivacyBudget {
        if self.advanced.epsilon() < self.basic.epsilon() {
            self.advanced
        } else {
            self.basic
        }
    }
}

/// Composes `rounds` runs of a `per_round` mechanism.
///
/// Basic: `(T eps, T delta)`. Advanced:
/// `eps' = sqrt(2 T log(1/delta_slack)) eps + T eps (e^eps - 1)`,
/// `delta' = T delta + delta_slack`.
pub fn compose_rounds(per_round: PrivacyBudget, rounds: u64, delta_slack: f64) -> Result<ComposedBudget> {
    if rounds == 0 {
        return Err(invalid("number of rounds must be at least 1"));
    }
    ensure_unit_open("delta_slack", delta_slack)?;
    let t = rounds as f64;
    let eps = per_round.epsilon();
    let basic = PrivacyBudget::new(t * eps, t * per_round.delta())
        .map_err(|_| invalid(format!("basic composition over {rounds} rounds leaves delta >= 1")))?;
    let adv_eps = (2.0 * t * (1.0 / delta_slack).ln()).sqrt() * eps + t * eps * eps.exp_m1();
    let advanced = PrivacyBudget::new(adv_eps, t * per_round.delta() + delta_slack)
        .map_err(|_| invalid(format!("advanced composition over {rounds} rounds leaves delta >= 1")))?;
    Ok(ComposedBudget { basic, advanced })
}

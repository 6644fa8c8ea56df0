//! Synchronous distributed SGD where each round's gradient mean is released
//! through a DME protocol, with convergence monitoring against the biased-SGD
//! bound `2 D_F L / T + 2√2 σ √(L D_F) / √T + D B`.

pub mod models;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{compose_rounds, gaussian_dme_epsilon, PrivacyBudget};
use crate::dme::{comm_cost_bits, gaussian_dme, privacy_of_run, run_protocol, DmeConfig};
use crate::error::{ensure_all_finite, invalid, Error, Result};
use crate::quantize::wire::Rational;
use crate::rng::{derive_seed, domain, seeded, stream_seed};
use crate::stats::{l2_norm, sq_dist};

pub use models::{gradient_oracle_check, LogisticModel, Model, ModelKind, ModelSpec, QuadraticModel};

/// Rescales `g` onto the `D`-ball when it lies outside.
pub fn clip_gradient(g: &[f64], clip_norm: f64) -> Result<Vec<f64>> {
    ensure_all_finite("gradient", g)?;
    if !(clip_norm.is_finite() && clip_norm > 0.0) {
        return Err(invalid(format!("clip norm must be positive, got {clip_norm}")));
    }
    let norm = l2_norm(g);
    if norm <= clip_norm {
        return Ok(g.to_vec());
    }
    let scale = clip_norm / norm;
    Ok(g.iter().map(|v| v * scale).collect())
}

/// How the server learns the mean of the clipped gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Protocol {
    /// Plain average, no privacy.
    Exact,
    Binomial {
        levels: u32,
        trials: u32,
        p: Rational,
        delta: f64,
        rotate: bool,
    },
    Gaussian {
        sigma: f64,
        delta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub model: ModelSpec,
    pub rounds: u64,
    pub clients_per_round: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub protocol: Protocol,
    /// Extra δ spent by advanced composition.
    pub delta_slack: f64,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.rounds == 0 {
            problems.push("rounds must be at least 1".to_string());
        }
        if self.model.dim == 0 {
            problems.push("model dimension must be at least 1".to_string());
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.model.clients {
            problems.push(format!(
                "clients per round must lie in 1..={}, got {}",
                self.model.clients, self.clients_per_round
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            problems.push(format!("learning rate must be nonnegative, got {}", self.learning_rate));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            problems.push(format!("clip norm must be positive, got {}", self.clip_norm));
        }
        if !(self.delta_slack > 0.0 && self.delta_slack < 1.0) {
            problems.push(format!("delta slack must lie in (0, 1), got {}", self.delta_slack));
        }
        match self.protocol {
            Protocol::Exact => {}
            Protocol::Binomial { .. } => {
                if let Err(Error::InvalidConfig(v)) = self.dme_config(0).validate() {
                    problems.extend(v);
                }
            }
            Protocol::Gaussian { sigma, delta } => {
                if !(sigma.is_finite() && sigma >= 0.0) {
                    problems.push(format!("sigma must be nonnegative, got {sigma}"));
                }
                if !(delta > 0.0 && delta < 1.0) {
                    problems.push(format!("delta must lie in (0, 1), got {delta}"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    fn round_seed(&self, round: u64) -> u64 {
        stream_seed(self.seed, domain::ROUNDS, round)
    }

    /// The DME round configuration; meaningful for the Binomial protocol only.
    pub fn dme_config(&self, round: u64) -> DmeConfig {
        let (levels, trials, p, delta, rotate) = match self.protocol {
            Protocol::Binomial {
                levels,
                trials,
                p,
                delta,
                rotate,
            } => (levels, trials, p, delta, rotate),
            _ => (2, 0, Rational::HALF, 0.5, false),
        };
        DmeConfig {
            n: self.clients_per_round,
            d: self.model.dim,
            clip_bound: self.clip_norm,
            levels,
            trials,
            p,
            delta,
            rotate,
            master_seed: derive_seed(self.round_seed(round), 1),
        }
    }
}

/// Privacy of one round; `epsilon` is infinite when no guarantee applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundPrivacy {
    pub epsilon: f64,
    pub delta: f64,
}

pub fn round_privacy(cfg: &TrainingConfig) -> Result<RoundPrivacy> {
    match cfg.protocol {
        Protocol::Exact => Ok(RoundPrivacy {
            epsilon: f64::INFINITY,
            delta: 0.0,
        }),
        Protocol::Binomial { .. } => {
            let r = privacy_of_run(&cfg.dme_config(0))?;
            Ok(RoundPrivacy {
                epsilon: r.report.epsilon,
                delta: r.delta_total,
            })
        }
        Protocol::Gaussian { sigma, delta } => {
            let g = gaussian_dme_epsilon(cfg.clients_per_round, cfg.clip_norm, sigma, delta)?;
            let epsilon = if g.precondition_ok { g.epsilon } else { f64::INFINITY };
            Ok(RoundPrivacy { epsilon, delta })
        }
    }
}

/// `(basic ε, advanced ε, T δ + δ_slack)` after `rounds` rounds.
pub fn composed_after(per_round: RoundPrivacy, rounds: u64, delta_slack: f64) -> (f64, f64, f64) {
    let delta_total = rounds as f64 * per_round.delta + delta_slack;
    match PrivacyBudget::new(per_round.epsilon, per_round.delta.max(f64::MIN_POSITIVE)) {
        Ok(b) => match compose_rounds(b, rounds, delta_slack) {
            Ok(c) => (c.basic.epsilon(), c.advanced.epsilon(), delta_total),
            Err(_) => (rounds as f64 * per_round.epsilon, f64::INFINITY, delta_total),
        },
        Err(_) => (f64::INFINITY, f64::INFINITY, delta_total),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: u64,
    /// `F(w^t)` over the full population.
    pub loss: f64,
    /// `‖∇F(w^t)‖²`.
    pub grad_norm_sq: f64,
    /// `‖g - ∇F(w^t)‖²` for the clipped sampled mean `g`.
    pub sampling_err_sq: f64,
    /// `‖g̃ - g‖²` for the released estimate `g̃`.
    pub mse_round: f64,
    /// `g - g̃`.
    pub dme_error: Vec<f64>,
    pub comm_bits_round: u64,
    pub clip_events: usize,
}

/// One step `w - γ g̃` at `w = w^t`.
pub fn sgd_round(model: &dyn Model, w: &[f64], cfg: &TrainingConfig, round: u64) -> Result<(Vec<f64>, RoundStats)> {
    if w.len() != model.dim() {
        return Err(invalid(format!("expected dimension {}, got {}", model.dim(), w.len())));
    }
    let mut rng = seeded(cfg.round_seed(round));
    let chosen = sample(&mut rng, model.num_clients(), cfg.clients_per_round).into_vec();
    let grads: Vec<Vec<f64>> = chosen
        .par_iter()
        .map(|&i| clip_gradient(&model.client_grad(i, w), cfg.clip_norm))
        .collect::<Result<_>>()?;
    let n = grads.len() as f64;
    let mut exact = vec![0.0; w.len()];
    for g in &grads {
        for (a, b) in exact.iter_mut().zip(g) {
            *a += b;
        }
    }
    exact.iter_mut().for_each(|v| *v /= n);

    let (estimate, comm_bits_round, clip_events) = match cfg.protocol {
        Protocol::Exact => (exact.clone(), 64 * (w.len() * grads.len()) as u64, 0),
        Protocol::Binomial { .. } => {
            let dme = cfg.dme_config(round);
            let r = run_protocol(&grads, &dme)?;
            (r.estimate, comm_cost_bits(&dme), r.clip_events)
        }
        Protocol::Gaussian { sigma, .. } => (
            gaussian_dme(&grads, sigma, &mut rng)?,
            64 * (w.len() * grads.len()) as u64,
            0,
        ),
    };
    let full = model.full_grad(w);
    let next: Vec<f64> = w
        .iter()
        .zip(&estimate)
        .map(|(a, g)| a - cfg.learning_rate * g)
        .collect();
    let stats = RoundStats {
        round,
        loss: model.loss(w),
        grad_norm_sq: full.iter().map(|v| v * v).sum(),
        sampling_err_sq: sq_dist(&exact, &full),
        mse_round: sq_dist(&estimate, &exact),
        dme_error: exact.iter().zip(&estimate).map(|(a, b)| a - b).collect(),
        comm_bits_round,
        clip_events,
    };
    Ok((next, stats))
}

/// Measured inputs to the convergence bound and the bound itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub runs: usize,
    pub rounds: u64,
    pub smoothness: Option<f64>,
    /// `F(w⁰) - inf F` (an upper bound when only a lower bound on `inf F` is known).
    pub d_f: f64,
    /// Bound on `‖∇F‖` along the trajectories: `max(D_clip, max_t ‖∇F(w^t)‖)`.
    pub grad_bound: f64,
    /// `2 max_t E‖g - ∇F‖²`.
    pub sigma_sq_sampling: f64,
    /// `2 max_t E‖g - g̃‖²`.
    pub sigma_sq_quantization: f64,
    pub sigma_sq: f64,
    /// `max_t ‖E[g - g̃]‖`.
    pub bias_b: f64,
    /// `E_{t ~ Unif[T]} ‖∇F(w^t)‖²`, averaged over runs.
    pub avg_grad_norm_sq: f64,
    pub bound: Option<f64>,
}

pub fn corollary_bound(smoothness: f64, d_f: f64, sigma: f64, rounds: u64, grad_bound: f64, bias: f64) -> f64 {
    let t = rounds as f64;
    2.0 * d_f * smoothness / t
        + 2.0 * std::f64::consts::SQRT_2 * sigma * (smoothness * d_f).sqrt() / t.sqrt()
        + grad_bound * bias
}

/// `min(1/L, √(2 D_F) / (σ √(L T)))`.
pub fn prescribed_learning_rate(smoothness: f64, d_f: f64, sigma: f64, rounds: u64) -> f64 {
    let inv_l = 1.0 / smoothness;
    if sigma <= 0.0 {
        return inv_l;
    }
    inv_l.min((2.0 * d_f).sqrt() / (sigma * (smoothness * rounds as f64).sqrt()))
}

/// Expectations over runs per round, then maxima over rounds.
pub fn convergence_report(
    model: &dyn Model,
    cfg: &TrainingConfig,
    runs: &[Vec<RoundStats>],
) -> Result<ConvergenceReport> {
    let r = runs.len();
    if r == 0 || runs.iter().any(|v| v.len() as u64 != cfg.rounds) {
        return Err(invalid("every run must cover all rounds"));
    }
    let d = model.dim();
    let mut sampling = 0.0f64;
    let mut quant = 0.0f64;
    let mut bias = 0.0f64;
    let mut max_grad = 0.0f64;
    for t in 0..cfg.rounds as usize {
        let mean_s = runs.iter().map(|v| v[t].sampling_err_sq).sum::<f64>() / r as f64;
        let mean_q = runs.iter().map(|v| v[t].mse_round).sum::<f64>() / r as f64;
        let mut mean_err = vec![0.0; d];
        for v in runs {
            for (a, b) in mean_err.iter_mut().zip(&v[t].dme_error) {
                *a += b / r as f64;
            }
            max_grad = max_grad.max(v[t].grad_norm_sq.sqrt());
        }
        sampling = sampling.max(mean_s);
        quant = quant.max(mean_q);
        bias = bias.max(l2_norm(&mean_err));
    }
    let avg = runs
        .iter()
        .map(|v| v.iter().map(|s| s.grad_norm_sq).sum::<f64>() / v.len() as f64)
        .sum::<f64>()
        / r as f64;
    let d_f = (model.loss(&model.initial_point()) - model.loss_lower_bound()).max(0.0);
    let sigma_sq = 2.0 * sampling + 2.0 * quant;
    let grad_bound = cfg.clip_norm.max(max_grad);
    let smoothness = model.smoothness();
    Ok(ConvergenceReport {
        runs: r,
        rounds: cfg.rounds,
        smoothness,
        d_f,
        grad_bound,
        sigma_sq_sampling: 2.0 * sampling,
        sigma_sq_quantization: 2.0 * quant,
        sigma_sq,
        bias_b: bias,
        avg_grad_norm_sq: avg,
        bound: smoothness.map(|l| corollary_bound(l, d_f, sigma_sq.sqrt(), cfg.rounds, grad_bound, bias)),
    })
}

/// Composed privacy after every round, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComposedPoint {
    pub epsilon_basic: f64,
    pub epsilon_advanced: f64,
    pub delta_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub rounds: Vec<RoundStats>,
    pub composed: Vec<ComposedPoint>,
    pub round_privacy: RoundPrivacy,
    pub final_w: Vec<f64>,
    pub convergence: ConvergenceReport,
}

impl TrainingReport {
    pub fn final_privacy(&self) -> ComposedPoint {
        *self.composed.last().expect("at least one round")
    }
}

fn train_rounds(model: &dyn Model, cfg: &TrainingConfig) -> Result<(Vec<RoundStats>, Vec<f64>)> {
    let mut w = model.initial_point();
    let mut stats = Vec::with_capacity(cfg.rounds as usize);
    for t in 0..cfg.rounds {
        let (next, s) = sgd_round(model, &w, cfg, t)?;
        stats.push(s);
        w = next;
    }
    Ok((stats, w))
}

pub fn run_training_with(model: &dyn Model, cfg: &TrainingConfig) -> Result<TrainingReport> {
    cfg.validate()?;
    if model.dim() != cfg.model.dim || model.num_clients() != cfg.model.clients {
        return Err(invalid(
            "model does not match the configuration's dimension or client count",
        ));
    }
    let privacy = round_privacy(cfg)?;
    let (rounds, final_w) = train_rounds(model, cfg)?;
    let composed = (1..=cfg.rounds)
        .map(|t| {
            let (b, a, d) = composed_after(privacy, t, cfg.delta_slack);
            ComposedPoint {
                epsilon_basic: b,
                epsilon_advanced: a,
                delta_total: d,
            }
        })
        .collect();
    let convergence = convergence_report(model, cfg, std::slice::from_ref(&rounds))?;
    Ok(TrainingReport {
        rounds,
        composed,
        round_privacy: privacy,
        final_w,
        convergence,
    })
}

pub fn run_training(cfg: &TrainingConfig) -> Result<TrainingReport> {
    let model = cfg.model.build()?;
    run_training_with(model.as_ref(), cfg)
}

/// `2 E‖g - ∇F‖² + 2 E‖g - g̃‖²` at `w⁰` over `probes` independent rounds.
pub fn pilot_sigma_sq(model: &dyn Model, cfg: &TrainingConfig, probes: u64) -> Result<f64> {
    if probes == 0 {
        return Err(invalid("need at least one probe"));
    }
    let probe_cfg = TrainingConfig {
        seed: derive_seed(cfg.seed, 0x0050_494C_4F54),
        ..*cfg
    };
    let w0 = model.initial_point();
    let stats: Vec<RoundStats> = (0..probes)
        .into_par_iter()
        .map(|p| sgd_round(model, &w0, &probe_cfg, p).map(|(_, s)| s))
        .collect::<Result<_>>()?;
    let k = probes as f64;
    Ok(2.0 * stats.iter().map(|s| s.sampling_err_sq).sum::<f64>() / k
        + 2.0 * stats.iter().map(|s| s.mse_round).sum::<f64>() / k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub learning_rate: f64,
    pub per_run_avg_grad_norm_sq: Vec<f64>,
    pub std_error: f64,
    pub convergence: ConvergenceReport,
    /// `avg_grad_norm_sq <= bound`; false when no bound is available.
    pub holds: bool,
}

/// Runs `runs` seeded trainings (run `r` uses seed `stream_seed(seed, TRIALS, r)`)
/// on one model and evaluates the bound with the measured `σ²` and `B`.
pub fn run_ensemble(cfg: &TrainingConfig, runs: usize) -> Result<EnsembleReport> {
    if runs == 0 {
        return Err(invalid("need at least one run"));
    }
    cfg.validate()?;
    let model = cfg.model.build()?;
    let model = model.as_ref();
    let all: Vec<Vec<RoundStats>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let run_cfg = TrainingConfig {
                seed: stream_seed(cfg.seed, domain::TRIALS, r as u64),
                ..*cfg
            };
            train_rounds(model, &run_cfg).map(|(s, _)| s)
        })
        .collect::<Result<_>>()?;
    let convergence = convergence_report(model, cfg, &all)?;
    let per_run: Vec<f64> = all
        .iter()
        .map(|v| v.iter().map(|s| s.grad_norm_sq).sum::<f64>() / v.len() as f64)
        .collect();
    let w: crate::stats::Welford = per_run.iter().copied().collect();
    Ok(EnsembleReport {
        learning_rate: cfg.learning_rate,
        per_run_avg_grad_norm_sq: per_run,
        std_error: w.std_error(),
        holds: convergence.bound.is_some_and(|b| convergence.avg_grad_norm_sq <= b),
        convergence,
    })
}

/// Sets the learning rate from a pilot estimate of `σ²` at `w⁰`.
pub fn with_prescribed_learning_rate(cfg: &TrainingConfig, probes: u64) -> Result<(TrainingConfig, f64)> {
    let model = cfg.model.build()?;
    let l = model
        .smoothness()
        .ok_or_else(|| invalid("the model has no known smoothness constant"))?;
    let sigma_sq = pilot_sigma_sq(model.as_ref(), cfg, probes)?;
    let d_f = model.loss(&model.initial_point()) - model.loss_lower_bound();
    let lr = prescribed_learning_rate(l, d_f, sigma_sq.sqrt(), cfg.rounds);
    Ok((
        TrainingConfig {
            learning_rate: lr,
            ..*cfg
        },
        sigma_sq,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad_cfg(protocol: Protocol) -> TrainingConfig {
        TrainingConfig {
            model: ModelSpec {
                kind: ModelKind::Quadratic,
                dim: 8,
                clients: 16,
                data_seed: 1,
            },
            rounds: 20,
            clients_per_round: 16,
            learning_rate: 0.5,
            clip_norm: 2.0,
            protocol,
            delta_slack: 1e-6,
            seed: 3,
        }
    }

    fn binomial(levels: u32, trials: u32) -> Protocol {
        Protocol::Binomial {
            levels,
            trials,
            p: Rational::HALF,
            delta: 1e-6,
            rotate: false,
        }
    }

    #[test]
    fn clipping() {
        let g = clip_gradient(&[0.3, 0.4], 1.0).unwrap();
        assert_eq!(g, vec![0.3, 0.4]);
        let g = clip_gradient(&[3.0, 4.0], 2.5).unwrap();
        assert_relative_eq!(l2_norm(&g), 2.5, max_relative = 1e-15);
        assert_relative_eq!(g[0] / g[1], 0.75, max_relative = 1e-15);
        assert!(clip_gradient(&[f64::NAN], 1.0).is_err());
        assert!(clip_gradient(&[1.0], 0.0).is_err());
    }

    #[test]
    fn zero_learning_rate_is_a_fixed_point() {
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            ..quad_cfg(binomial(4, 50))
        };
        let model = cfg.model.build().unwrap();
        let w = model.initial_point();
        let (next, _) = sgd_round(model.as_ref(), &w, &cfg, 0).unwrap();
        assert_eq!(next, w);
    }

    #[test]
    fn exact_descent_decreases_loss() {
        let cfg = quad_cfg(Protocol::Exact);
        let r = run_training(&cfg).unwrap();
        for pair in r.rounds.windows(2) {
            assert!(pair[1].loss < pair[0].loss);
        }
        assert!(r.final_privacy().epsilon_basic.is_infinite());
    }

    #[test]
    fn fine_grid_matches_exact_step() {
        let fine = TrainingConfig {
            rounds: 5,
            ..quad_cfg(binomial(1 << 24, 0))
        };
        let exact = TrainingConfig {
            protocol: Protocol::Exact,
            ..fine
        };
        let a = run_training(&fine).unwrap();
        let b = run_training(&exact).unwrap();
        for (x, y) in a.final_w.iter().zip(&b.final_w) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn full_participation_step_is_closed_form() {
        let cfg = TrainingConfig {
            protocol: Protocol::Exact,
            learning_rate: 0.3,
            ..quad_cfg(Protocol::Exact)
        };
        let model = QuadraticModel::synthetic(8, 16, 1).unwrap();
        let w: Vec<f64> = (0..8).map(|j| 0.1 * j as f64).collect();
        let (next, s) = sgd_round(&model, &w, &cfg, 0).unwrap();
        for j in 0..8 {
            assert_relative_eq!(
                next[j],
                w[j] - 0.3 * (w[j] - model.minimizer()[j]),
                max_relative = 1e-12
            );
        }
        assert!(s.sampling_err_sq < 1e-25);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainingConfig {
            clients_per_round: 6,
            ..quad_cfg(binomial(8, 200))
        };
        assert_eq!(run_training(&cfg).unwrap(), run_training(&cfg).unwrap());
    }

    #[test]
    fn single_round_composition_is_identity() {
        let cfg = TrainingConfig {
            rounds: 1,
            ..quad_cfg(binomial(8, 5000))
        };
        let r = run_training(&cfg).unwrap();
        let p = r.final_privacy();
        assert!(r.round_privacy.epsilon.is_finite());
        assert_relative_eq!(p.epsilon_basic, r.round_privacy.epsilon);
        assert!(p.epsilon_advanced >= p.epsilon_basic);
        assert_relative_eq!(p.delta_total, r.round_privacy.delta + cfg.delta_slack);
    }

    #[test]
    fn validation_lists_problems() {
        let bad = TrainingConfig {
            rounds: 0,
            clients_per_round: 99,
            learning_rate: -1.0,
            clip_norm: 0.0,
            ..quad_cfg(Protocol::Gaussian {
                sigma: -1.0,
                delta: 0.1,
            })
        };
        match bad.validate() {
            Err(Error::InvalidConfig(v)) => assert_eq!(v.len(), 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prescribed_rate() {
        assert_eq!(prescribed_learning_rate(2.0, 1.0, 0.0, 10), 0.5);
        assert_relative_eq!(prescribed_learning_rate(1.0, 0.5, 2.0, 100), 0.05, max_relative = 1e-14);
    }

    #[test]
    fn gaussian_protocol_runs() {
        let cfg = quad_cfg(Protocol::Gaussian {
            sigma: 6.0,
            delta: 1e-6,
        });
        let r = run_training(&cfg).unwrap();
        assert!(r.round_privacy.epsilon.is_finite());
        assert!(r.rounds.iter().all(|s| s.mse_round > 0.0));
    }

    #[test]
    fn logistic_training_makes_progress() {
        let cfg = TrainingConfig {
            model: ModelSpec {
                kind: ModelKind::Logistic,
                dim: 6,
                clients: 40,
                data_seed: 2,
            },
            rounds: 40,
            clients_per_round: 10,
            learning_rate: 1.0,
            ..quad_cfg(binomial(16, 100))
        };
        let r = run_training(&cfg).unwrap();
        assert!(r.rounds.last().unwrap().loss < r.rounds[0].loss);
    }
}

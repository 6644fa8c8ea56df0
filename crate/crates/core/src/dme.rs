//! Distributed mean estimation: client encoding, server aggregation, error and
//! privacy accounting, and parameter selection against the Gaussian baseline.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{binomial_epsilon, gaussian_dme_sigma, BinomialSpec, EpsilonReport, PrivacyBudget};
use crate::error::{ensure_all_finite, invalid, Error, Result};
use crate::quantize::wire::{self, MessageHeader, Rational, HEADER_LEN};
use crate::quantize::{add_binomial_noise, stochastic_quantize, QuantizerConfig};
use crate::rng::{domain, seeded, stream_seed, GENERATOR_CHACHA20};
use crate::sensitivity::sensitivity_bounds;
use crate::stats::{l2_norm, Welford};
use crate::transform::{padded_dim, xmax_bound, Rotation, RotationSeed};

/// Relative slack on the client norm check.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmeConfig {
    pub n: usize,
    pub d: usize,
    pub clip_bound: f64,
    pub levels: u32,
    pub trials: u32,
    pub p: Rational,
    pub delta: f64,
    pub rotate: bool,
    pub master_seed: u64,
}

impl DmeConfig {
    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n == 0 {
            problems.push("n must be at least 1".to_string());
        }
        if self.d == 0 {
            problems.push("d must be at least 1".to_string());
        }
        if !(self.clip_bound.is_finite() && self.clip_bound > 0.0) {
            problems.push(format!("D must be positive and finite, got {}", self.clip_bound));
        }
        if self.levels < 2 {
            problems.push(format!("k must be at least 2, got {}", self.levels));
        }
        if self.p.num == 0 || self.p.num >= self.p.den {
            problems.push(format!("p = {} is not in (0, 1)", self.p));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            problems.push(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.d > 0 && u32::try_from(self.work_dim()).is_err() {
            problems.push(format!("d = {} does not fit the wire format", self.d));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    /// Coordinates on the wire: the padded dimension when rotating.
    pub fn work_dim(&self) -> usize {
        if self.rotate {
            padded_dim(self.d)
        } else {
            self.d
        }
    }

    pub fn xmax(&self) -> f64 {
        if self.rotate {
            xmax_bound(self.clip_bound, self.n, self.d, self.delta)
        } else {
            self.clip_bound
        }
    }

    pub fn quantizer(&self) -> Result<QuantizerConfig> {
        QuantizerConfig::new(self.levels, self.xmax())
    }

    pub fn rotation_seed(&self) -> Option<RotationSeed> {
        self.rotate
            .then(|| RotationSeed::new(stream_seed(self.master_seed, domain::ROTATION, 0), self.d).ok())
            .flatten()
    }

    pub fn header(&self) -> MessageHeader {
        let seed = self.rotation_seed();
        MessageHeader {
            rotate: self.rotate,
            dim: self.work_dim() as u32,
            levels: self.levels,
            trials: self.trials,
            p: self.p,
            xmax: self.xmax(),
            generator: if self.rotate { GENERATOR_CHACHA20 } else { 0 },
            seed: seed.map_or(0, |s| s.seed()),
        }
    }

    /// 2 without rotation, 3 with it.
    pub fn delta_multiplier(&self) -> u32 {
        if self.rotate {
            3
        } else {
            2
        }
    }
}

/// Bytes sent by one client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedMessage {
    pub bytes: Vec<u8>,
    pub clip_events: usize,
}

/// Client side with the rotation materialized once.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: DmeConfig,
    quantizer: QuantizerConfig,
    header: MessageHeader,
    rotation: Option<Rotation>,
}

impl Encoder {
    pub fn new(cfg: &DmeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: *cfg,
            quantizer: cfg.quantizer()?,
            header: cfg.header(),
            rotation: cfg.rotation_seed().map(|s| Rotation::from_seed(&s)),
        })
    }

    /// Rotate, clip, quantize, add `Bin(m, p)` and pack. Deterministic in
    /// `(cfg, client_index, x)`.
    pub fn encode(&self, x: &[f64], client_index: u64) -> Result<EncodedMessage> {
        if x.len() != self.cfg.d {
            return Err(invalid(format!("expected dimension {}, got {}", self.cfg.d, x.len())));
        }
        ensure_all_finite("x", x)?;
        let norm = l2_norm(x);
        if norm > self.cfg.clip_bound * (1.0 + NORM_TOLERANCE) {
            return Err(invalid(format!(
                "client norm {norm} exceeds D = {}",
                self.cfg.clip_bound
            )));
        }
        let rotated;
        let work: &[f64] = match &self.rotation {
            Some(r) => {
                rotated = r.apply(x)?.values;
                &rotated
            }
            None => x,
        };
        let mut rng = seeded(stream_seed(self.cfg.master_seed, domain::CLIENTS, client_index));
        let q = stochastic_quantize(work, &self.quantizer, &mut rng)?;
        let noisy = add_binomial_noise(&q.levels, u64::from(self.cfg.trials), self.cfg.p.value(), &mut rng)?;
        let bytes = wire::encode_message(&noisy, &self.header)?;
        Ok(EncodedMessage {
            bytes,
            clip_events: q.clip_events,
        })
    }
}

pub fn client_encode(x: &[f64], cfg: &DmeConfig, client_index: u64) -> Result<EncodedMessage> {
    Encoder::new(cfg)?.encode(x, client_index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPrivacy {
    pub report: EpsilonReport,
    pub delta_total: f64,
    pub delta_multiplier: u32,
}

/// Server-side output of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmeResult {
    pub estimate: Vec<f64>,
    pub comm_bits_total: u64,
    /// Filled in by [`run_protocol`]; the server cannot observe clipping.
    pub clip_events: usize,
    pub epsilon_report: EpsilonReport,
    pub mse_bound: f64,
    pub delta_multiplier: u32,
}

/// Streaming server: integer sums per coordinate, so the result does not
/// depend on message order.
#[derive(Debug, Clone)]
pub struct Aggregator {
    cfg: DmeConfig,
    header: MessageHeader,
    sums: Vec<u128>,
    received: usize,
    bytes_received: u64,
}

impl Aggregator {
    pub fn new(cfg: &DmeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: *cfg,
            header: cfg.header(),
            sums: vec![0; cfg.work_dim()],
            received: 0,
            bytes_received: 0,
        })
    }

    pub fn received(&self) -> usize {
        self.received
    }

    pub fn push(&mut self, bytes: &[u8]) -> Result<()> {
        if self.received == self.cfg.n {
            return Err(Error::Protocol(format!("more than n = {} messages", self.cfg.n)));
        }
        let msg = wire::decode_message(bytes)?;
        if msg.header != self.header {
            return Err(Error::Protocol(format!(
                "message {} header {:?} differs from the round's {:?}",
                self.received, msg.header, self.header
            )));
        }
        for (s, v) in self.sums.iter_mut().zip(&msg.values) {
            *s += u128::from(*v);
        }
        self.received += 1;
        self.bytes_received += bytes.len() as u64;
        Ok(())
    }

    /// `-X + spacing (S_j / n - m p)` per coordinate, evaluated from the
    /// exact integer `S_j den - n m num`, then inverse-rotated if needed.
    pub fn finish(self) -> Result<DmeResult> {
        if self.received != self.cfg.n {
            return Err(Error::Protocol(format!(
                "expected {} messages, got {}",
                self.cfg.n, self.received
            )));
        }
        let cfg = &self.cfg;
        let quantizer = cfg.quantizer()?;
        let spacing = quantizer.spacing();
        let xmax = quantizer.xmax();
        let n = cfg.n as i128;
        let den = i128::from(cfg.p.den);
        let offset = n * i128::from(cfg.trials) * i128::from(cfg.p.num);
        let scale = (n * den) as f64;
        let work: Vec<f64> = self
            .sums
            .iter()
            .map(|&s| {
                let centered = s as i128 * den - offset;
                -xmax + spacing * (centered as f64 / scale)
            })
            .collect();
        let estimate = match cfg.rotation_seed() {
            Some(seed) => Rotation::from_seed(&seed).invert_values(&work, cfg.d)?,
            None => work,
        };
        let privacy = privacy_of_run(cfg)?;
        Ok(DmeResult {
            estimate,
            comm_bits_total: self.bytes_received * 8,
            clip_events: 0,
            epsilon_report: privacy.report,
            mse_bound: theoretical_mse_bound(cfg),
            delta_multiplier: privacy.delta_multiplier,
        })
    }
}

pub fn server_aggregate<B: AsRef<[u8]>>(messages: &[B], cfg: &DmeConfig) -> Result<DmeResult> {
    if messages.len() != cfg.n {
        return Err(Error::Protocol(format!(
            "expected {} messages, got {}",
            cfg.n,
            messages.len()
        )));
    }
    let mut agg = Aggregator::new(cfg)?;
    for m in messages {
        agg.push(m.as_ref())?;
    }
    agg.finish()
}

/// Encodes every client (in parallel) and aggregates.
pub fn run_protocol(xs: &[Vec<f64>], cfg: &DmeConfig) -> Result<DmeResult> {
    if xs.len() != cfg.n {
        return Err(invalid(format!("expected {} client vectors, got {}", cfg.n, xs.len())));
    }
    let encoder = Encoder::new(cfg)?;
    let messages: Vec<EncodedMessage> = xs
        .par_iter()
        .enumerate()
        .map(|(i, x)| encoder.encode(x, i as u64))
        .collect::<Result<_>>()?;
    let clip_events = messages.iter().map(|m| m.clip_events).sum();
    let mut result = server_aggregate(&messages.iter().map(|m| &m.bytes[..]).collect::<Vec<_>>(), cfg)?;
    result.clip_events = clip_events;
    Ok(result)
}

/// Upper bound on `E‖x̂ - x̄‖²`:
///
/// ```text
/// w X² (1 + 4 m p (1-p)) / (n (k-1)²)  [+ 4 D² δ when rotating]
/// ```
///
/// with `w` the number of quantized coordinates. Without rotation `X = D`
/// and `w = d`; with rotation `X` is the concentration bound over the padded
/// dimension `w`.
pub fn theoretical_mse_bound(cfg: &DmeConfig) -> f64 {
    let x = cfg.xmax();
    let w = cfg.work_dim() as f64;
    let p = cfg.p.value();
    let km1 = f64::from(cfg.levels - 1);
    let base = w * x * x * (1.0 + 4.0 * f64::from(cfg.trials) * p * (1.0 - p)) / (cfg.n as f64 * km1 * km1);
    if cfg.rotate {
        base + 4.0 * cfg.clip_bound * cfg.clip_bound * cfg.delta
    } else {
        base
    }
}

/// The rotated bound with constants `2 L` and `8 L`, `L = ln(2 n w / δ)`,
/// and clipping term `4 D² δ²`. It assumes a grid half as wide as the one
/// [`DmeConfig::xmax`] uses and underestimates the noise variance by 2x.
pub fn stated_rotated_mse_bound(cfg: &DmeConfig) -> f64 {
    let l = (2.0 * cfg.n as f64 * padded_dim(cfg.d) as f64 / cfg.delta).ln();
    let p = cfg.p.value();
    let km1 = f64::from(cfg.levels - 1);
    let dd = cfg.clip_bound * cfg.clip_bound;
    let nk = cfg.n as f64 * km1 * km1;
    2.0 * l * dd / nk + 8.0 * l * f64::from(cfg.trials) * p * (1.0 - p) * dd / nk + 4.0 * dd * cfg.delta * cfg.delta
}

/// Privacy of one round against the aggregate noise `Bin(m n, p)` in grid units.
pub fn privacy_of_run(cfg: &DmeConfig) -> Result<RunPrivacy> {
    cfg.validate()?;
    let w = cfg.work_dim();
    let bounds = sensitivity_bounds(cfg.clip_bound, cfg.xmax(), cfg.levels, w, cfg.delta)?;
    let total_trials = u64::from(cfg.trials) * cfg.n as u64;
    let report = if total_trials == 0 {
        EpsilonReport {
            epsilon: f64::INFINITY,
            term_gaussian_like: f64::INFINITY,
            term_l2_l1: f64::INFINITY,
            term_linf: f64::INFINITY,
            conditions_ok: false,
            condition_details: Vec::new(),
        }
    } else {
        let spec = BinomialSpec::new(total_trials, cfg.p.value(), 1.0)?;
        binomial_epsilon(&spec, &bounds, w, cfg.delta)?
    };
    let delta_multiplier = cfg.delta_multiplier();
    Ok(RunPrivacy {
        report,
        delta_total: f64::from(delta_multiplier) * cfg.delta,
        delta_multiplier,
    })
}

/// `n (8 * payload bytes + 8 * header bytes)`.
pub fn comm_cost_bits(cfg: &DmeConfig) -> u64 {
    let payload = wire::payload_bytes(cfg.work_dim(), u64::from(cfg.levels), u64::from(cfg.trials)) as u64;
    cfg.n as u64 * 8 * (payload + HEADER_LEN as u64)
}

/// Full-precision baseline: mean of `x_i + N(0, σ² I)`.
pub fn gaussian_dme<R: Rng + ?Sized>(xs: &[Vec<f64>], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    let d = xs
        .first()
        .map(Vec::len)
        .ok_or_else(|| invalid("need at least one client"))?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(invalid(format!("sigma must be nonnegative, got {sigma}")));
    }
    let mut sum = vec![0.0; d];
    for (i, x) in xs.iter().enumerate() {
        if x.len() != d {
            return Err(invalid(format!("client {i} has dimension {}, expected {d}", x.len())));
        }
        ensure_all_finite("x", x)?;
        for (s, &v) in sum.iter_mut().zip(x) {
            let z: f64 = StandardNormal.sample(rng);
            *s += v + sigma * z;
        }
    }
    let n = xs.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// `d σ² / n` with σ calibrated to `budget`.
pub fn gaussian_mse(n: usize, d: usize, clip_bound: f64, budget: PrivacyBudget) -> f64 {
    let sigma = gaussian_dme_sigma(n, clip_bound, budget);
    d as f64 * sigma * sigma / n as f64
}

/// Smallest `m` found for one `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: DmeConfig,
    pub epsilon: f64,
    pub mse_bound: f64,
    pub bits_per_coordinate: u32,
    pub comm_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: Candidate,
    pub gaussian_mse: f64,
    /// Set when the target epsilon exceeds 1.
    pub outside_small_epsilon_regime: bool,
}

pub const MAX_LEVEL_EXPONENT: u32 = 31;

/// For each `k = 2, 4, ..., 2^31` the smallest `m ≤ u32::MAX` whose run is
/// private at `target` (with per-round `δ = target.δ / 3`), in increasing `k`.
pub fn selection_candidates(
    target: PrivacyBudget,
    n: usize,
    d: usize,
    clip_bound: f64,
    seed: u64,
) -> Result<Vec<Candidate>> {
    let base = DmeConfig {
        n,
        d,
        clip_bound,
        levels: 2,
        trials: 0,
        p: Rational::HALF,
        delta: target.delta() / 3.0,
        rotate: true,
        master_seed: seed,
    };
    base.validate()?;
    let private = |cfg: &DmeConfig| -> Result<Option<f64>> {
        let r = privacy_of_run(cfg)?.report;
        Ok((r.conditions_ok && r.epsilon <= target.epsilon()).then_some(r.epsilon))
    };
    let per_k: Vec<Result<Option<Candidate>>> = (1..=MAX_LEVEL_EXPONENT)
        .into_par_iter()
        .map(|j| {
            let mut cfg = DmeConfig {
                levels: 1u32 << j,
                trials: u32::MAX,
                ..base
            };
            if private(&cfg)?.is_none() {
                return Ok(None);
            }
            let (mut lo, mut hi) = (0u32, u32::MAX);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                cfg.trials = mid;
                if private(&cfg)?.is_some() {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            cfg.trials = lo;
            let epsilon = private(&cfg)?.expect("binary search ends on a private m");
            Ok(Some(Candidate {
                config: cfg,
                epsilon,
                mse_bound: theoretical_mse_bound(&cfg),
                bits_per_coordinate: wire::bits_per_symbol(u64::from(cfg.levels), u64::from(cfg.trials)),
                comm_bits: comm_cost_bits(&cfg),
            }))
        })
        .collect();
    per_k.into_iter().filter_map(Result::transpose).collect()
}

/// Cheapest rotated configuration that is private at `target` and whose MSE
/// bound does not exceed the Gaussian mechanism's at the same budget.
pub fn select_parameters(target: PrivacyBudget, n: usize, d: usize, clip_bound: f64, seed: u64) -> Result<Selection> {
    let gaussian = gaussian_mse(n, d, clip_bound, target);
    let candidates = selection_candidates(target, n, d, clip_bound, seed)?;
    let chosen = candidates
        .iter()
        .filter(|c| c.mse_bound <= gaussian)
        .min_by(|a, b| a.comm_bits.cmp(&b.comm_bits).then(a.mse_bound.total_cmp(&b.mse_bound)))
        .cloned();
    match chosen {
        Some(chosen) => Ok(Selection {
            chosen,
            gaussian_mse: gaussian,
            outside_small_epsilon_regime: target.epsilon() > 1.0,
        }),
        None => {
            let closest = candidates.iter().min_by(|a, b| a.mse_bound.total_cmp(&b.mse_bound));
            Err(Error::Infeasible(match closest {
                Some(c) => format!(
                    "no k <= 2^{MAX_LEVEL_EXPONENT}, m <= {} meets the Gaussian MSE {gaussian:.6}; \
                     closest is k = {}, m = {} with bound {:.6} ({:.4}x)",
                    u32::MAX,
                    c.config.levels,
                    c.config.trials,
                    c.mse_bound,
                    c.mse_bound / gaussian
                ),
                None => format!(
                    "no k <= 2^{MAX_LEVEL_EXPONENT}, m <= {} reaches epsilon {}",
                    u32::MAX,
                    target.epsilon()
                ),
            }))
        }
    }
}

/// Monte Carlo summary of repeated protocol runs on fixed inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub trials: u64,
    pub truth: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    pub mse_empirical: f64,
    pub mse_std_error: f64,
    /// `‖mean estimate - truth‖₂`.
    pub bias_empirical: f64,
    pub clip_events: u64,
}

#[derive(Clone, Default)]
struct Accum {
    coords: Vec<Welford>,
    sq_err: Welford,
    clips: u64,
}

impl Accum {
    fn merge(&mut self, other: &Accum) {
        if self.coords.is_empty() {
            self.coords = vec![Welford::new(); other.coords.len()];
        }
        for (a, b) in self.coords.iter_mut().zip(&other.coords) {
            a.merge(b);
        }
        self.sq_err.merge(&other.sq_err);
        self.clips += other.clips;
    }
}

/// Runs the protocol `trials` times, trial `t` using master seed
/// `stream_seed(seed, TRIALS, t)`. Output does not depend on thread count.
pub fn simulate(xs: &[Vec<f64>], cfg: &DmeConfig, trials: u64, seed: u64) -> Result<MonteCarloSummary> {
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    if xs.len() != cfg.n {
        return Err(invalid(format!("expected {} client vectors, got {}", cfg.n, xs.len())));
    }
    cfg.validate()?;
    let d = cfg.d;
    let truth: Vec<f64> = (0..d)
        .map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / cfg.n as f64)
        .collect();

    const CHUNK: u64 = 256;
    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<Result<Accum>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Accum {
                coords: vec![Welford::new(); d],
                ..Accum::default()
            };
            for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let run_cfg = DmeConfig {
                    master_seed: stream_seed(seed, domain::TRIALS, t),
                    ..*cfg
                };
                let encoder = Encoder::new(&run_cfg)?;
                let mut agg = Aggregator::new(&run_cfg)?;
                for (i, x) in xs.iter().enumerate() {
                    let msg = encoder.encode(x, i as u64)?;
                    acc.clips += msg.clip_events as u64;
                    agg.push(&msg.bytes)?;
                }
                let est = agg.finish()?.estimate;
                let mut err = 0.0;
                for ((w, &e), &t) in acc.coords.iter_mut().zip(&est).zip(&truth) {
                    w.push(e);
                    err += (e - t) * (e - t);
                }
                acc.sq_err.push(err);
            }
            Ok(acc)
        })
        .collect();

    let mut total = Accum::default();
    for p in partials {
        total.merge(&p?);
    }
    let mean_estimate: Vec<f64> = total.coords.iter().map(Welford::mean).collect();
    let bias = mean_estimate
        .iter()
        .zip(&truth)
        .map(|(m, t)| (m - t) * (m - t))
        .sum::<f64>()
        .sqrt();
    Ok(MonteCarloSummary {
        trials,
        std_error: total.coords.iter().map(Welford::std_error).collect(),
        mean_estimate,
        truth,
        mse_empirical: total.sq_err.mean(),
        mse_std_error: total.sq_err.std_error(),
        bias_empirical: bias,
        clip_events: total.clips,
    })
}

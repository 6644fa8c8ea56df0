use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    BinomialArgs, CliError, CliResult, ComposeArgs, DmeArgs, DmeProtocol, GaussianArgs, LearningRate, Resolved,
    SelectArgs, SgdArgs, SgdProtocol, SweepArgs, ValidateArgs,
};
use crate::accountant::{
    binomial_epsilon, binomial_mechanism_error, compose_rounds, gaussian_dme_epsilon, gaussian_dme_sigma,
    gaussian_epsilon, BinomialSpec, EpsilonReport, PrivacyBudget,
};
use crate::dme::{
    comm_cost_bits, gaussian_dme, privacy_of_run, select_parameters, selection_candidates, simulate,
    theoretical_mse_bound, DmeConfig,
};
use crate::quantize::wire::Rational;
use crate::quantize::QuantizerConfig;
use crate::rng::{domain, seeded, stream_seed};
use crate::sensitivity::{empirical_sensitivity_check, sensitivity_bounds, SensitivityBounds};
use crate::sgd::{
    round_privacy, run_ensemble, run_training, with_prescribed_learning_rate, ModelKind, ModelSpec, Protocol,
    TrainingConfig,
};
use crate::stats::Welford;

const DEFAULT_DELTA: f64 = 1e-6;
const DEFAULT_TRIALS: u64 = 1000;
const DEFAULT_CHECK_TRIALS: u64 = 10_000;

fn required<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("missing required option --{flag}")))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn open_out<'a>(path: Option<&Path>, stdout: &'a mut dyn Write) -> CliResult<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => {
            Box::new(std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| {
                CliError::Usage(format!("cannot create {}: {e}", p.display()))
            })?))
        }
        None => Box::new(stdout),
    })
}

fn write_csv(sink: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> CliResult {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn print_epsilon_report(out: &mut dyn Write, r: &EpsilonReport) -> CliResult {
    writeln!(out, "epsilon: {}", num(r.epsilon))?;
    writeln!(out, "term_gaussian_like: {}", num(r.term_gaussian_like))?;
    writeln!(out, "term_l2_l1: {}", num(r.term_l2_l1))?;
    writeln!(out, "term_linf: {}", num(r.term_linf))?;
    writeln!(out, "conditions_ok: {}", r.conditions_ok)?;
    for c in &r.condition_details {
        let status = if c.ok { "ok" } else { "FAILED" };
        writeln!(
            out,
            "condition {}: required {}, actual {} [{status}]",
            c.name,
            num(c.required),
            num(c.actual)
        )?;
    }
    Ok(())
}

fn failed_names(r: &EpsilonReport) -> String {
    r.failed_conditions()
        .map(|c| c.name.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Vector with a uniformly random direction and norm `radius`.
fn random_vector(d: usize, radius: f64, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|a| a * radius / norm).collect();
        }
    }
}

pub(super) fn accountant_gaussian(a: &GaussianArgs, common: &Resolved, out: &mut dyn Write) -> CliResult {
    let delta2 = required(a.delta2, "delta2")?;
    let sigma = required(a.sigma, "sigma")?;
    let delta = required(a.delta, "delta")?;
    let g = gaussian_epsilon(delta2, sigma, delta)?;
    writeln!(out, "epsilon: {}", num(g.epsilon))?;
    writeln!(out, "precondition_ok: {}", g.precondition_ok)?;
    if let Some(p) = &common.out {
        write_json(p, &g)?;
    }
    if !g.precondition_ok {
        return Err(CliError::Condition(format!(
            "sigma = {sigma} is below the level at which the Gaussian bound applies for delta = {delta}"
        )));
    }
    Ok(())
}

fn binomial_bounds(a: &BinomialArgs, d: usize, delta: f64) -> CliResult<SensitivityBounds> {
    match (a.delta1, a.delta2, a.delta_inf) {
        (Some(delta_1), Some(delta_2), Some(delta_inf)) => Ok(SensitivityBounds {
            delta_1,
            delta_2,
            delta_inf,
            holds_with_delta: 0.0,
        }),
        (None, None, None) => {
            let clip = required(a.clip, "D")?;
            let k = required(a.k, "k")?;
            Ok(sensitivity_bounds(clip, a.xmax.unwrap_or(clip), k, d, delta)?)
        }
        _ => Err(CliError::Usage(
            "give all of --delta1, --delta2, --delta-inf, or none of them together with --D and --k".into(),
        )),
    }
}

pub(super) fn accountant_binomial(a: &BinomialArgs, common: &Resolved, out: &mut dyn Write) -> CliResult {
    let n = required(a.big_n, "N")?;
    let p = required(a.p, "p")?.0;
    let s = required(a.s, "s")?;
    let d = required(a.d, "d")?;
    let delta = required(a.delta, "delta")?;
    let bounds = binomial_bounds(a, d, delta)?;
    let spec = BinomialSpec::new(n, p.value(), s)?;
    let r = binomial_epsilon(&spec, &bounds, d, delta)?;
    print_epsilon_report(out, &r)?;
    if let Some(path) = &common.out {
        write_json(path, &r)?;
    }
    if !r.conditions_ok {
        return Err(CliError::Condition(format!(
            "binomial mechanism conditions failed: {}",
            failed_names(&r)
        )));
    }
    Ok(())
}

pub(super) fn accountant_compose(a: &ComposeArgs, common: &Resolved, out: &mut dyn Write) -> CliResult {
    let epsilon = required(a.epsilon, "epsilon")?;
    let delta = required(a.delta, "delta")?;
    let rounds = required(a.rounds, "rounds")?;
    let slack = a.delta_slack.unwrap_or(delta);
    let c = compose_rounds(PrivacyBudget::new(epsilon, delta)?, rounds, slack)?;
    writeln!(
        out,
        "basic: epsilon {} delta {}",
        num(c.basic.epsilon()),
        num(c.basic.delta())
    )?;
    writeln!(
        out,
        "advanced: epsilon {} delta {}",
        num(c.advanced.epsilon()),
        num(c.advanced.delta())
    )?;
    let best = c.best();
    writeln!(out, "best: epsilon {} delta {}", num(best.epsilon()), num(best.delta()))?;
    if let Some(path) = &common.out {
        write_json(path, &c)?;
    }
    Ok(())
}

/// Smallest `N` in `[1, 2^40]` with a finite epsilon at most `target`.
fn smallest_binomial_trials(
    target: f64,
    p: f64,
    s: f64,
    bounds: &SensitivityBounds,
    d: usize,
    delta: f64,
) -> CliResult<Option<(u64, f64)>> {
    let eps =
        |n: u64| -> CliResult<f64> { Ok(binomial_epsilon(&BinomialSpec::new(n, p, s)?, bounds, d, delta)?.epsilon) };
    let (mut lo, mut hi) = (1u64, 1u64 << 40);
    if eps(hi)? > target {
        return Ok(None);
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if eps(mid)? <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(Some((lo, eps(lo)?)))
}

pub(super) fn sweep(a: &SweepArgs, common: &Resolved, stdout: &mut dyn Write) -> CliResult {
    let d = required(a.d, "d")?;
    let delta = a.delta.unwrap_or(DEFAULT_DELTA);
    let bounds = SensitivityBounds {
        delta_1: required(a.delta1, "delta1")?,
        delta_2: required(a.delta2, "delta2")?,
        delta_inf: required(a.delta_inf, "delta-inf")?,
        holds_with_delta: 0.0,
    };
    let p = a.p.map_or(Rational::HALF, |p| p.0).value();
    let scales = a.scales.clone().unwrap_or_else(|| vec![1.0]);
    let epsilons = required(a.epsilons.clone(), "epsilons")?;
    if epsilons.is_empty() || scales.is_empty() {
        return Err(CliError::Usage("--epsilons and --scales must be nonempty".into()));
    }
    let mut rows = Vec::new();
    for &eps in &epsilons {
        let budget = PrivacyBudget::new(eps, delta)?;
        let sigma = bounds.delta_2 * (2.0 * (1.25 / budget.delta()).ln()).sqrt() / budget.epsilon();
        rows.push(vec![
            "gaussian".into(),
            String::new(),
            num(eps),
            num(eps),
            String::new(),
            num(sigma),
            num(d as f64 * sigma * sigma),
        ]);
    }
    for &s in &scales {
        for &eps in &epsilons {
            PrivacyBudget::new(eps, delta)?;
            let row = match smallest_binomial_trials(eps, p, s, &bounds, d, delta)? {
                Some((n, achieved)) => {
                    let spec = BinomialSpec::new(n, p, s)?;
                    vec![
                        "binomial".into(),
                        num(s),
                        num(eps),
                        num(achieved),
                        n.to_string(),
                        num(spec.sigma()),
                        num(binomial_mechanism_error(d, &spec)),
                    ]
                }
                None => vec![
                    "binomial".into(),
                    num(s),
                    num(eps),
                    num(f64::INFINITY),
                    String::new(),
                    String::new(),
                    num(f64::INFINITY),
                ],
            };
            rows.push(row);
        }
    }
    let mut sink = open_out(common.out.as_deref(), stdout)?;
    write_csv(
        &mut *sink,
        &["mechanism", "scale", "target_epsilon", "epsilon", "N", "sigma", "error"],
        &rows,
    )
}

struct GaussianMc {
    mse: f64,
    mse_se: f64,
    bias: f64,
}

fn gaussian_monte_carlo(xs: &[Vec<f64>], sigma: f64, trials: u64, seed: u64) -> CliResult<GaussianMc> {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let truth: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    const CHUNK: u64 = 256;
    let partials: Vec<CliResult<(Vec<Welford>, Welford)>> = (0..trials.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut coords = vec![Welford::new(); d];
            let mut sq = Welford::new();
            for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let mut rng = seeded(stream_seed(seed, domain::TRIALS, t));
                let est = gaussian_dme(xs, sigma, &mut rng)?;
                for (w, v) in coords.iter_mut().zip(&est) {
                    w.push(*v);
                }
                sq.push(est.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum());
            }
            Ok((coords, sq))
        })
        .collect();
    let mut coords = vec![Welford::new(); d];
    let mut sq = Welford::new();
    for part in partials {
        let (c, s) = part?;
        for (a, b) in coords.iter_mut().zip(&c) {
            a.merge(b);
        }
        sq.merge(&s);
    }
    let bias = coords
        .iter()
        .zip(&truth)
        .map(|(w, t)| (w.mean() - t).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(GaussianMc {
        mse: sq.mean(),
        mse_se: sq.std_error(),
        bias,
    })
}

pub(super) fn dme(a: &DmeArgs, common: &Resolved, stdout: &mut dyn Write) -> CliResult {
    let n = required(a.n, "n")?;
    let d = required(a.d, "d")?;
    let clip = a.clip.unwrap_or(1.0);
    let delta = a.delta.unwrap_or(DEFAULT_DELTA);
    let protocol = a.protocol.unwrap_or(DmeProtocol::Binomial);
    let trials = common.trials.unwrap_or(DEFAULT_TRIALS);
    let radius = a.input_radius.unwrap_or(1.0);
    if !(radius > 0.0 && radius <= 1.0) {
        return Err(CliError::Usage(format!(
            "--input-radius must lie in (0, 1], got {radius}"
        )));
    }
    if n == 0 || d == 0 || trials == 0 {
        return Err(CliError::Usage("--n, --d and --trials must be positive".into()));
    }
    let seed = common.seed;
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|i| random_vector(d, radius * clip, stream_seed(seed, domain::INPUTS, i as u64)))
        .collect();

    let header = [
        "protocol",
        "n",
        "d",
        "D",
        "k",
        "m",
        "p",
        "rotate",
        "epsilon",
        "delta_total",
        "mse_empirical",
        "mse_bound",
        "bias_empirical",
        "comm_bits",
        "trials",
        "seed",
    ];
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let mut violations = Vec::new();
    let mut dp_failure = None;
    let mut binomial_budget = None;

    if protocol != DmeProtocol::Gaussian {
        let cfg = DmeConfig {
            n,
            d,
            clip_bound: clip,
            levels: required(a.k, "k")?,
            trials: required(a.m, "m")?,
            p: a.p.map_or(Rational::HALF, |p| p.0),
            delta,
            rotate: a.rotate.unwrap_or(false),
            master_seed: seed,
        };
        cfg.validate()?;
        let privacy = privacy_of_run(&cfg)?;
        let bound = theoretical_mse_bound(&cfg);
        let mc = simulate(&xs, &cfg, trials, seed)?;
        rows.push(vec![
            "binomial".into(),
            n.to_string(),
            d.to_string(),
            num(clip),
            cfg.levels.to_string(),
            cfg.trials.to_string(),
            cfg.p.to_string(),
            cfg.rotate.to_string(),
            num(privacy.report.epsilon),
            num(privacy.delta_total),
            num(mc.mse_empirical),
            num(bound),
            num(mc.bias_empirical),
            comm_cost_bits(&cfg).to_string(),
            trials.to_string(),
            seed.to_string(),
        ]);
        notes.push(format!(
            "binomial: epsilon {} delta {} mse {} +/- {} (bound {}) clip events {}",
            num(privacy.report.epsilon),
            num(privacy.delta_total),
            num(mc.mse_empirical),
            num(mc.mse_std_error),
            num(bound),
            mc.clip_events
        ));
        if mc.mse_empirical > bound + 4.0 * mc.mse_std_error + 1e-12 {
            violations.push(format!("binomial MSE {} exceeds bound {}", mc.mse_empirical, bound));
        }
        if !cfg.rotate && mc.clip_events == 0 {
            for j in 0..d {
                let dev = (mc.mean_estimate[j] - mc.truth[j]).abs();
                if dev > 5.0 * mc.std_error[j] + 1e-12 {
                    violations.push(format!("coordinate {j} mean deviates from the input mean by {dev}"));
                    break;
                }
            }
        }
        if !privacy.report.conditions_ok {
            dp_failure = Some(format!(
                "binomial mechanism conditions failed: {}",
                failed_names(&privacy.report)
            ));
        } else {
            binomial_budget = Some(PrivacyBudget::new(
                privacy.report.epsilon,
                privacy.delta_total.min(0.5),
            )?);
        }
    }

    if protocol != DmeProtocol::Binomial {
        let sigma = match (a.sigma, binomial_budget) {
            (Some(s), _) => s,
            (None, Some(b)) => gaussian_dme_sigma(n, clip, b),
            (None, None) => {
                return Err(CliError::Usage(
                    "--sigma is required unless a private Binomial run fixes the budget".into(),
                ))
            }
        };
        let g_delta = binomial_budget.map_or(delta, |b| b.delta());
        let g = gaussian_dme_epsilon(n, clip, sigma, g_delta)?;
        let epsilon = if g.precondition_ok { g.epsilon } else { f64::INFINITY };
        let bound = d as f64 * g.mse_per_d;
        let mc = gaussian_monte_carlo(&xs, sigma, trials, seed)?;
        rows.push(vec![
            "gaussian".into(),
            n.to_string(),
            d.to_string(),
            num(clip),
            String::new(),
            String::new(),
            String::new(),
            "false".into(),
            num(epsilon),
            num(g_delta),
            num(mc.mse),
            num(bound),
            num(mc.bias),
            (n as u64 * d as u64 * 64).to_string(),
            trials.to_string(),
            seed.to_string(),
        ]);
        notes.push(format!(
            "gaussian: sigma {} epsilon {} mse {} +/- {} (expected {})",
            num(sigma),
            num(epsilon),
            num(mc.mse),
            num(mc.mse_se),
            num(bound)
        ));
        if (mc.mse - bound).abs() > 5.0 * mc.mse_se + 1e-12 {
            violations.push(format!("gaussian MSE {} departs from {}", mc.mse, bound));
        }
        if !g.precondition_ok && dp_failure.is_none() {
            dp_failure = Some(format!("sigma = {sigma} is below the Gaussian mechanism threshold"));
        }
    }

    if common.out.is_some() {
        for line in &notes {
            writeln!(stdout, "{line}")?;
        }
    }
    {
        let mut sink = open_out(common.out.as_deref(), stdout)?;
        write_csv(&mut *sink, &header, &rows)?;
    }
    if !violations.is_empty() {
        return Err(CliError::Invariant(violations.join("; ")));
    }
    if a.require_dp.unwrap_or(false) {
        if let Some(msg) = dp_failure {
            return Err(CliError::Condition(msg));
        }
    }
    Ok(())
}

pub(super) fn select(a: &SelectArgs, common: &Resolved, stdout: &mut dyn Write) -> CliResult {
    let target = PrivacyBudget::new(required(a.epsilon, "epsilon")?, required(a.delta, "delta")?)?;
    let n = required(a.n, "n")?;
    let d = required(a.d, "d")?;
    let clip = a.clip.unwrap_or(1.0);
    let result = select_parameters(target, n, d, clip, common.seed);
    if let Some(path) = &common.out {
        let gaussian = crate::dme::gaussian_mse(n, d, clip, target);
        let rows: Vec<Vec<String>> = selection_candidates(target, n, d, clip, common.seed)?
            .iter()
            .map(|c| {
                vec![
                    c.config.levels.to_string(),
                    c.config.trials.to_string(),
                    num(c.epsilon),
                    num(c.mse_bound),
                    num(gaussian),
                    c.bits_per_coordinate.to_string(),
                    c.comm_bits.to_string(),
                    (c.mse_bound <= gaussian).to_string(),
                ]
            })
            .collect();
        let mut sink = open_out(Some(path), stdout)?;
        write_csv(
            &mut *sink,
            &[
                "k",
                "m",
                "epsilon",
                "mse_bound",
                "gaussian_mse",
                "bits_per_coordinate",
                "comm_bits",
                "meets_gaussian_mse",
            ],
            &rows,
        )?;
    }
    let sel = result?;
    let c = &sel.chosen;
    writeln!(stdout, "k: {}", c.config.levels)?;
    writeln!(stdout, "m: {}", c.config.trials)?;
    writeln!(stdout, "p: {}", c.config.p)?;
    writeln!(stdout, "rotate: {}", c.config.rotate)?;
    writeln!(stdout, "epsilon: {}", num(c.epsilon))?;
    writeln!(stdout, "mse_bound: {}", num(c.mse_bound))?;
    writeln!(stdout, "gaussian_mse: {}", num(sel.gaussian_mse))?;
    writeln!(stdout, "bits_per_coordinate: {}", c.bits_per_coordinate)?;
    writeln!(stdout, "comm_bits: {}", c.comm_bits)?;
    if sel.outside_small_epsilon_regime {
        writeln!(
            stdout,
            "warning: target epsilon above 1, outside the regime the bound is tuned for"
        )?;
    }
    Ok(())
}

pub(super) fn validate(a: &ValidateArgs, common: &Resolved, stdout: &mut dyn Write) -> CliResult {
    let k = required(a.k, "k")?;
    let clip = a.clip.unwrap_or(1.0);
    let xmax = a.xmax.unwrap_or(clip);
    let delta = a.delta.unwrap_or(DEFAULT_DELTA);
    let trials = common.trials.unwrap_or(DEFAULT_CHECK_TRIALS);
    let x = match &a.x {
        Some(x) => x.clone(),
        None => random_vector(required(a.d, "d")?, clip, stream_seed(common.seed, domain::INPUTS, 0)),
    };
    if let Some(d) = a.d {
        if d != x.len() {
            return Err(CliError::Usage(format!(
                "--d {d} does not match the length {} of --x",
                x.len()
            )));
        }
    }
    let x_prime = if a.identical.unwrap_or(false) {
        if a.x_prime.is_some() {
            return Err(CliError::Usage("--identical conflicts with --x-prime".into()));
        }
        x.clone()
    } else {
        match &a.x_prime {
            Some(v) => v.clone(),
            None => random_vector(x.len(), clip, stream_seed(common.seed, domain::INPUTS, 1)),
        }
    };
    let cfg = QuantizerConfig::new(k, xmax)?;
    let report = empirical_sensitivity_check(&x, &x_prime, &cfg, delta, trials, common.seed)?;
    writeln!(stdout, "trials: {}", report.trials)?;
    writeln!(stdout, "violations: {}", report.violations)?;
    writeln!(stdout, "violation_frequency: {}", num(report.violation_frequency))?;
    writeln!(stdout, "threshold: {}", num(report.threshold))?;
    writeln!(
        stdout,
        "bounds: l1 {} l2 {} linf {}",
        num(report.bounds.delta_1),
        num(report.bounds.delta_2),
        num(report.bounds.delta_inf)
    )?;
    writeln!(
        stdout,
        "observed max: l1 {} l2 {} linf {}",
        num(report.max_l1),
        num(report.max_l2),
        num(report.max_linf)
    )?;
    writeln!(stdout, "passed: {}", report.passed)?;
    if let Some(path) = &common.out {
        write_json(path, &report)?;
    }
    if !report.passed {
        return Err(CliError::Invariant(format!(
            "violation frequency {} exceeds {}",
            report.violation_frequency, report.threshold
        )));
    }
    Ok(())
}

/// Smallest `m` whose per-round epsilon is finite and at most `target`.
fn calibrate_trials(cfg: &TrainingConfig, target: f64) -> CliResult<u32> {
    let eps = |m: u32| -> CliResult<f64> {
        let protocol = match cfg.protocol {
            Protocol::Binomial {
                levels,
                p,
                delta,
                rotate,
                ..
            } => Protocol::Binomial {
                levels,
                trials: m,
                p,
                delta,
                rotate,
            },
            other => other,
        };
        Ok(round_privacy(&TrainingConfig { protocol, ..*cfg })?.epsilon)
    };
    let (mut lo, mut hi) = (1u32, u32::MAX);
    if eps(hi)? > target {
        return Err(CliError::Condition(format!(
            "no m <= {} reaches a per-round epsilon of {target}",
            u32::MAX
        )));
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if eps(mid)? <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

#[derive(Serialize)]
struct SgdSummary<'a> {
    config: &'a TrainingConfig,
    pilot_sigma_sq: Option<f64>,
    round_epsilon: f64,
    round_delta: f64,
    final_epsilon_basic: f64,
    final_epsilon_advanced: f64,
    final_delta_total: f64,
    final_loss: f64,
    convergence: &'a crate::sgd::ConvergenceReport,
    per_run_avg_grad_norm_sq: Option<&'a [f64]>,
    bound_holds: Option<bool>,
}

pub(super) fn sgd(a: &SgdArgs, common: &Resolved, stdout: &mut dyn Write) -> CliResult {
    let clients = a.clients.unwrap_or(32);
    let delta = a.delta.unwrap_or(DEFAULT_DELTA);
    let protocol = match a.protocol.unwrap_or(SgdProtocol::Binomial) {
        SgdProtocol::Exact => Protocol::Exact,
        SgdProtocol::Binomial => Protocol::Binomial {
            levels: a.k.unwrap_or(16),
            trials: a.m.unwrap_or(64),
            p: a.p.map_or(Rational::HALF, |p| p.0),
            delta,
            rotate: a.rotate.unwrap_or(false),
        },
        SgdProtocol::Gaussian => Protocol::Gaussian {
            sigma: a.sigma.unwrap_or(f64::NAN),
            delta,
        },
    };
    let mut cfg = TrainingConfig {
        model: ModelSpec {
            kind: a.model.unwrap_or(ModelKind::Quadratic),
            dim: a.d.unwrap_or(16),
            clients,
            data_seed: a.data_seed.unwrap_or(common.seed),
        },
        rounds: a.rounds.unwrap_or(50),
        clients_per_round: a.clients_per_round.unwrap_or(clients),
        learning_rate: 0.0,
        clip_norm: a.clip.unwrap_or(1.0),
        protocol,
        delta_slack: a.delta_slack.unwrap_or(DEFAULT_DELTA),
        seed: common.seed,
    };
    if let Some(target) = a.target_epsilon {
        match cfg.protocol {
            Protocol::Binomial {
                levels,
                p,
                delta,
                rotate,
                ..
            } => {
                let m = calibrate_trials(&cfg, target)?;
                cfg.protocol = Protocol::Binomial {
                    levels,
                    trials: m,
                    p,
                    delta,
                    rotate,
                };
            }
            Protocol::Gaussian { delta, .. } => {
                let sigma =
                    gaussian_dme_sigma(cfg.clients_per_round, cfg.clip_norm, PrivacyBudget::new(target, delta)?);
                cfg.protocol = Protocol::Gaussian { sigma, delta };
            }
            Protocol::Exact => return Err(CliError::Usage("--target-epsilon needs a private protocol".into())),
        }
    } else if let Protocol::Gaussian { sigma, .. } = cfg.protocol {
        if sigma.is_nan() {
            return Err(CliError::Usage(
                "--sigma or --target-epsilon is required for the Gaussian protocol".into(),
            ));
        }
    }
    let mut pilot = None;
    match a.lr.unwrap_or(LearningRate::Auto) {
        LearningRate::Fixed(lr) => cfg.learning_rate = lr,
        LearningRate::Auto => {
            cfg.learning_rate = 1.0;
            let (tuned, sigma_sq) = with_prescribed_learning_rate(&cfg, a.probes.unwrap_or(20))?;
            cfg = tuned;
            pilot = Some(sigma_sq);
        }
    }
    cfg.validate()?;

    let report = run_training(&cfg)?;
    let runs = a.runs.unwrap_or(1);
    let ensemble = if runs > 1 {
        Some(run_ensemble(&cfg, runs)?)
    } else {
        None
    };
    let convergence = ensemble.as_ref().map_or(&report.convergence, |e| &e.convergence);
    let final_privacy = report.final_privacy();

    let rows: Vec<Vec<String>> = report
        .rounds
        .iter()
        .zip(&report.composed)
        .map(|(s, c)| {
            vec![
                s.round.to_string(),
                num(s.loss),
                num(s.grad_norm_sq),
                num(s.mse_round),
                s.comm_bits_round.to_string(),
                num(c.epsilon_basic),
                num(c.epsilon_advanced),
                num(c.delta_total),
            ]
        })
        .collect();
    let final_loss = report.rounds.last().map_or(f64::NAN, |s| s.loss);
    let bound_holds = convergence.bound.map(|b| convergence.avg_grad_norm_sq <= b);

    if common.out.is_some() {
        writeln!(stdout, "learning_rate: {}", num(cfg.learning_rate))?;
        writeln!(stdout, "round_epsilon: {}", num(report.round_privacy.epsilon))?;
        writeln!(
            stdout,
            "composed: basic {} advanced {} delta {}",
            num(final_privacy.epsilon_basic),
            num(final_privacy.epsilon_advanced),
            num(final_privacy.delta_total)
        )?;
        writeln!(stdout, "final_loss: {}", num(final_loss))?;
        writeln!(stdout, "avg_grad_norm_sq: {}", num(convergence.avg_grad_norm_sq))?;
        match convergence.bound {
            Some(b) => writeln!(stdout, "bound: {}", num(b))?,
            None => writeln!(stdout, "bound: unavailable")?,
        }
    }
    {
        let mut sink = open_out(common.out.as_deref(), stdout)?;
        write_csv(
            &mut *sink,
            &[
                "round",
                "loss",
                "grad_norm_sq",
                "mse_round",
                "comm_bits_round",
                "epsilon_composed_basic",
                "epsilon_composed_advanced",
                "delta_total",
            ],
            &rows,
        )?;
    }
    if let Some(path) = &a.summary {
        write_json(
            path,
            &SgdSummary {
                config: &cfg,
                pilot_sigma_sq: pilot,
                round_epsilon: report.round_privacy.epsilon,
                round_delta: report.round_privacy.delta,
                final_epsilon_basic: final_privacy.epsilon_basic,
                final_epsilon_advanced: final_privacy.epsilon_advanced,
                final_delta_total: final_privacy.delta_total,
                final_loss,
                convergence,
                per_run_avg_grad_norm_sq: ensemble.as_ref().map(|e| e.per_run_avg_grad_norm_sq.as_slice()),
                bound_holds,
            },
        )?;
    }
    if a.check_bound.unwrap_or(false) && bound_holds == Some(false) {
        return Err(CliError::Invariant(format!(
            "average squared gradient norm {} exceeds the bound {}",
            convergence.avg_grad_norm_sq,
            convergence.bound.unwrap_or(f64::NAN)
        )));
    }
    if a.require_dp.unwrap_or(false) && cfg.protocol != Protocol::Exact && !report.round_privacy.epsilon.is_finite() {
        return Err(CliError::Condition(
            "the per-round mechanism carries no privacy guarantee".into(),
        ));
    }
    Ok(())
}

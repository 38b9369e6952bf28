//! The four subcommands: dataset generation, a single seeded fit, metric
//! evaluation from artifacts, and the multi-seed experiment driver.
//!
//! Result-directory layout written by `fit`:
//! `trace.csv` (iter, eta_phi, eta_w, tv, seq_nll, clamp_count),
//! `final_weights.csv` (b, w), `theta_hat.csv`, `metrics.json`,
//! `run_meta.json`. Missing values are the literal `NA` in CSV and `null`
//! in JSON.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ebflow_core::baselines::{
    fit_cavi, fit_gibbs_mcem, fit_langevin_mcem, gibbs_posterior_pass, BaselineTrace, CaviOptions,
    McemOptions,
};
use ebflow_core::datagen::{
    load_dataset, make_design, make_prior, save_dataset, simulate, Dataset, DatasetMeta,
    DesignKind, DesignSpec,
};
use ebflow_core::ebflow::{
    fit_ebflow, run_frozen_chain, FitOptions, SplinePenalty, StepSchedule, TraceRecord,
};
use ebflow_core::inference::{
    identity_marginal_nll, prediction_mse, tv_distance, AutocorrAccum, PosteriorMeanAccum,
};
use ebflow_core::math::format_f64;
use ebflow_core::model::TauRule;
use ebflow_core::rng::{
    stream_rng, STREAM_DESIGN, STREAM_FIT, STREAM_POSTERIOR, STREAM_SIGNAL, STREAM_TEST_DESIGN,
};
use ebflow_core::{build_reparam, GridPrior, ReparamContext};

use crate::config::{Algorithm, ConfigError, ExperimentConfig};

const TRACE_HEADER: &str = "iter,eta_phi,eta_w,tv,seq_nll,clamp_count";
const WEIGHTS_HEADER: &str = "b,w";
/// Held-out rows for the prediction-error metric.
const N_TEST: usize = 1_000;

/// One uniform trace row; either fitter family maps onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub eta_phi: Option<f64>,
    pub eta_w: Option<f64>,
    pub tv: Option<f64>,
    pub seq_nll: Option<f64>,
    pub clamp_count: usize,
}

impl From<&TraceRecord> for TraceRow {
    fn from(r: &TraceRecord) -> Self {
        TraceRow {
            iter: r.iter,
            eta_phi: Some(r.eta_phi),
            eta_w: Some(r.eta_w),
            tv: r.tv,
            seq_nll: r.seq_nll,
            clamp_count: r.clamp_events,
        }
    }
}

impl From<&BaselineTrace> for TraceRow {
    fn from(r: &BaselineTrace) -> Self {
        TraceRow {
            iter: r.iter,
            eta_phi: None,
            eta_w: None,
            tv: r.tv,
            seq_nll: None,
            clamp_count: r.clamp_events,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub algorithm: String,
    pub seed: u64,
    pub tv: Option<f64>,
    /// First iteration with TV below 0.2 (rounded to the nearest 100), or
    /// `null` when the final TV is not below 0.2.
    pub iterations_to_tv02: Option<u64>,
    pub marginal_nll: Option<f64>,
    pub mse: Option<f64>,
    pub lag1_autocorr: Option<f64>,
    pub clamp_events: usize,
    pub solver_warnings: usize,
}

#[derive(Debug, Serialize)]
struct RunMeta<'a> {
    seed: u64,
    algorithm: &'a str,
    build: &'a str,
    rng: &'a str,
    wall_time_secs: f64,
}

const BUILD_ID: &str = concat!("ebflow ", env!("CARGO_PKG_VERSION"));
const RNG_CONTRACT: &str =
    "ChaCha8 keyed by seed, streams: design=1 signal=2 test-design=3 fit=4 posterior=5";

/// Output of one seeded fit, ready to be written or aggregated.
pub struct SeedRun {
    pub prior: GridPrior,
    pub theta_hat: Option<DVector<f64>>,
    pub trace: Vec<TraceRow>,
    pub metrics: Metrics,
    pub wall_time_secs: f64,
}

/// `generate`: simulate a dataset instance into `out`.
pub fn cmd_generate(config: &ExperimentConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    let prior = make_prior(&config.prior)?;
    let mut design_rng = stream_rng(seed, STREAM_DESIGN);
    let x = make_design(&config.design, &mut design_rng)?;
    let mut signal_rng = stream_rng(seed, STREAM_SIGNAL);
    let model = simulate(&prior, x, config.noise_fraction, &mut signal_rng)?;
    let meta = DatasetMeta {
        prior: config.prior.clone(),
        design: config.design.clone(),
        seed,
        sigma_sq: model.sigma_sq,
        noise_fraction: config.noise_fraction,
    };
    save_dataset(out, &model, &meta)?;
    Ok(())
}

/// `fit`: one seeded run of the configured algorithm against a dataset
/// directory, writing the result directory.
pub fn cmd_fit(
    config: &ExperimentConfig,
    data_dir: &Path,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let dataset = load_dataset(data_dir)?;
    check_dataset_matches(config, &dataset.meta)?;
    let run = run_seed(config, &dataset, None, seed)?;
    write_seed(out, config, &run)
}

fn check_dataset_matches(config: &ExperimentConfig, meta: &DatasetMeta) -> anyhow::Result<()> {
    if meta.prior != config.prior || meta.design != config.design {
        return Err(ConfigError(
            "dataset meta.json does not match the config's prior/design specs".into(),
        )
        .into());
    }
    Ok(())
}

/// Runs one fit seed. `shared_ctx` lets the experiment driver reuse one
/// reparametrization context across seeds; `cmd_fit` builds its own.
pub fn run_seed(
    config: &ExperimentConfig,
    dataset: &Dataset,
    shared_ctx: Option<&ReparamContext>,
    seed: u64,
) -> anyhow::Result<SeedRun> {
    let start = Instant::now();
    let truth = make_prior(&config.prior)?;
    let init = GridPrior::uniform(truth.support().to_vec())?;
    let lambda = config.lambda_value();
    let penalty = if lambda > 0.0 {
        Some(SplinePenalty::new(lambda, truth.support())?)
    } else {
        None
    };
    let total_iters = config.total_iters_value();
    let model = &dataset.model;
    let fit_rng = stream_rng(seed, STREAM_FIT);

    let built_ctx;
    let mut ctx_ref: Option<&ReparamContext> = shared_ctx;
    if ctx_ref.is_none()
        && config.algorithm != Algorithm::Cavi
        && config.algorithm != Algorithm::GibbsMcem
    {
        built_ctx = build_context(config, dataset)?;
        ctx_ref = Some(&built_ctx);
    }

    let (prior, trace, theta_hat, lag1, clamp_events, solver_warnings) = match config.algorithm {
        Algorithm::Ebflow | Algorithm::EbflowPrecond => {
            let ctx = ctx_ref.ok_or_else(|| anyhow!("missing reparametrization context"))?;
            let schedule = StepSchedule {
                kind: config.schedule.clone(),
                burn_in: config.burn_in,
                burn_in_eta_phi: 1.0,
            };
            schedule.validate()?;
            let mut opts = FitOptions::new(schedule.clone(), penalty.clone(), total_iters);
            opts.precond = config.algorithm == Algorithm::EbflowPrecond;
            let fit = fit_ebflow(ctx, &init, &opts, fit_rng, Some(&truth))?;
            let pass_eta = schedule.eta_phi(total_iters.max(1));
            let (theta_hat, lag1) = posterior_pass_ula(
                ctx,
                &fit.prior,
                fit.state,
                pass_eta,
                opts.precond,
                config.t_prime,
                config.thin,
                seed,
            )?;
            let trace: Vec<TraceRow> = fit.trace.iter().map(TraceRow::from).collect();
            (fit.prior, trace, Some(theta_hat), lag1, fit.clamp_events, 0)
        }
        Algorithm::LangevinMcem => {
            let ctx = ctx_ref.ok_or_else(|| anyhow!("missing reparametrization context"))?;
            let opts = McemOptions {
                burn_in: config.burn_in,
                ..McemOptions::new(config.t_iter, total_iters, penalty.clone())
            };
            let fit = fit_langevin_mcem(
                ctx,
                &init,
                &opts,
                config.eta_phi,
                config.subsample,
                fit_rng,
                Some(&truth),
            )?;
            let (theta_hat, lag1) = posterior_pass_ula(
                ctx,
                &fit.prior,
                fit.state,
                config.eta_phi,
                false,
                config.t_prime,
                config.thin,
                seed,
            )?;
            let trace: Vec<TraceRow> = fit.trace.iter().map(TraceRow::from).collect();
            (
                fit.prior,
                trace,
                Some(theta_hat),
                lag1,
                fit.clamp_events,
                fit.solver_warnings,
            )
        }
        Algorithm::GibbsMcem => {
            let opts = McemOptions {
                burn_in: config.burn_in,
                ..McemOptions::new(config.t_iter, total_iters, penalty.clone())
            };
            let mut fit = fit_gibbs_mcem(model, &init, &opts, fit_rng, Some(&truth))?;
            let mut pass_rng = stream_rng(seed, STREAM_POSTERIOR);
            let (theta_hat, lag1) = gibbs_posterior_pass(
                &mut fit.state,
                &fit.prior,
                model,
                &mut pass_rng,
                config.t_prime,
                config.thin,
            )?;
            let trace: Vec<TraceRow> = fit.trace.iter().map(TraceRow::from).collect();
            (
                fit.prior,
                trace,
                Some(theta_hat),
                lag1,
                fit.clamp_events,
                fit.solver_warnings,
            )
        }
        Algorithm::Cavi => {
            let opts = CaviOptions::new(total_iters, penalty.clone());
            let fit = fit_cavi(model, &init, &opts, Some(&truth))?;
            let theta_hat = fit.state.posterior_mean();
            let trace: Vec<TraceRow> = fit.trace.iter().map(TraceRow::from).collect();
            (
                fit.prior().clone(),
                trace,
                Some(theta_hat),
                None,
                fit.clamp_events,
                fit.solver_warnings,
            )
        }
    };

    let metrics = compute_metrics(
        config.algorithm.name(),
        seed,
        &prior,
        theta_hat.as_ref(),
        &trace,
        dataset,
        lag1,
        clamp_events,
        solver_warnings,
    )?;
    Ok(SeedRun {
        prior,
        theta_hat,
        trace,
        metrics,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Builds the reparametrization context an algorithm needs (with the
/// preconditioner attached for the preconditioned variant).
pub fn build_context(
    config: &ExperimentConfig,
    dataset: &Dataset,
) -> anyhow::Result<ReparamContext> {
    let ctx = build_reparam(&dataset.model, TauRule::Auto)?;
    Ok(match config.algorithm {
        Algorithm::EbflowPrecond => ctx.with_preconditioner()?,
        _ => ctx,
    })
}

#[allow(clippy::too_many_arguments)]
fn posterior_pass_ula(
    ctx: &ReparamContext,
    prior: &GridPrior,
    state: ebflow_core::model::ChainState,
    eta_phi: f64,
    precond: bool,
    t_prime: usize,
    thin: usize,
    seed: u64,
) -> anyhow::Result<(DVector<f64>, Option<f64>)> {
    // fresh stream so posterior sampling never aliases fit randomness
    let mut state = state;
    state.rng = stream_rng(seed, STREAM_POSTERIOR);
    let p = ctx.dim();
    let mut accum = PosteriorMeanAccum::new(prior, ctx.tau(), p);
    let mut autocorr = AutocorrAccum::new(p);
    let thin = thin.max(1);
    let mut step = 0usize;
    run_frozen_chain(ctx, prior, state, eta_phi, t_prime, precond, |st| {
        step += 1;
        if step % thin == 0 {
            accum.push(&st.phi);
            autocorr.push(&st.phi);
        }
    })?;
    let lag1 = autocorr.mean_lag1();
    let est = accum.finish()?;
    Ok((est.theta_hat, lag1))
}

#[allow(clippy::too_many_arguments)]
fn compute_metrics(
    algorithm: &str,
    seed: u64,
    prior: &GridPrior,
    theta_hat: Option<&DVector<f64>>,
    trace: &[TraceRow],
    dataset: &Dataset,
    lag1: Option<f64>,
    clamp_events: usize,
    solver_warnings: usize,
) -> anyhow::Result<Metrics> {
    let truth = make_prior(&dataset.meta.prior)?;
    let tv = Some(tv_distance(prior, &truth)?);
    let iterations_to_tv02 = iterations_to_tv_below(trace, 0.2);
    let identity = matches!(dataset.meta.design.kind, DesignKind::Identity);
    let marginal_nll = if identity {
        Some(identity_marginal_nll(&dataset.model, prior)?)
    } else {
        None
    };
    let mse = match (identity, theta_hat, &dataset.model.theta_star) {
        (false, Some(hat), Some(star)) => {
            let spec = DesignSpec {
                kind: dataset.meta.design.kind.clone(),
                n: N_TEST,
                p: dataset.meta.design.p,
            };
            let mut rng = stream_rng(dataset.meta.seed, STREAM_TEST_DESIGN);
            let x_new = make_design(&spec, &mut rng)?;
            Some(prediction_mse(hat, star, &x_new)?)
        }
        _ => None,
    };
    Ok(Metrics {
        algorithm: algorithm.to_string(),
        seed,
        tv,
        iterations_to_tv02,
        marginal_nll,
        mse,
        lag1_autocorr: lag1,
        clamp_events,
        solver_warnings,
    })
}

/// First trace iteration with TV strictly below the threshold, rounded to
/// the nearest 100; `None` unless the final recorded TV is below it.
fn iterations_to_tv_below(trace: &[TraceRow], threshold: f64) -> Option<u64> {
    let final_tv = trace.iter().rev().find_map(|r| r.tv)?;
    if final_tv >= threshold {
        return None;
    }
    let first = trace
        .iter()
        .find(|r| r.tv.is_some_and(|tv| tv < threshold))?
        .iter;
    Some((first as f64 / 100.0).round() as u64 * 100)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), format_f64)
}

fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> anyhow::Result<()> {
    let mut buf = String::from(TRACE_HEADER);
    buf.push('\n');
    for r in trace {
        buf.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iter,
            fmt_opt(r.eta_phi),
            fmt_opt(r.eta_w),
            fmt_opt(r.tv),
            fmt_opt(r.seq_nll),
            r.clamp_count
        ));
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

fn write_weights_csv(path: &Path, prior: &GridPrior) -> anyhow::Result<()> {
    let mut buf = String::from(WEIGHTS_HEADER);
    buf.push('\n');
    for (b, w) in prior.support().iter().zip(prior.weights()) {
        buf.push_str(&format!("{},{}\n", format_f64(*b), format_f64(*w)));
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// Writes the full result directory for one seed.
pub fn write_seed(out: &Path, config: &ExperimentConfig, run: &SeedRun) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_trace_csv(&out.join("trace.csv"), &run.trace)?;
    write_weights_csv(&out.join("final_weights.csv"), &run.prior)?;
    if let Some(theta) = &run.theta_hat {
        ebflow_core::datagen::write_column_csv(&out.join("theta_hat.csv"), theta.as_slice())?;
    }
    fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&run.metrics)?,
    )?;
    let meta = RunMeta {
        seed: run.metrics.seed,
        algorithm: config.algorithm.name(),
        build: BUILD_ID,
        rng: RNG_CONTRACT,
        wall_time_secs: run.wall_time_secs,
    };
    fs::write(
        out.join("run_meta.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(())
}

fn read_trace_csv(path: &Path) -> anyhow::Result<Vec<TraceRow>> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    let parse_opt = |tok: &str| -> anyhow::Result<Option<f64>> {
        if tok == "NA" {
            Ok(None)
        } else {
            Ok(Some(tok.parse::<f64>()?))
        }
    };
    for (i, line) in raw.lines().enumerate() {
        if i == 0 {
            if line != TRACE_HEADER {
                return Err(anyhow!("unexpected trace header: {line}"));
            }
            continue;
        }
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != 6 {
            return Err(anyhow!("trace line {} has {} fields", i + 1, toks.len()));
        }
        rows.push(TraceRow {
            iter: toks[0].parse()?,
            eta_phi: parse_opt(toks[1])?,
            eta_w: parse_opt(toks[2])?,
            tv: parse_opt(toks[3])?,
            seq_nll: parse_opt(toks[4])?,
            clamp_count: toks[5].parse()?,
        });
    }
    Ok(rows)
}

fn read_weights_csv(path: &Path) -> anyhow::Result<GridPrior> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if i == 0 {
            if line != WEIGHTS_HEADER {
                return Err(anyhow!("unexpected weights header: {line}"));
            }
            continue;
        }
        let (b, w) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("weights line {} lacks a comma", i + 1))?;
        support.push(b.parse::<f64>()?);
        weights.push(w.parse::<f64>()?);
    }
    Ok(GridPrior::new(support, weights)?)
}

/// `evaluate`: recompute the metrics row from a result directory and its
/// dataset, refreshing `metrics.json`.
pub fn cmd_evaluate(result_dir: &Path, data_dir: &Path) -> anyhow::Result<Metrics> {
    let dataset = load_dataset(data_dir)?;
    let prior = read_weights_csv(&result_dir.join("final_weights.csv"))?;
    let trace = read_trace_csv(&result_dir.join("trace.csv"))?;
    let theta_path = result_dir.join("theta_hat.csv");
    let theta_hat = if theta_path.exists() {
        Some(DVector::from_vec(ebflow_core::datagen::read_column_csv(
            &theta_path,
        )?))
    } else {
        None
    };
    // algorithm/seed identity comes from run_meta when present
    let (algorithm, seed, lag1, clamps, warnings) =
        match fs::read_to_string(result_dir.join("metrics.json")) {
            Ok(raw) => {
                let old: Metrics = serde_json::from_str(&raw)?;
                (
                    old.algorithm,
                    old.seed,
                    old.lag1_autocorr,
                    old.clamp_events,
                    old.solver_warnings,
                )
            }
            Err(_) => ("unknown".to_string(), 0, None, 0, 0),
        };
    let metrics = compute_metrics(
        &algorithm,
        seed,
        &prior,
        theta_hat.as_ref(),
        &trace,
        &dataset,
        lag1,
        clamps,
        warnings,
    )?;
    fs::write(
        result_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    Ok(metrics)
}

pub fn metrics_csv_header() -> String {
    "algorithm,seed,tv,iterations_to_tv02,marginal_nll,mse,lag1_autocorr,clamp_events,solver_warnings"
        .to_string()
}

pub fn metrics_csv_row(m: &Metrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        m.algorithm,
        m.seed,
        fmt_opt(m.tv),
        m.iterations_to_tv02
            .map_or_else(|| "NA".to_string(), |v| v.to_string()),
        fmt_opt(m.marginal_nll),
        fmt_opt(m.mse),
        fmt_opt(m.lag1_autocorr),
        m.clamp_events,
        m.solver_warnings
    )
}

#[derive(Debug, Serialize)]
pub struct ExperimentSummary {
    pub algorithm: String,
    pub prior: String,
    pub design: String,
    pub n: usize,
    pub p: usize,
    pub seeds_total: usize,
    pub seeds_failed: usize,
    pub tv_mean: Option<f64>,
    pub tv_sd: Option<f64>,
    pub iters_to_tv02_median: Option<u64>,
    pub mse_mean: Option<f64>,
    pub marginal_nll_mean: Option<f64>,
}

fn kind_names(config: &ExperimentConfig) -> (String, String) {
    let prior = match &config.prior.kind {
        ebflow_core::datagen::PriorKind::Gaussian => "gaussian",
        ebflow_core::datagen::PriorKind::Cauchy => "cauchy",
        ebflow_core::datagen::PriorKind::Skew => "skew",
        ebflow_core::datagen::PriorKind::Bimodal => "bimodal",
        ebflow_core::datagen::PriorKind::Custom { .. } => "custom",
    };
    let design = match &config.design.kind {
        DesignKind::Identity => "identity",
        DesignKind::Iid => "iid",
        DesignKind::Block02Corr09 => "block02corr0.9",
        DesignKind::Block10Corr05 => "block10corr0.5",
        DesignKind::Custom { .. } => "custom",
    };
    (prior.to_string(), design.to_string())
}

/// `experiment`: generate the shared instance, fit every seed (worker pool),
/// and aggregate the summary-table row.
pub fn cmd_experiment(
    config: &ExperimentConfig,
    out: &Path,
    threads: Option<usize>,
) -> anyhow::Result<ExperimentSummary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(config)?,
    )?;
    let dataset_dir = out.join("dataset");
    cmd_generate(config, config.data_seed, &dataset_dir)?;
    let dataset = load_dataset(&dataset_dir)?;

    let needs_ctx = !matches!(config.algorithm, Algorithm::Cavi | Algorithm::GibbsMcem);
    let shared_ctx = if needs_ctx {
        Some(build_context(config, &dataset)?)
    } else {
        None
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().context("building worker pool")?;

    let results: Vec<(u64, anyhow::Result<Metrics>)> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let run = run_seed(config, &dataset, shared_ctx.as_ref(), seed);
                let outcome = run.and_then(|r| {
                    write_seed(&out.join(format!("seed_{seed}")), config, &r)?;
                    Ok(r.metrics)
                });
                (seed, outcome)
            })
            .collect()
    });

    // per-seed table
    let mut per_seed = String::from("seed,status,tv,iterations_to_tv02,marginal_nll,mse\n");
    let mut ok_metrics = Vec::new();
    for (seed, outcome) in &results {
        match outcome {
            Ok(m) => {
                per_seed.push_str(&format!(
                    "{seed},ok,{},{},{},{}\n",
                    fmt_opt(m.tv),
                    m.iterations_to_tv02
                        .map_or_else(|| "NA".to_string(), |v| v.to_string()),
                    fmt_opt(m.marginal_nll),
                    fmt_opt(m.mse),
                ));
                ok_metrics.push(m.clone());
            }
            Err(e) => {
                per_seed.push_str(&format!("{seed},failed,NA,NA,NA,NA\n"));
                eprintln!("seed {seed} failed: {e:#}");
            }
        }
    }
    fs::write(out.join("per_seed.csv"), per_seed)?;

    let (prior_name, design_name) = kind_names(config);
    let tvs: Vec<f64> = ok_metrics.iter().filter_map(|m| m.tv).collect();
    let mses: Vec<f64> = ok_metrics.iter().filter_map(|m| m.mse).collect();
    let nlls: Vec<f64> = ok_metrics.iter().filter_map(|m| m.marginal_nll).collect();
    let summary = ExperimentSummary {
        algorithm: config.algorithm.name().to_string(),
        prior: prior_name,
        design: design_name,
        n: config.design.n,
        p: config.design.p,
        seeds_total: config.seeds.len(),
        seeds_failed: config.seeds.len() - ok_metrics.len(),
        tv_mean: mean(&tvs),
        tv_sd: sample_sd(&tvs),
        iters_to_tv02_median: median_iters(&ok_metrics),
        mse_mean: mean(&mses),
        marginal_nll_mean: mean(&nlls),
    };
    let mut summary_csv = String::from(
        "algorithm,prior,design,n,p,seeds_total,seeds_failed,tv_mean,tv_sd,iters_to_tv02_median,mse_mean,marginal_nll_mean\n",
    );
    summary_csv.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        summary.algorithm,
        summary.prior,
        summary.design,
        summary.n,
        summary.p,
        summary.seeds_total,
        summary.seeds_failed,
        fmt_opt(summary.tv_mean),
        fmt_opt(summary.tv_sd),
        summary
            .iters_to_tv02_median
            .map_or_else(|| "NA".to_string(), |v| v.to_string()),
        fmt_opt(summary.mse_mean),
        fmt_opt(summary.marginal_nll_mean),
    ));
    fs::write(out.join("summary.csv"), summary_csv)?;
    Ok(summary)
}

fn mean(vals: &[f64]) -> Option<f64> {
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn sample_sd(vals: &[f64]) -> Option<f64> {
    if vals.len() < 2 {
        return None;
    }
    let m = mean(vals)?;
    Some((vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt())
}

/// Lower median of the per-seed iteration counts, with seeds that never
/// reached the threshold counted as `+inf` (so a majority of misses yields
/// `None`, the table's NA).
fn median_iters(metrics: &[Metrics]) -> Option<u64> {
    if metrics.is_empty() {
        return None;
    }
    let mut vals: Vec<Option<u64>> = metrics.iter().map(|m| m.iterations_to_tv02).collect();
    vals.sort_by_key(|v| v.unwrap_or(u64::MAX));
    vals[(vals.len() - 1) / 2]
}

/// Default output directory resolution: explicit flag, else the config's
/// `out_dir`.
pub fn resolve_out(flag: Option<PathBuf>, config: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    flag.or_else(|| config.out_dir.clone()).ok_or_else(|| {
        ConfigError("no output directory: pass --out or set out_dir in the config".into()).into()
    })
}

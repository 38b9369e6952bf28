//! Comparison estimators: mean-field coordinate-ascent variational inference
//! in the original parametrization, Gibbs-within-EM, and Langevin-within-EM.
//!
//! CAVI and Gibbs both work coordinate-wise with the exponential-tilt
//! conditional
//!
//! `w_{j,k} ∝ w_k exp(-||x_j||^2 b_k^2 / (2 sigma^2)
//!                    + (y - X_{-j} t_{-j})^T x_j b_k / sigma^2)`,
//!
//! where `t` is the mean-field mean (CAVI) or the current sample (Gibbs).
//! Both maintain the residual `r = y - X t` incrementally so a coordinate
//! visit costs one column dot product.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ebflow::{ula_step, SplinePenalty};
use crate::error::{Error, Result};
use crate::math::kl_weights;
use crate::model::{ChainState, GridPrior, LinearModel, ReparamContext};
use crate::rng::sample_categorical;
use crate::seqnpmle::{solve_seq_npmle_warm, SeqObjective};
use crate::simplex::simplex_descent;

/// Fraction of uniform mixed into M-step warm starts so the convex solver
/// can revive atoms the previous iterate had driven to zero.
const WARM_START_UNIFORM_MIX: f64 = 0.05;
const STOP_WINDOW: usize = 50;

/// Trace row shared by the baseline fitters; diagnostics are populated at
/// the trace cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTrace {
    pub iter: usize,
    pub tv: Option<f64>,
    /// CAVI variational objective (up to an additive constant); `None` for
    /// the MCEM fitters.
    pub objective: Option<f64>,
    pub clamp_events: usize,
}

// ---------------------------------------------------------------------------
// CAVI
// ---------------------------------------------------------------------------

/// Mean-field state: one simplex row per coordinate, the prior, and the
/// incrementally maintained residual `r = y - X E[theta]`.
#[derive(Debug, Clone)]
pub struct MeanFieldState {
    q: Vec<f64>,
    e_theta: DVector<f64>,
    resid: DVector<f64>,
    col_norms_sq: Vec<f64>,
    prior: GridPrior,
}

impl MeanFieldState {
    /// Uniform rows and uniform-prior-agnostic start: every `q_j` is set to
    /// the given prior's weights.
    pub fn new(model: &LinearModel, prior: GridPrior) -> Result<Self> {
        let p = model.p();
        let k = prior.len();
        let mut q = Vec::with_capacity(p * k);
        for _ in 0..p {
            q.extend_from_slice(prior.weights());
        }
        let e0: f64 = prior
            .support()
            .iter()
            .zip(prior.weights())
            .map(|(&b, &w)| b * w)
            .sum();
        let e_theta = DVector::from_element(p, e0);
        let resid = &model.y - &model.x * &e_theta;
        let col_norms_sq = (0..p).map(|j| model.x.column(j).norm_squared()).collect();
        Ok(MeanFieldState {
            q,
            e_theta,
            resid,
            col_norms_sq,
            prior,
        })
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let k = self.prior.len();
        &self.q[j * k..(j + 1) * k]
    }

    pub fn prior(&self) -> &GridPrior {
        &self.prior
    }

    pub fn e_theta(&self) -> &DVector<f64> {
        &self.e_theta
    }

    /// Mean-field posterior mean, the CAVI answer for `E[theta | y]`.
    pub fn posterior_mean(&self) -> DVector<f64> {
        self.e_theta.clone()
    }

    /// Max-norm gap between the cached residual and a recomputation.
    pub fn residual_drift(&self, model: &LinearModel) -> f64 {
        let fresh = &model.y - &model.x * &self.e_theta;
        (&fresh - &self.resid).amax()
    }

    /// Coordinate average `(1/p) sum_j w_{j,k}`.
    pub fn mean_rows(&self) -> Vec<f64> {
        let k = self.prior.len();
        let p = self.e_theta.len();
        let mut out = vec![0.0; k];
        for j in 0..p {
            for (c, &v) in self.row(j).iter().enumerate() {
                out[c] += v;
            }
        }
        for v in &mut out {
            *v /= p as f64;
        }
        out
    }
}

/// Exponential-tilt logits for coordinate `j` given tilt `c = (y - X_{-j}
/// t_{-j})^T x_j`, shared by CAVI and Gibbs.
fn coordinate_logits(
    prior: &GridPrior,
    col_norm_sq: f64,
    c: f64,
    sigma_sq: f64,
    out: &mut Vec<f64>,
) {
    out.clear();
    for (&b, &w) in prior.support().iter().zip(prior.weights()) {
        let lw = if w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
        out.push(lw - col_norm_sq * b * b / (2.0 * sigma_sq) + c * b / sigma_sq);
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(mx > f64::NEG_INFINITY);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - mx).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// Replaces row `j` by the exact conditional minimizer given the other rows
/// and the prior, updating the residual cache incrementally.
pub fn cavi_coordinate_update(state: &mut MeanFieldState, model: &LinearModel, j: usize) {
    let k = state.prior.len();
    // (y - X_{-j} E[theta_{-j}])^T x_j = r^T x_j + ||x_j||^2 E[theta_j]
    let c = state.resid.dot(&model.x.column(j)) + state.col_norms_sq[j] * state.e_theta[j];
    let mut logits = Vec::with_capacity(k);
    coordinate_logits(
        &state.prior,
        state.col_norms_sq[j],
        c,
        model.sigma_sq,
        &mut logits,
    );
    softmax_in_place(&mut logits);
    let e_new: f64 = state
        .prior
        .support()
        .iter()
        .zip(&logits)
        .map(|(&b, &w)| b * w)
        .sum();
    let shift = e_new - state.e_theta[j];
    if shift != 0.0 {
        state.resid.axpy(-shift, &model.x.column(j), 1.0);
    }
    state.e_theta[j] = e_new;
    state.q[j * k..(j + 1) * k].copy_from_slice(&logits);
}

/// Outcome of a prior update through the convex solver.
#[derive(Debug, Clone, Copy)]
pub struct PriorUpdateOutcome {
    pub converged: bool,
    pub clamp_events: usize,
}

/// Updates the prior to minimize `-sum_k qbar_k ln w_k + penalty(w)` with
/// `qbar` the coordinate average of the rows. Closed form `w = qbar` at
/// `lambda = 0`; projected multiplicative descent otherwise.
pub fn cavi_prior_update(
    state: &mut MeanFieldState,
    penalty: Option<&SplinePenalty>,
    tol: f64,
    max_iter: usize,
) -> Result<PriorUpdateOutcome> {
    let qbar = state.mean_rows();
    let (weights, outcome) = minimize_cross_entropy(&qbar, penalty, tol, max_iter)?;
    state.prior = state.prior.with_weights(weights)?;
    Ok(outcome)
}

/// Shared penalized M-step: `min_w -sum_k f_k ln w_k + penalty(w)` over the
/// simplex for a fixed frequency vector `f`.
fn minimize_cross_entropy(
    freq: &[f64],
    penalty: Option<&SplinePenalty>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, PriorUpdateOutcome)> {
    let k = freq.len();
    let penalized = penalty.is_some_and(|p| p.lambda() > 0.0);
    if !penalized {
        return Ok((
            freq.to_vec(),
            PriorUpdateOutcome {
                converged: true,
                clamp_events: 0,
            },
        ));
    }
    let pen = penalty.unwrap();
    let eval = |w: &[f64]| -> (f64, Vec<f64>) {
        let mut f = pen.value(w);
        for c in 0..k {
            if freq[c] > 0.0 {
                f -= freq[c] * w[c].max(1e-300).ln();
            }
        }
        let g = pen.gradient(w);
        let wg: Vec<f64> = (0..k).map(|c| -freq[c] + w[c] * g[c]).collect();
        (f, wg)
    };
    let uniform = 1.0 / k as f64;
    let init: Vec<f64> = freq
        .iter()
        .map(|&v| (1.0 - WARM_START_UNIFORM_MIX) * v + WARM_START_UNIFORM_MIX * uniform)
        .collect();
    let out = simplex_descent(&init, &eval, tol, max_iter, STOP_WINDOW);
    Ok((
        out.weights,
        PriorUpdateOutcome {
            converged: out.converged,
            clamp_events: out.clamp_events,
        },
    ))
}

/// Mean-field objective `F(q, g)` up to an additive constant independent of
/// `(q, g)`:
///
/// `(1/p) [ (||y - X E||^2 + sum_j ||x_j||^2 Var_j) / (2 sigma^2)
///          + sum_j KL(q_j || w) ] + penalty(w)`.
pub fn cavi_objective(
    state: &MeanFieldState,
    model: &LinearModel,
    penalty: Option<&SplinePenalty>,
) -> f64 {
    let p = model.p();
    let mut quad = state.resid.norm_squared();
    for j in 0..p {
        let e = state.e_theta[j];
        let second: f64 = state
            .prior
            .support()
            .iter()
            .zip(state.row(j))
            .map(|(&b, &w)| b * b * w)
            .sum();
        quad += state.col_norms_sq[j] * (second - e * e);
    }
    let mut kl_total = 0.0;
    for j in 0..p {
        kl_total += kl_weights(state.row(j), state.prior.weights());
    }
    let mut f = (quad / (2.0 * model.sigma_sq) + kl_total) / p as f64;
    if let Some(pen) = penalty {
        f += pen.value(state.prior.weights());
    }
    f
}

#[derive(Debug, Clone)]
pub struct CaviOptions {
    pub iters: usize,
    pub penalty: Option<SplinePenalty>,
    pub trace_cadence: usize,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl CaviOptions {
    pub fn new(iters: usize, penalty: Option<SplinePenalty>) -> Self {
        CaviOptions {
            iters,
            penalty,
            trace_cadence: 1,
            solver_tol: 1e-8,
            solver_max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaviFit {
    pub state: MeanFieldState,
    pub trace: Vec<BaselineTrace>,
    pub clamp_events: usize,
    pub solver_warnings: usize,
}

impl CaviFit {
    pub fn prior(&self) -> &GridPrior {
        self.state.prior()
    }
}

/// Runs CAVI sweeps, each updating `q_1, ..., q_p` then the prior, in that
/// order. Deterministic; no burn-in.
pub fn fit_cavi(
    model: &LinearModel,
    init_prior: &GridPrior,
    opts: &CaviOptions,
    truth: Option<&GridPrior>,
) -> Result<CaviFit> {
    let mut state = MeanFieldState::new(model, init_prior.clone())?;
    let mut trace = Vec::with_capacity(opts.iters);
    let mut clamp_events = 0usize;
    let mut solver_warnings = 0usize;
    let cadence = opts.trace_cadence.max(1);
    let mut prev_objective = f64::INFINITY;
    for it in 1..=opts.iters {
        for j in 0..model.p() {
            cavi_coordinate_update(&mut state, model, j);
        }
        let outcome = cavi_prior_update(
            &mut state,
            opts.penalty.as_ref(),
            opts.solver_tol,
            opts.solver_max_iter,
        )?;
        clamp_events += outcome.clamp_events;
        if !outcome.converged {
            solver_warnings += 1;
        }
        let objective = cavi_objective(&state, model, opts.penalty.as_ref());
        debug_assert!(
            objective <= prev_objective + 1e-9 * prev_objective.abs().max(1.0),
            "variational objective increased: {prev_objective} -> {objective}"
        );
        prev_objective = objective;
        let diag = it % cadence == 0 || it == opts.iters;
        trace.push(BaselineTrace {
            iter: it,
            tv: match (diag, truth) {
                (true, Some(t)) => Some(crate::inference::tv_distance(state.prior(), t)?),
                _ => None,
            },
            objective: Some(objective),
            clamp_events,
        });
    }
    Ok(CaviFit {
        state,
        trace,
        clamp_events,
        solver_warnings,
    })
}

// ---------------------------------------------------------------------------
// Gibbs-MCEM
// ---------------------------------------------------------------------------

/// Gibbs sampler state: the current atom index per coordinate, the residual
/// cache `r = y - X theta`, and the tally matrix accumulated between
/// M-steps.
#[derive(Debug, Clone)]
pub struct GibbsState {
    theta_idx: Vec<usize>,
    resid: DVector<f64>,
    counts: Vec<u32>,
    tallied_sweeps: usize,
    col_norms_sq: Vec<f64>,
}

impl GibbsState {
    /// Starts every coordinate at the atom nearest zero (ties toward the
    /// lower index, relevant for even K).
    pub fn new(model: &LinearModel, prior: &GridPrior) -> Self {
        let k0 = prior
            .support()
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let p = model.p();
        let theta_idx = vec![k0; p];
        let theta = DVector::from_element(p, prior.support()[k0]);
        let resid = &model.y - &model.x * &theta;
        let col_norms_sq = (0..p).map(|j| model.x.column(j).norm_squared()).collect();
        GibbsState {
            theta_idx,
            resid,
            counts: vec![0; p * prior.len()],
            tallied_sweeps: 0,
            col_norms_sq,
        }
    }

    pub fn theta(&self, prior: &GridPrior) -> DVector<f64> {
        DVector::from_fn(self.theta_idx.len(), |j, _| {
            prior.support()[self.theta_idx[j]]
        })
    }

    pub fn theta_indices(&self) -> &[usize] {
        &self.theta_idx
    }

    pub fn residual_drift(&self, model: &LinearModel, prior: &GridPrior) -> f64 {
        let fresh = &model.y - &model.x * self.theta(prior);
        (&fresh - &self.resid).amax()
    }

    /// Tallied atom frequencies `counts / (p * sweeps)`; zeros when nothing
    /// has been tallied yet.
    pub fn frequencies(&self, k: usize) -> Vec<f64> {
        let total = (self.theta_idx.len() * self.tallied_sweeps) as f64;
        let mut f = vec![0.0; k];
        if total == 0.0 {
            return f;
        }
        for j in 0..self.theta_idx.len() {
            for c in 0..k {
                f[c] += self.counts[j * k + c] as f64;
            }
        }
        for v in &mut f {
            *v /= total;
        }
        f
    }

    fn clear_tallies(&mut self, k: usize) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.tallied_sweeps = 0;
        debug_assert_eq!(self.counts.len(), self.theta_idx.len() * k);
    }
}

/// Conditional distribution of coordinate `j` given the rest of `theta`,
/// recomputed from scratch (no residual cache); the reference form of the
/// sweep's sampling distribution, used by exactness tests.
pub fn coordinate_conditional(
    model: &LinearModel,
    prior: &GridPrior,
    theta: &DVector<f64>,
    j: usize,
) -> Vec<f64> {
    let col = model.x.column(j);
    let resid = &model.y - &model.x * theta;
    let c = resid.dot(&col) + col.norm_squared() * theta[j];
    let mut logits = Vec::with_capacity(prior.len());
    coordinate_logits(prior, col.norm_squared(), c, model.sigma_sq, &mut logits);
    softmax_in_place(&mut logits);
    logits
}

/// One systematic-scan sweep, resampling `theta_1, ..., theta_p` in order
/// from their conditionals; tallies the visited atoms when `tally` is set.
pub fn gibbs_sweep(
    state: &mut GibbsState,
    prior: &GridPrior,
    model: &LinearModel,
    rng: &mut ChaCha8Rng,
    tally: bool,
) {
    let k = prior.len();
    let mut logits = Vec::with_capacity(k);
    for j in 0..model.p() {
        let col = model.x.column(j);
        let old_b = prior.support()[state.theta_idx[j]];
        let c = state.resid.dot(&col) + state.col_norms_sq[j] * old_b;
        coordinate_logits(prior, state.col_norms_sq[j], c, model.sigma_sq, &mut logits);
        softmax_in_place(&mut logits);
        let idx = sample_categorical(rng, &logits);
        let new_b = prior.support()[idx];
        if new_b != old_b {
            state.resid.axpy(old_b - new_b, &col, 1.0);
        }
        state.theta_idx[j] = idx;
        if tally {
            state.counts[j * k + idx] += 1;
        }
    }
    if tally {
        state.tallied_sweeps += 1;
    }
}

/// Options shared by the two MCEM fitters.
#[derive(Debug, Clone)]
pub struct McemOptions {
    /// Monte Carlo iterations (sweeps or ULA steps) between M-steps.
    pub t_iter: usize,
    /// Total Monte Carlo iterations including burn-in.
    pub total_iters: usize,
    /// Iterations at the start with frozen prior weights.
    pub burn_in: usize,
    pub penalty: Option<SplinePenalty>,
    pub trace_cadence: usize,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl McemOptions {
    pub fn new(t_iter: usize, total_iters: usize, penalty: Option<SplinePenalty>) -> Self {
        McemOptions {
            t_iter,
            total_iters,
            burn_in: 200,
            penalty,
            trace_cadence: 10,
            solver_tol: 1e-8,
            solver_max_iter: 2_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GibbsFit {
    pub prior: GridPrior,
    pub state: GibbsState,
    pub trace: Vec<BaselineTrace>,
    pub clamp_events: usize,
    pub solver_warnings: usize,
}

/// Gibbs-within-EM: `t_iter` tallied sweeps between M-steps, each M-step
/// refitting the prior to the tallied atom frequencies (exactly the
/// frequencies at `lambda = 0`) and clearing the tallies.
pub fn fit_gibbs_mcem(
    model: &LinearModel,
    init_prior: &GridPrior,
    opts: &McemOptions,
    mut rng: ChaCha8Rng,
    truth: Option<&GridPrior>,
) -> Result<GibbsFit> {
    if opts.t_iter == 0 {
        return Err(Error::InvalidArgument("t_iter must be at least 1".into()));
    }
    let k = init_prior.len();
    let mut prior = init_prior.clone();
    let mut state = GibbsState::new(model, &prior);
    let mut trace = Vec::with_capacity(opts.total_iters);
    let mut clamp_events = 0usize;
    let mut solver_warnings = 0usize;
    let cadence = opts.trace_cadence.max(1);
    for it in 1..=opts.total_iters {
        let frozen = it <= opts.burn_in;
        gibbs_sweep(&mut state, &prior, model, &mut rng, !frozen);
        if !frozen && state.tallied_sweeps == opts.t_iter {
            let freq = state.frequencies(k);
            let (weights, outcome) = minimize_cross_entropy(
                &freq,
                opts.penalty.as_ref(),
                opts.solver_tol,
                opts.solver_max_iter,
            )?;
            clamp_events += outcome.clamp_events;
            if !outcome.converged {
                solver_warnings += 1;
            }
            prior = prior.with_weights(weights)?;
            state.clear_tallies(k);
        }
        let diag = it % cadence == 0 || it == opts.total_iters;
        trace.push(BaselineTrace {
            iter: it,
            tv: match (diag, truth) {
                (true, Some(t)) => Some(crate::inference::tv_distance(&prior, t)?),
                _ => None,
            },
            objective: None,
            clamp_events,
        });
    }
    Ok(GibbsFit {
        prior,
        state,
        trace,
        clamp_events,
        solver_warnings,
    })
}

/// Extra sweeps with frozen prior, averaging the sampled coefficients into a
/// posterior-mean estimate; also reports the mean lag-1 autocorrelation of
/// the chain.
pub fn gibbs_posterior_pass(
    state: &mut GibbsState,
    prior: &GridPrior,
    model: &LinearModel,
    rng: &mut ChaCha8Rng,
    sweeps: usize,
    thin: usize,
) -> Result<(DVector<f64>, Option<f64>)> {
    if sweeps == 0 {
        return Err(Error::EmptyStream);
    }
    let thin = thin.max(1);
    let p = model.p();
    let mut sums = DVector::zeros(p);
    let mut kept = 0usize;
    let mut autocorr = crate::inference::AutocorrAccum::new(p);
    for s in 1..=sweeps {
        gibbs_sweep(state, prior, model, rng, false);
        if s % thin == 0 {
            let theta = state.theta(prior);
            sums += &theta;
            autocorr.push(&theta);
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::EmptyStream);
    }
    Ok((sums / kept as f64, autocorr.mean_lag1()))
}

// ---------------------------------------------------------------------------
// Langevin-MCEM
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LangevinFit {
    pub prior: GridPrior,
    pub state: ChainState,
    pub trace: Vec<BaselineTrace>,
    pub clamp_events: usize,
    pub solver_warnings: usize,
}

/// Langevin-within-EM: blocks of `t_iter` ULA iterations with frozen
/// weights; after each block, `subsample` coordinates drawn uniformly
/// without replacement from the pooled `p * t_iter` coordinates (the whole
/// pool when it is smaller) feed a penalized sequence-model NPMLE solve that
/// replaces the weights. Burn-in runs at step size 1.0.
pub fn fit_langevin_mcem(
    ctx: &ReparamContext,
    init_prior: &GridPrior,
    opts: &McemOptions,
    eta_phi: f64,
    subsample: usize,
    rng: ChaCha8Rng,
    truth: Option<&GridPrior>,
) -> Result<LangevinFit> {
    if opts.t_iter == 0 {
        return Err(Error::InvalidArgument("t_iter must be at least 1".into()));
    }
    if !init_prior.is_strictly_positive() {
        return Err(Error::InvalidArgument(
            "initial prior must be strictly positive on every atom".into(),
        ));
    }
    let p = ctx.dim();
    let tau = ctx.tau();
    let k = init_prior.len();
    let uniform = 1.0 / k as f64;
    let mut prior = init_prior.clone();
    let mut state = ChainState::new(p, rng);
    let mut pool: Vec<f64> = Vec::with_capacity(opts.t_iter * p);
    let mut trace = Vec::with_capacity(opts.total_iters);
    let mut clamp_events = 0usize;
    let mut solver_warnings = 0usize;
    let cadence = opts.trace_cadence.max(1);

    for it in 1..=opts.total_iters {
        let frozen = it <= opts.burn_in;
        let step = if frozen { 1.0 } else { eta_phi };
        state = ula_step(ctx, &prior, state, step, false)?;
        if !frozen {
            pool.extend(state.phi.iter().copied());
            if pool.len() == opts.t_iter * p {
                let sampled = draw_pool_subsample(&pool, subsample, &mut state.rng);
                let obj = SeqObjective::new(sampled, tau, prior.support().to_vec())?;
                let init: Vec<f64> = prior
                    .weights()
                    .iter()
                    .map(|&w| (1.0 - WARM_START_UNIFORM_MIX) * w + WARM_START_UNIFORM_MIX * uniform)
                    .collect();
                let sol = solve_seq_npmle_warm(
                    &obj,
                    opts.penalty.as_ref(),
                    &init,
                    opts.solver_tol,
                    opts.solver_max_iter,
                )?;
                if !sol.converged {
                    solver_warnings += 1;
                }
                clamp_events += sol.clamp_events;
                prior = sol.prior;
                pool.clear();
            }
        }
        let diag = it % cadence == 0 || it == opts.total_iters;
        trace.push(BaselineTrace {
            iter: it,
            tv: match (diag, truth) {
                (true, Some(t)) => Some(crate::inference::tv_distance(&prior, t)?),
                _ => None,
            },
            objective: None,
            clamp_events,
        });
    }
    Ok(LangevinFit {
        prior,
        state,
        trace,
        clamp_events,
        solver_warnings,
    })
}

/// Uniform subsample without replacement via partial Fisher-Yates; the whole
/// pool (in order) when `subsample >= pool.len()`.
fn draw_pool_subsample(pool: &[f64], subsample: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if subsample >= pool.len() {
        return pool.to_vec();
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..subsample {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..subsample].iter().map(|&i| pool[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_reparam, TauRule};
    use crate::rng::{stream_rng, STREAM_FIT};
    use nalgebra::DMatrix;
    use rand_distr::StandardNormal;

    fn identity_model(n: usize, seed: u64) -> LinearModel {
        let mut rng = stream_rng(seed, STREAM_FIT);
        let x = DMatrix::<f64>::identity(n, n);
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        LinearModel::new(x, y, 0.8, None).unwrap()
    }

    fn random_model(n: usize, p: usize, seed: u64) -> LinearModel {
        let mut rng = stream_rng(seed, STREAM_FIT);
        let x = DMatrix::from_fn(n, p, |_, _| {
            rng.sample::<f64, _>(StandardNormal) / (n as f64).sqrt()
        });
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        LinearModel::new(x, y, 1.1, None).unwrap()
    }

    fn grid5() -> GridPrior {
        GridPrior::uniform(GridPrior::equispaced_grid(2.0, 5)).unwrap()
    }

    #[test]
    fn identity_coordinate_update_is_exact_posterior() {
        let model = identity_model(6, 1);
        let prior = grid5();
        let mut state = MeanFieldState::new(&model, prior.clone()).unwrap();
        for j in 0..6 {
            cavi_coordinate_update(&mut state, &model, j);
        }
        for j in 0..6 {
            // x_j^T x_i = 0 for i != j, so the tilt is just y_j
            let mut expected: Vec<f64> = prior
                .support()
                .iter()
                .zip(prior.weights())
                .map(|(&b, &w)| {
                    w * (-(model.y[j] - b) * (model.y[j] - b) / (2.0 * model.sigma_sq)).exp()
                })
                .collect();
            let s: f64 = expected.iter().sum();
            expected.iter_mut().for_each(|v| *v /= s);
            for c in 0..5 {
                assert!((state.row(j)[c] - expected[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_column_returns_prior_row() {
        let mut x = DMatrix::<f64>::identity(4, 4);
        x.column_mut(2).fill(0.0);
        let y = DVector::from_vec(vec![0.4, -0.2, 0.9, 0.1]);
        let model = LinearModel::new(x, y, 1.0, None).unwrap();
        let prior = GridPrior::new(vec![-1.0, 0.0, 1.0], vec![0.2, 0.5, 0.3]).unwrap();
        let mut state = MeanFieldState::new(&model, prior.clone()).unwrap();
        cavi_coordinate_update(&mut state, &model, 2);
        for c in 0..3 {
            assert!((state.row(2)[c] - prior.weights()[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn coordinate_update_matches_naive_recompute() {
        let model = random_model(3, 3, 7);
        let mut state = MeanFieldState::new(&model, grid5()).unwrap();
        // churn the state, then compare each row against a from-scratch tilt
        for _ in 0..4 {
            for j in 0..3 {
                cavi_coordinate_update(&mut state, &model, j);
            }
        }
        for j in 0..3 {
            let col = model.x.column(j);
            let mut e_minus = state.e_theta().clone();
            e_minus[j] = 0.0;
            let c_naive = (&model.y - &model.x * e_minus).dot(&col);
            let mut logits = Vec::new();
            coordinate_logits(
                state.prior(),
                col.norm_squared(),
                c_naive,
                model.sigma_sq,
                &mut logits,
            );
            softmax_in_place(&mut logits);
            cavi_coordinate_update(&mut state, &model, j);
            for c in 0..5 {
                assert!(
                    (state.row(j)[c] - logits[c]).abs() < 1e-10,
                    "row {j} atom {c}"
                );
            }
        }
    }

    #[test]
    fn residual_cache_stays_consistent() {
        let model = random_model(8, 6, 3);
        let mut state = MeanFieldState::new(&model, grid5()).unwrap();
        for _ in 0..10 {
            for j in 0..6 {
                cavi_coordinate_update(&mut state, &model, j);
            }
            assert!(state.residual_drift(&model) < 1e-8);
        }
    }

    #[test]
    fn prior_update_closed_form_at_lambda_zero() {
        let model = random_model(5, 4, 9);
        let mut state = MeanFieldState::new(&model, grid5()).unwrap();

        // all rows are still equal to the init: the average is that row
        cavi_prior_update(&mut state, None, 1e-10, 100).unwrap();
        for c in 0..5 {
            assert!((state.prior().weights()[c] - grid5().weights()[c]).abs() < 1e-14);
        }

        for j in 0..4 {
            cavi_coordinate_update(&mut state, &model, j);
        }
        let qbar = state.mean_rows();
        cavi_prior_update(&mut state, None, 1e-10, 100).unwrap();
        for c in 0..5 {
            assert!((state.prior().weights()[c] - qbar[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn penalized_prior_update_beats_simplex_scan() {
        // K = 3 so the lattice scan is an oracle for the penalized M-step
        let qbar = [0.6, 0.1, 0.3];
        let grid = vec![-1.0, 0.0, 1.0];
        let pen = SplinePenalty::new(0.05, &grid).unwrap();
        let (w, _) = minimize_cross_entropy(&qbar, Some(&pen), 1e-12, 50_000).unwrap();
        let objective = |w: &[f64]| -> f64 {
            let mut f = crate::oracle::naive_spline_penalty(0.05, 1.0, w);
            for c in 0..3 {
                if qbar[c] > 0.0 {
                    if w[c] <= 0.0 {
                        return f64::INFINITY;
                    }
                    f -= qbar[c] * w[c].ln();
                }
            }
            f
        };
        let ours = objective(&w);
        let (_, scan_best) = crate::oracle::simplex_scan(3, 0.005, objective);
        assert!(
            ours <= scan_best + 1e-6,
            "solver {ours} vs scan {scan_best}"
        );
    }

    #[test]
    fn cavi_objective_decreases_without_penalty() {
        let model = random_model(10, 8, 12);
        let opts = CaviOptions::new(30, None);
        let fit = fit_cavi(&model, &grid5(), &opts, None).unwrap();
        let objectives: Vec<f64> = fit.trace.iter().filter_map(|t| t.objective).collect();
        for pair in objectives.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9 * pair[0].abs().max(1.0));
        }
    }

    #[test]
    fn gibbs_conditional_never_samples_zero_weight_atoms() {
        let model = identity_model(5, 4);
        let prior = GridPrior::new(vec![-1.0, 0.0, 1.0], vec![0.5, 0.0, 0.5]).unwrap();
        let mut state = GibbsState::new(&model, &prior);
        let mut rng = stream_rng(13, STREAM_FIT);
        for _ in 0..50 {
            gibbs_sweep(&mut state, &prior, &model, &mut rng, true);
            assert!(state.theta_indices().iter().all(|&i| i != 1));
        }
        assert!(state.residual_drift(&model, &prior) < 1e-8);
    }

    #[test]
    fn gibbs_identity_conditional_uses_only_own_observation() {
        let model = identity_model(4, 6);
        let prior = grid5();
        let mut rng = stream_rng(3, STREAM_FIT);
        let theta = DVector::from_fn(4, |_, _| {
            prior.support()[sample_categorical(&mut rng, prior.weights())]
        });
        let probs = coordinate_conditional(&model, &prior, &theta, 2);
        let mut expected: Vec<f64> = prior
            .support()
            .iter()
            .zip(prior.weights())
            .map(|(&b, &w)| {
                w * (-(model.y[2] - b) * (model.y[2] - b) / (2.0 * model.sigma_sq)).exp()
            })
            .collect();
        let s: f64 = expected.iter().sum();
        expected.iter_mut().for_each(|v| *v /= s);
        for c in 0..5 {
            assert!((probs[c] - expected[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn gibbs_mstep_equals_frequencies_and_burn_in_freezes() {
        let model = identity_model(6, 2);
        let prior = grid5();
        // burn-in only: prior unchanged
        let opts = McemOptions {
            burn_in: 10,
            ..McemOptions::new(5, 10, None)
        };
        let fit = fit_gibbs_mcem(&model, &prior, &opts, stream_rng(1, STREAM_FIT), None).unwrap();
        assert_eq!(fit.prior.weights(), prior.weights());

        // one tallied block: the lambda = 0 M-step is exactly the tallied
        // frequencies
        let opts = McemOptions {
            burn_in: 0,
            ..McemOptions::new(4, 4, None)
        };
        let mut reference = GibbsState::new(&model, &prior);
        let mut rng = stream_rng(7, STREAM_FIT);
        for _ in 0..4 {
            gibbs_sweep(&mut reference, &prior, &model, &mut rng, true);
        }
        let freq = reference.frequencies(prior.len());
        let fit = fit_gibbs_mcem(&model, &prior, &opts, stream_rng(7, STREAM_FIT), None).unwrap();
        for c in 0..prior.len() {
            assert!((fit.prior.weights()[c] - freq[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn langevin_mcem_pure_ula_when_t_iter_exceeds_span() {
        let model = random_model(6, 4, 20);
        let ctx = build_reparam(&model, TauRule::Auto).unwrap();
        let prior = grid5();
        let opts = McemOptions {
            burn_in: 5,
            ..McemOptions::new(100, 30, None)
        };
        let fit = fit_langevin_mcem(
            &ctx,
            &prior,
            &opts,
            0.5,
            10_000,
            stream_rng(2, STREAM_FIT),
            None,
        )
        .unwrap();
        // 25 post-burn-in iterations < t_iter = 100: no M-step ever fires
        assert_eq!(fit.prior.weights(), prior.weights());
        assert_eq!(fit.state.iter, 30);
    }

    #[test]
    fn pool_subsample_clamps_to_whole_pool() {
        let pool: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut rng = stream_rng(1, STREAM_FIT);
        let all = draw_pool_subsample(&pool, 50, &mut rng);
        assert_eq!(all, pool);
        let some = draw_pool_subsample(&pool, 4, &mut rng);
        assert_eq!(some.len(), 4);
        // distinct elements (without replacement)
        let mut sorted = some.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }

    #[test]
    fn langevin_mcem_moves_weights_after_a_block() {
        let model = random_model(10, 6, 21);
        let ctx = build_reparam(&model, TauRule::Auto).unwrap();
        let prior = grid5();
        let opts = McemOptions {
            burn_in: 3,
            ..McemOptions::new(5, 23, None)
        };
        let fit = fit_langevin_mcem(
            &ctx,
            &prior,
            &opts,
            0.5,
            1_000,
            stream_rng(5, STREAM_FIT),
            None,
        )
        .unwrap();
        assert_ne!(fit.prior.weights(), prior.weights());
        assert!(fit.prior.weights().iter().all(|&w| w >= 0.0));
        let sum: f64 = fit.prior.weights().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }
}

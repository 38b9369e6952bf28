//! The joint sampler: interleaved unadjusted-Langevin updates of the chain
//! iterate and Fisher-Rao updates of the prior weights, with optional
//! smoothing-spline regularization and preconditioning.
//!
//! Each iteration advances `phi` one ULA step against the current prior and
//! then moves the prior weights one multiplicative step toward the NPMLE of
//! the freshly advanced coordinates. A burn-in prefix runs the chain at a
//! large step size with the weights frozen at their initialization.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_mixture_density, log_weights};
use crate::model::{neg_log_posterior_grad, ChainState, GridPrior, ReparamContext};

/// Per-iteration step sizes. The log-linear kind decays geometrically from
/// `eta_phi_start` at post-burn-in iteration 1 to `eta_phi_end` at iteration
/// `decay_iters`, with the weight step a fixed ratio of the phi step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ScheduleKind {
    Constant {
        eta_phi: f64,
        eta_w: f64,
    },
    #[serde(rename = "loglinear")]
    LogLinear {
        eta_phi_start: f64,
        eta_phi_end: f64,
        decay_iters: usize,
        /// `eta_w / eta_phi`, held fixed along the decay.
        weight_ratio: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    /// Iterations at the start of a fit with frozen weights.
    pub burn_in: usize,
    /// Step size used during burn-in (large, for fast initial mixing).
    pub burn_in_eta_phi: f64,
}

impl StepSchedule {
    pub fn constant(eta_phi: f64, eta_w: f64, burn_in: usize) -> Result<Self> {
        let s = StepSchedule {
            kind: ScheduleKind::Constant { eta_phi, eta_w },
            burn_in,
            burn_in_eta_phi: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn log_linear(
        eta_phi_start: f64,
        eta_phi_end: f64,
        decay_iters: usize,
        weight_ratio: f64,
        burn_in: usize,
    ) -> Result<Self> {
        let s = StepSchedule {
            kind: ScheduleKind::LogLinear {
                eta_phi_start,
                eta_phi_end,
                decay_iters,
                weight_ratio,
            },
            burn_in,
            burn_in_eta_phi: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.burn_in_eta_phi > 0.0) {
            return Err(Error::InvalidArgument(
                "burn-in step size must be positive".into(),
            ));
        }
        match &self.kind {
            ScheduleKind::Constant { eta_phi, eta_w } => {
                if !(*eta_phi > 0.0 && *eta_w > 0.0) {
                    return Err(Error::InvalidArgument("step sizes must be positive".into()));
                }
                if *eta_w > 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "weight step {eta_w} exceeds 1; nonnegativity would be lost"
                    )));
                }
            }
            ScheduleKind::LogLinear {
                eta_phi_start,
                eta_phi_end,
                decay_iters,
                weight_ratio,
            } => {
                if !(*eta_phi_start > 0.0 && *eta_phi_end > 0.0 && *weight_ratio > 0.0) {
                    return Err(Error::InvalidArgument("step sizes must be positive".into()));
                }
                if *decay_iters == 0 {
                    return Err(Error::InvalidArgument(
                        "decay_iters must be at least 1".into(),
                    ));
                }
                let max_phi = eta_phi_start.max(*eta_phi_end);
                if weight_ratio * max_phi > 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "weight step {} exceeds 1",
                        weight_ratio * max_phi
                    )));
                }
            }
        }
        Ok(())
    }

    /// Phi step size at (1-based) overall iteration `t`.
    pub fn eta_phi(&self, t: usize) -> f64 {
        if t <= self.burn_in {
            return self.burn_in_eta_phi;
        }
        let s = t - self.burn_in;
        match &self.kind {
            ScheduleKind::Constant { eta_phi, .. } => *eta_phi,
            ScheduleKind::LogLinear {
                eta_phi_start,
                eta_phi_end,
                decay_iters,
                ..
            } => {
                if s >= *decay_iters {
                    return *eta_phi_end;
                }
                let frac = (s - 1) as f64 / (*decay_iters - 1) as f64;
                eta_phi_start * (eta_phi_end / eta_phi_start).powf(frac)
            }
        }
    }

    /// Weight step size at iteration `t`; zero during burn-in.
    pub fn eta_w(&self, t: usize) -> f64 {
        if t <= self.burn_in {
            return 0.0;
        }
        match &self.kind {
            ScheduleKind::Constant { eta_w, .. } => *eta_w,
            ScheduleKind::LogLinear { weight_ratio, .. } => weight_ratio * self.eta_phi(t),
        }
    }
}

/// Discretized smoothing-spline penalty `(lambda Delta / 2) sum_k
/// [D (w / Delta)]_k^2` with `D` the `(K-2) x K` second-difference
/// quadrature matrix with rows `(1, -2, 1) / Delta^2`.
#[derive(Debug, Clone)]
pub struct SplinePenalty {
    lambda: f64,
    delta: f64,
    k: usize,
    dtd: nalgebra::DMatrix<f64>,
}

impl SplinePenalty {
    /// Builds the penalty for the given grid; `lambda >= 0`.
    pub fn new(lambda: f64, grid: &[f64]) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "penalty weight must be nonnegative, got {lambda}"
            )));
        }
        let k = grid.len();
        if k < 2 {
            return Err(Error::InvalidArgument(
                "grid must have at least 2 points".into(),
            ));
        }
        let delta = (grid[k - 1] - grid[0]) / (k - 1) as f64;
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument("grid must be increasing".into()));
        }
        let d = Self::second_difference_matrix(k, delta);
        let dtd = d.transpose() * &d;
        Ok(SplinePenalty {
            lambda,
            delta,
            k,
            dtd,
        })
    }

    /// The `(K-2) x K` matrix with `D[i, i] = D[i, i+2] = 1/Delta^2` and
    /// `D[i, i+1] = -2/Delta^2`.
    pub fn second_difference_matrix(k: usize, delta: f64) -> nalgebra::DMatrix<f64> {
        let rows = k.saturating_sub(2);
        let inv = 1.0 / (delta * delta);
        nalgebra::DMatrix::from_fn(rows, k, |i, j| {
            if j == i || j == i + 2 {
                inv
            } else if j == i + 1 {
                -2.0 * inv
            } else {
                0.0
            }
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn spacing(&self) -> f64 {
        self.delta
    }

    /// Penalty value `lambda / (2 Delta) * w^T D^T D w`.
    pub fn value(&self, w: &[f64]) -> f64 {
        if self.lambda == 0.0 || self.k < 3 {
            return 0.0;
        }
        let wv = nalgebra::DVector::from_column_slice(w);
        let dw = &self.dtd * &wv;
        0.5 * self.lambda / self.delta * wv.dot(&dw)
    }

    /// Penalty gradient `lambda D^T D w / Delta`.
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        if self.lambda == 0.0 || self.k < 3 {
            return vec![0.0; w.len()];
        }
        let wv = nalgebra::DVector::from_column_slice(w);
        let g = &self.dtd * wv * (self.lambda / self.delta);
        g.as_slice().to_vec()
    }
}

/// One plain or preconditioned ULA step against the current prior.
///
/// Plain: `phi' = phi - (eta / L) grad U_g(phi) + sqrt(2 eta / L) xi` with
/// `L = lambda_max(X^T Sigma^{-1} X + tau^{-2} I)` so that `eta` is a
/// dimensionless step. Preconditioned: `phi' = phi - eta Q^{-1} grad U_g(phi)
/// + sqrt(2 eta) Q^{-1/2} xi` with `Q = X^T Sigma^{-1} X + tau^{-2} I`.
///
/// The RNG advances by exactly one standard normal vector per call, also at
/// `eta_phi = 0`.
pub fn ula_step(
    ctx: &ReparamContext,
    prior: &GridPrior,
    state: ChainState,
    eta_phi: f64,
    precond: bool,
) -> Result<ChainState> {
    let ChainState { phi, iter, mut rng } = state;
    let p = phi.len();
    let grad = neg_log_posterior_grad(ctx, prior, &phi).map_err(|e| match e {
        Error::NonFinite { what, max_abs, .. } => Error::NonFinite {
            what,
            iter,
            max_abs,
        },
        other => other,
    })?;
    let xi = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let new_phi = if precond {
        let pc = ctx.precond().ok_or(Error::PreconditionerMissing)?;
        &phi - eta_phi * pc.apply_inv(&grad) + (2.0 * eta_phi).sqrt() * pc.apply_inv_sqrt(&xi)
    } else {
        let step = eta_phi / ctx.lambda_max_drift();
        &phi - step * grad + (2.0 * step).sqrt() * xi
    };
    if new_phi.iter().any(|v| !v.is_finite()) {
        let max_abs = phi.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        return Err(Error::NonFinite {
            what: "chain iterate",
            iter: iter + 1,
            max_abs,
        });
    }
    Ok(ChainState {
        phi: new_phi,
        iter: iter + 1,
        rng,
    })
}

/// EM responsibilities of the atoms for the coordinates of `phi`:
/// `em_k = sum_j w_k N_tau(b_k - phi_j) / sum_i w_i N_tau(b_i - phi_j)`,
/// each term in `[0, 1]` so the accumulation never overflows. Zero-weight
/// atoms get exactly zero.
fn em_responsibilities(prior: &GridPrior, phi: &DVector<f64>, tau: f64) -> Vec<f64> {
    let k = prior.len();
    let grid = prior.support();
    let p = phi.len();
    let inv2 = 0.5 / (tau * tau);
    let mut lw = Vec::with_capacity(k);
    log_weights(prior.weights(), &mut lw);

    let mut em = vec![0.0; k];
    let mut vk = vec![0.0; k];
    for j in 0..p {
        let x = phi[j];
        let mut mx = f64::NEG_INFINITY;
        for (c, &b) in grid.iter().enumerate() {
            let d = x - b;
            vk[c] = -d * d * inv2;
            if lw[c] != f64::NEG_INFINITY {
                let t = lw[c] + vk[c];
                if t > mx {
                    mx = t;
                }
            }
        }
        let mut den = 0.0;
        for c in 0..k {
            if lw[c] == f64::NEG_INFINITY {
                continue;
            }
            den += (lw[c] + vk[c] - mx).exp();
        }
        for c in 0..k {
            if lw[c] == f64::NEG_INFINITY {
                continue;
            }
            em[c] += (lw[c] + vk[c] - mx).exp() / den;
        }
    }
    em
}

/// The centered Fisher-Rao bracket driving the weight update, one entry per
/// atom:
///
/// `(1/p) sum_j N_tau(b_k - phi_j) / sum_i w_i N_tau(b_i - phi_j) - 1`,
///
/// minus the centered spline gradient `lambda (D^T D w / Delta)_k -
/// lambda sum_i w_i (D^T D w / Delta)_i` when a penalty is supplied.
///
/// Entries of zero-weight atoms are reported as 0: they are absorbing under
/// the multiplicative update, and their raw ratio can exceed the float range
/// when the chain sits far from the live atoms.
pub fn fisher_rao_bracket(
    prior: &GridPrior,
    phi: &DVector<f64>,
    tau: f64,
    penalty: Option<&SplinePenalty>,
) -> Vec<f64> {
    let w = prior.weights();
    let p = phi.len();
    let em = em_responsibilities(prior, phi, tau);
    let mut bracket: Vec<f64> = w
        .iter()
        .zip(&em)
        .map(|(&wk, &ek)| {
            if wk > 0.0 {
                ek / (wk * p as f64) - 1.0
            } else {
                0.0
            }
        })
        .collect();
    if let Some(pen) = penalty {
        if pen.lambda() > 0.0 {
            let g = pen.gradient(w);
            let center: f64 = w.iter().zip(&g).map(|(&wi, &gi)| wi * gi).sum();
            for c in 0..w.len() {
                if w[c] > 0.0 {
                    bracket[c] += center - g[c];
                }
            }
        }
    }
    bracket
}

/// Result of one weight update.
#[derive(Debug, Clone)]
pub struct WeightUpdate {
    pub prior: GridPrior,
    /// Atoms clamped at zero by the penalized update (always 0 when
    /// `lambda = 0`).
    pub clamp_events: usize,
    /// `|sum_k w'_k - 1|` before renormalization; at most 1e-12 for the
    /// unpenalized update.
    pub sum_drift: f64,
}

/// One multiplicative prior-weight update against the current coordinates:
/// `w'_k = w_k + eta_w w_k * bracket_k`, followed by clamping of negative
/// entries (possible only with a penalty) and renormalization. Zero weights
/// are absorbing. Requires `0 < eta_w <= 1`.
///
/// The unpenalized update is computed in the convex-combination form
/// `(1 - eta_w) w_k + eta_w em_k / p`, a sum of nonnegative products, so
/// nonnegativity is exact in arithmetic.
pub fn weight_step(
    prior: &GridPrior,
    phi: &DVector<f64>,
    tau: f64,
    eta_w: f64,
    penalty: Option<&SplinePenalty>,
) -> Result<WeightUpdate> {
    if !(eta_w > 0.0 && eta_w <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "weight step must satisfy 0 < eta_w <= 1, got {eta_w}"
        )));
    }
    let w = prior.weights();
    let k = prior.len();
    let p = phi.len() as f64;
    let penalized = penalty.is_some_and(|pen| pen.lambda() > 0.0);
    let em = em_responsibilities(prior, phi, tau);

    let mut out = vec![0.0; k];
    let mut clamp_events = 0usize;
    let mut sum = 0.0;
    if penalized {
        let pen = penalty.unwrap();
        let g = pen.gradient(w);
        let center: f64 = w.iter().zip(&g).map(|(&wi, &gi)| wi * gi).sum();
        for c in 0..k {
            // w + eta [ (em/p - w) - w (g - center) ]; zero weights absorb
            let v = w[c] + eta_w * ((em[c] / p - w[c]) - w[c] * (g[c] - center));
            out[c] = if v < 0.0 {
                clamp_events += 1;
                0.0
            } else {
                v
            };
            sum += out[c];
        }
    } else {
        for c in 0..k {
            out[c] = (1.0 - eta_w) * w[c] + eta_w * (em[c] / p);
            sum += out[c];
        }
    }
    let sum_drift = (sum - 1.0).abs();
    debug_assert!(
        penalized || sum_drift <= 1e-12,
        "unpenalized simplex drift {sum_drift:e}"
    );
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::NonFinite {
            what: "prior weights",
            iter: 0,
            max_abs: phi.iter().fold(0.0f64, |m, &v| m.max(v.abs())),
        });
    }
    for v in &mut out {
        *v /= sum;
    }
    Ok(WeightUpdate {
        prior: prior.with_weights(out)?,
        clamp_events,
        sum_drift,
    })
}

/// Options for a joint fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub schedule: StepSchedule,
    pub penalty: Option<SplinePenalty>,
    /// Total iterations including burn-in.
    pub total_iters: usize,
    pub precond: bool,
    /// Evaluate TV-to-truth and the sequence NLL of the coordinates every
    /// this many iterations (they are diagnostics, not part of the update).
    pub trace_cadence: usize,
}

impl FitOptions {
    pub fn new(schedule: StepSchedule, penalty: Option<SplinePenalty>, total_iters: usize) -> Self {
        FitOptions {
            schedule,
            penalty,
            total_iters,
            precond: false,
            trace_cadence: 10,
        }
    }
}

/// One trace row per iteration; the diagnostic columns are populated at the
/// trace cadence and on the final iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub eta_phi: f64,
    pub eta_w: f64,
    pub tv: Option<f64>,
    pub seq_nll: Option<f64>,
    /// Cumulative count of clamped atoms up to this iteration.
    pub clamp_events: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub prior: GridPrior,
    pub trace: Vec<TraceRecord>,
    /// Chain state after the last iteration; feed it to
    /// [`run_frozen_chain`] for posterior summaries.
    pub state: ChainState,
    pub clamp_events: usize,
}

/// Marginal NLL of the coordinates of `phi` under the prior smoothed by
/// `N_tau`, the per-iteration diagnostic recorded in fit traces.
pub fn coordinate_seq_nll(prior: &GridPrior, phi: &DVector<f64>, tau: f64) -> f64 {
    let mut lw = Vec::with_capacity(prior.len());
    log_weights(prior.weights(), &mut lw);
    let total: f64 = phi
        .iter()
        .map(|&v| log_mixture_density(&lw, prior.support(), tau, v))
        .sum();
    -total / phi.len() as f64
}

/// Runs the joint fit: burn-in with frozen weights, then alternating ULA and
/// weight updates, with the weight update applied to the freshly advanced
/// iterate. The chain starts at `phi = 0`.
pub fn fit_ebflow(
    ctx: &ReparamContext,
    init_prior: &GridPrior,
    opts: &FitOptions,
    rng: ChaCha8Rng,
    truth: Option<&GridPrior>,
) -> Result<FitResult> {
    opts.schedule.validate()?;
    if !init_prior.is_strictly_positive() {
        return Err(Error::InvalidArgument(
            "initial prior must be strictly positive on every atom".into(),
        ));
    }
    if opts.precond && ctx.precond().is_none() {
        return Err(Error::PreconditionerMissing);
    }
    if let Some(t) = truth {
        if !t.same_support(init_prior) {
            return Err(Error::GridMismatch);
        }
    }
    let tau = ctx.tau();
    let cadence = opts.trace_cadence.max(1);
    let mut prior = init_prior.clone();
    let mut state = ChainState::new(ctx.dim(), rng);
    let mut trace = Vec::with_capacity(opts.total_iters);
    let mut clamp_events = 0usize;

    for t in 1..=opts.total_iters {
        let eta_phi = opts.schedule.eta_phi(t);
        let eta_w = opts.schedule.eta_w(t);
        state = ula_step(ctx, &prior, state, eta_phi, opts.precond)?;
        if eta_w > 0.0 {
            let update = weight_step(&prior, &state.phi, tau, eta_w, opts.penalty.as_ref())?;
            prior = update.prior;
            clamp_events += update.clamp_events;
        }
        let diag = t % cadence == 0 || t == opts.total_iters;
        trace.push(TraceRecord {
            iter: t,
            eta_phi,
            eta_w,
            tv: match (diag, truth) {
                (true, Some(tr)) => Some(crate::inference::tv_distance(&prior, tr)?),
                _ => None,
            },
            seq_nll: diag.then(|| coordinate_seq_nll(&prior, &state.phi, tau)),
            clamp_events,
        });
    }

    Ok(FitResult {
        prior,
        trace,
        state,
        clamp_events,
    })
}

/// Advances the chain `iters` more steps with frozen weights, invoking the
/// visitor on every new iterate. Used for post-fit posterior sampling.
pub fn run_frozen_chain<F>(
    ctx: &ReparamContext,
    prior: &GridPrior,
    mut state: ChainState,
    eta_phi: f64,
    iters: usize,
    precond: bool,
    mut visit: F,
) -> Result<ChainState>
where
    F: FnMut(&ChainState),
{
    for _ in 0..iters {
        state = ula_step(ctx, prior, state, eta_phi, precond)?;
        visit(&state);
    }
    Ok(state)
}

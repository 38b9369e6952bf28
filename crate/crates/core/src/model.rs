//! Core domain types: discrete priors on a grid, linear-model instances, and
//! the smoothed reparametrization context shared by every sampler.
//!
//! The reparametrization trades the original coefficients `theta` for
//! `phi = theta + z` with `z ~ N(0, tau^2 I)`, which turns the marginal
//! likelihood into that of a linear model with i.i.d. smoothed prior
//! `N_tau * g` on `phi` and correlated residual covariance
//! `Sigma = sigma^2 I - tau^2 X X^T`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{lambda_max_sym, lambda_max_xxt};
use crate::math::{log_mixture_density, log_weights, mixture_posterior_mean};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const SPACING_REL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-8;

/// A discrete prior `sum_k w_k delta_{b_k}` on an equally spaced grid of
/// `K >= 2` support points.
///
/// Invariants enforced on construction and preserved by every update:
/// weights are nonnegative and sum to one (drift at most 1e-12 before
/// renormalization), and the support is strictly increasing with constant
/// spacing to within 1e-12 relative.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPrior {
    support: Vec<f64>,
    weights: Vec<f64>,
}

impl GridPrior {
    /// Builds a prior from weights already on the simplex (sum within 1e-12
    /// of one). The stored weights are renormalized to sum exactly one.
    pub fn new(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let sum = check_weights(&support, &weights)?;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOL}"
            )));
        }
        Ok(Self::renormalized(support, weights, sum))
    }

    /// Builds a prior from arbitrary nonnegative weights, normalizing them.
    pub fn from_unnormalized(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let sum = check_weights(&support, &weights)?;
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "weights must have positive finite total mass, got {sum}"
            )));
        }
        Ok(Self::renormalized(support, weights, sum))
    }

    /// Uniform prior on the given grid.
    pub fn uniform(support: Vec<f64>) -> Result<Self> {
        let k = support.len();
        Self::new(support, vec![1.0 / k as f64; k])
    }

    fn renormalized(support: Vec<f64>, mut weights: Vec<f64>, sum: f64) -> Self {
        for w in &mut weights {
            *w /= sum;
        }
        GridPrior { support, weights }
    }

    /// Equally spaced grid of `k` points spanning exactly `[-m, m]`.
    pub fn equispaced_grid(m: f64, k: usize) -> Vec<f64> {
        assert!(k >= 2 && m > 0.0);
        let delta = 2.0 * m / (k - 1) as f64;
        (0..k)
            .map(|i| {
                if i == 0 {
                    -m
                } else if i == k - 1 {
                    m
                } else {
                    -m + i as f64 * delta
                }
            })
            .collect()
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of atoms K.
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing Delta.
    pub fn spacing(&self) -> f64 {
        (self.support[self.len() - 1] - self.support[0]) / (self.len() - 1) as f64
    }

    /// Support half-width `M = max(|b_1|, |b_K|)`.
    pub fn bound(&self) -> f64 {
        self.support[0]
            .abs()
            .max(self.support[self.len() - 1].abs())
    }

    /// Same support, new weights; validates the simplex invariants.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        GridPrior::from_unnormalized(self.support.clone(), weights)
    }

    /// Exact equality of supports, the precondition for comparing weights.
    pub fn same_support(&self, other: &GridPrior) -> bool {
        self.support == other.support
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }
}

fn check_weights(support: &[f64], weights: &[f64]) -> Result<f64> {
    let k = support.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid must have at least 2 support points, got {k}"
        )));
    }
    if weights.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {k} support points",
            weights.len()
        )));
    }
    if support.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("non-finite support point".into()));
    }
    let delta = (support[k - 1] - support[0]) / (k - 1) as f64;
    if delta <= 0.0 {
        return Err(Error::InvalidArgument(
            "support must be strictly increasing".into(),
        ));
    }
    for i in 0..k - 1 {
        let d = support[i + 1] - support[i];
        if d <= 0.0 || (d - delta).abs() > SPACING_REL_TOL * delta {
            return Err(Error::InvalidArgument(format!(
                "support spacing is not constant: step {i} is {d}, expected {delta}"
            )));
        }
    }
    let mut sum = 0.0;
    for &w in weights {
        if !(w >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative weight {w}")));
        }
        sum += w;
    }
    Ok(sum)
}

/// A linear-model instance `y = X theta + eps`, `eps ~ N(0, sigma^2 I)`,
/// with the ground-truth coefficients kept when the instance is simulated.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma_sq: f64,
    pub theta_star: Option<DVector<f64>>,
}

impl LinearModel {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        sigma_sq: f64,
        theta_star: Option<DVector<f64>>,
    ) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "y has {} entries for {} rows of X",
                y.len(),
                x.nrows()
            )));
        }
        if let Some(t) = &theta_star {
            if t.len() != x.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "theta_star has {} entries for {} columns of X",
                    t.len(),
                    x.ncols()
                )));
            }
        }
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma_sq must be positive, got {sigma_sq}"
            )));
        }
        Ok(LinearModel {
            x,
            y,
            sigma_sq,
            theta_star,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// How to choose the reparametrization variance `tau^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauRule {
    /// `tau^2 = 0.5 sigma^2 / lambda_max(X X^T)`, half the feasibility bound.
    Auto,
    Explicit(f64),
}

/// Symmetric eigendecomposition of the drift curvature proxy
/// `Q = X^T Sigma^{-1} X + tau^{-2} I`, exposing `Q^{-1}` and `Q^{-1/2}`
/// actions for the preconditioned sampler.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    vecs: DMatrix<f64>,
    inv_evals: DVector<f64>,
    inv_sqrt_evals: DVector<f64>,
}

impl Preconditioner {
    fn from_q(q: DMatrix<f64>) -> Result<Self> {
        let eig = q.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::FactorizationFailed(
                "drift curvature matrix Q has a nonpositive eigenvalue".into(),
            ));
        }
        let inv_evals = eig.eigenvalues.map(|l| 1.0 / l);
        let inv_sqrt_evals = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
        Ok(Preconditioner {
            vecs: eig.eigenvectors,
            inv_evals,
            inv_sqrt_evals,
        })
    }

    pub fn apply_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut w = self.vecs.transpose() * v;
        w.component_mul_assign(&self.inv_evals);
        &self.vecs * w
    }

    pub fn apply_inv_sqrt(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut w = self.vecs.transpose() * v;
        w.component_mul_assign(&self.inv_sqrt_evals);
        &self.vecs * w
    }
}

/// Precomputed reparametrization quantities shared by every drift
/// evaluation of a fit: the factorization of `Sigma = sigma^2 I - tau^2 X X^T`,
/// the cached `A = X^T Sigma^{-1} X` and `b = X^T Sigma^{-1} y`, and the two
/// extreme eigenvalues that calibrate step sizes.
///
/// Immutable after construction; fits running on different threads share one
/// context by reference.
#[derive(Debug, Clone)]
pub struct ReparamContext {
    tau_sq: f64,
    sigma_chol: Cholesky<f64, Dyn>,
    a: DMatrix<f64>,
    b_vec: DVector<f64>,
    lambda_max_xxt: f64,
    lambda_max_drift: f64,
    precond: Option<Preconditioner>,
}

/// Builds the reparametrization context for a model, factoring `Sigma` once
/// and caching the `p x p` drift matrix. The automatic rule picks `tau^2`
/// exactly half of the feasibility bound `sigma^2 / lambda_max(X X^T)`.
pub fn build_reparam(model: &LinearModel, tau_rule: TauRule) -> Result<ReparamContext> {
    let n = model.n();
    let lam_xxt = lambda_max_xxt(&model.x);
    let feasible = model.sigma_sq / lam_xxt;
    let tau_sq = match tau_rule {
        TauRule::Auto => 0.5 * feasible,
        TauRule::Explicit(t) => {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "explicit tau_sq must be positive, got {t}"
                )));
            }
            t
        }
    };

    let mut sigma = &model.x * model.x.transpose();
    sigma *= -tau_sq;
    for i in 0..n {
        sigma[(i, i)] += model.sigma_sq;
    }
    let sigma_chol = Cholesky::new(sigma).ok_or(Error::NonPositiveSigma)?;

    // A = X^T Sigma^{-1} X, symmetrized; b = X^T Sigma^{-1} y
    let z = sigma_chol.solve(&model.x);
    let a_raw = model.x.transpose() * z;
    let mut asym: f64 = 0.0;
    for i in 0..a_raw.nrows() {
        for j in (i + 1)..a_raw.ncols() {
            asym = asym.max((a_raw[(i, j)] - a_raw[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::FactorizationFailed(format!(
            "X^T Sigma^{{-1}} X asymmetry {asym:e} exceeds {SYMMETRY_TOL:e}"
        )));
    }
    let a = 0.5 * (&a_raw + a_raw.transpose());
    let b_vec = model.x.transpose() * sigma_chol.solve(&model.y);

    // lambda_max(A + tau^{-2} I) = lambda_max(A) + tau^{-2} exactly
    let lambda_max_drift = lambda_max_sym(&a) + 1.0 / tau_sq;

    Ok(ReparamContext {
        tau_sq,
        sigma_chol,
        a,
        b_vec,
        lambda_max_xxt: lam_xxt,
        lambda_max_drift,
        precond: None,
    })
}

impl ReparamContext {
    /// Attaches the preconditioner `Q = A + tau^{-2} I` via one symmetric
    /// eigendecomposition, done once per fit setup.
    pub fn with_preconditioner(mut self) -> Result<Self> {
        let p = self.dim();
        let mut q = self.a.clone();
        let inv_tau_sq = 1.0 / self.tau_sq;
        for i in 0..p {
            q[(i, i)] += inv_tau_sq;
        }
        self.precond = Some(Preconditioner::from_q(q)?);
        Ok(self)
    }

    pub fn tau_sq(&self) -> f64 {
        self.tau_sq
    }

    pub fn tau(&self) -> f64 {
        self.tau_sq.sqrt()
    }

    /// Dimension p of the coefficient vector.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_vec(&self) -> &DVector<f64> {
        &self.b_vec
    }

    pub fn lambda_max_xxt(&self) -> f64 {
        self.lambda_max_xxt
    }

    /// `lambda_max(X^T Sigma^{-1} X + tau^{-2} I)`, the step-size scale of
    /// the plain sampler.
    pub fn lambda_max_drift(&self) -> f64 {
        self.lambda_max_drift
    }

    pub fn precond(&self) -> Option<&Preconditioner> {
        self.precond.as_ref()
    }

    /// Applies `Sigma^{-1}` through the cached factorization.
    pub fn solve_sigma(&self, v: &DVector<f64>) -> DVector<f64> {
        self.sigma_chol.solve(v)
    }
}

/// Current state of one Langevin chain: the iterate, its iteration counter,
/// and the chain's own deterministic random state. Single-owner: a chain is
/// advanced by exactly one thread.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub phi: DVector<f64>,
    pub iter: usize,
    pub rng: ChaCha8Rng,
}

impl ChainState {
    /// Fresh chain started at `phi = 0`.
    pub fn new(p: usize, rng: ChaCha8Rng) -> Self {
        ChainState {
            phi: DVector::zeros(p),
            iter: 0,
            rng,
        }
    }

    pub fn with_phi(phi: DVector<f64>, rng: ChaCha8Rng) -> Self {
        ChainState { phi, iter: 0, rng }
    }
}

/// Gradient of the negative log posterior density of `phi`,
///
/// `grad U_g(phi) = A phi - b + tau^{-2} (phi_j - E[theta_j | phi_j])_j`,
///
/// where the per-coordinate posterior mean is the Tweedie shrinkage of
/// `phi_j` under the prior `(grid, w)` and noise scale `tau`, evaluated in
/// log-space. Mixture atoms with zero weight are skipped.
pub fn neg_log_posterior_grad(
    ctx: &ReparamContext,
    prior: &GridPrior,
    phi: &DVector<f64>,
) -> Result<DVector<f64>> {
    debug_assert_eq!(phi.len(), ctx.dim());
    let tau = ctx.tau();
    let inv_tau_sq = 1.0 / ctx.tau_sq;
    let mut lw = Vec::new();
    log_weights(prior.weights(), &mut lw);

    let mut grad = &ctx.a * phi;
    grad -= &ctx.b_vec;
    for j in 0..phi.len() {
        let pm = mixture_posterior_mean(&lw, prior.support(), tau, phi[j]);
        grad[j] += (phi[j] - pm) * inv_tau_sq;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        let max_abs = phi.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        return Err(Error::NonFinite {
            what: "posterior gradient",
            iter: 0,
            max_abs,
        });
    }
    Ok(grad)
}

/// Value of the potential `U_g(phi) = 1/2 (y - X phi)^T Sigma^{-1} (y - X phi)
/// - sum_j log [N_tau * g](phi_j)`. Diagnostic counterpart of
/// [`neg_log_posterior_grad`].
pub fn neg_log_posterior(
    ctx: &ReparamContext,
    model: &LinearModel,
    prior: &GridPrior,
    phi: &DVector<f64>,
) -> f64 {
    let resid = &model.y - &model.x * phi;
    let quad = 0.5 * resid.dot(&ctx.solve_sigma(&resid));
    let tau = ctx.tau();
    let mut lw = Vec::new();
    log_weights(prior.weights(), &mut lw);
    let log_prior: f64 = phi
        .iter()
        .map(|&v| log_mixture_density(&lw, prior.support(), tau, v))
        .sum();
    quad - log_prior
}

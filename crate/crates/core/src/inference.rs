//! Posterior summaries and evaluation metrics: streaming posterior-mean
//! estimation from chain iterates, prediction error, and distances between
//! grid priors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{kl_weights, log_weights, mixture_posterior_mean};
use crate::model::{GridPrior, LinearModel};
use crate::seqnpmle::{seq_nll, SeqObjective};

/// Posterior-mean estimate of the regression coefficients.
#[derive(Debug, Clone)]
pub struct PosteriorMeanEstimate {
    pub theta_hat: DVector<f64>,
    pub n_samples: usize,
}

/// Streaming accumulator for the posterior mean: applies the per-coordinate
/// shrinkage map
/// `sum_k b_k w_k N_tau(b_k - phi_j) / sum_k w_k N_tau(b_k - phi_j)`
/// to every iterate and averages, never storing the iterates themselves.
#[derive(Debug, Clone)]
pub struct PosteriorMeanAccum {
    log_w: Vec<f64>,
    grid: Vec<f64>,
    tau: f64,
    sums: DVector<f64>,
    n: usize,
}

impl PosteriorMeanAccum {
    pub fn new(prior: &GridPrior, tau: f64, p: usize) -> Self {
        let mut log_w = Vec::new();
        log_weights(prior.weights(), &mut log_w);
        PosteriorMeanAccum {
            log_w,
            grid: prior.support().to_vec(),
            tau,
            sums: DVector::zeros(p),
            n: 0,
        }
    }

    pub fn push(&mut self, phi: &DVector<f64>) {
        debug_assert_eq!(phi.len(), self.sums.len());
        for j in 0..phi.len() {
            self.sums[j] += mixture_posterior_mean(&self.log_w, &self.grid, self.tau, phi[j]);
        }
        self.n += 1;
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn finish(self) -> Result<PosteriorMeanEstimate> {
        if self.n == 0 {
            return Err(Error::EmptyStream);
        }
        Ok(PosteriorMeanEstimate {
            theta_hat: self.sums / self.n as f64,
            n_samples: self.n,
        })
    }
}

/// Posterior mean from an in-memory collection of iterates. Order-invariant.
pub fn posterior_mean<'a, I>(
    prior: &GridPrior,
    tau: f64,
    iterates: I,
) -> Result<PosteriorMeanEstimate>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let mut iter = iterates.into_iter().peekable();
    let p = match iter.peek() {
        Some(v) => v.len(),
        None => return Err(Error::EmptyStream),
    };
    let mut accum = PosteriorMeanAccum::new(prior, tau, p);
    for phi in iter {
        accum.push(phi);
    }
    accum.finish()
}

/// The scalar shrinkage map itself, exposed for direct checks.
pub fn shrinkage(prior: &GridPrior, tau: f64, x: f64) -> f64 {
    let mut log_w = Vec::new();
    log_weights(prior.weights(), &mut log_w);
    mixture_posterior_mean(&log_w, prior.support(), tau, x)
}

/// Relative mean-squared prediction error
/// `||X_new (theta_star - theta_hat)||^2 / ||X_new theta_star||^2`.
pub fn prediction_mse(
    theta_hat: &DVector<f64>,
    theta_star: &DVector<f64>,
    x_new: &DMatrix<f64>,
) -> Result<f64> {
    if theta_hat.len() != theta_star.len() || x_new.ncols() != theta_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "x_new is {}x{}, theta_hat has {}, theta_star has {}",
            x_new.nrows(),
            x_new.ncols(),
            theta_hat.len(),
            theta_star.len()
        )));
    }
    let denom = (x_new * theta_star).norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok((x_new * (theta_star - theta_hat)).norm_squared() / denom)
}

/// Total-variation distance `1/2 sum_k |w_a,k - w_b,k|` between two priors
/// on the same grid.
pub fn tv_distance(a: &GridPrior, b: &GridPrior) -> Result<f64> {
    if !a.same_support(b) {
        return Err(Error::GridMismatch);
    }
    Ok(0.5
        * a.weights()
            .iter()
            .zip(b.weights())
            .map(|(&x, &y)| (x - y).abs())
            .sum::<f64>())
}

/// Wasserstein-1 distance on the shared grid: the CDF-difference sum
/// `Delta * sum_k |CDF_a(k) - CDF_b(k)|`.
pub fn grid_w1(a: &GridPrior, b: &GridPrior) -> Result<f64> {
    if !a.same_support(b) {
        return Err(Error::GridMismatch);
    }
    let delta = a.spacing();
    let mut cdf_gap = 0.0;
    let mut acc = 0.0;
    for k in 0..a.len() - 1 {
        acc += a.weights()[k] - b.weights()[k];
        cdf_gap += acc.abs();
    }
    Ok(delta * cdf_gap)
}

/// `D_KL(a || b)` over the shared grid; `+inf` when `a` has mass on an atom
/// where `b` has none.
pub fn kl(a: &GridPrior, b: &GridPrior) -> Result<f64> {
    if !a.same_support(b) {
        return Err(Error::GridMismatch);
    }
    Ok(kl_weights(a.weights(), b.weights()))
}

/// Marginal NLL of the data under the prior for the identity design, where
/// the model is exactly a sequence model with noise scale `sigma`:
/// the mixture NLL with observations `y` and `tau = sigma`.
pub fn identity_marginal_nll(model: &LinearModel, prior: &GridPrior) -> Result<f64> {
    let (n, p) = model.x.shape();
    if n != p || model.x != DMatrix::identity(n, p) {
        return Err(Error::InvalidArgument(
            "marginal NLL is only evaluated for the identity design".into(),
        ));
    }
    let obj = SeqObjective::new(
        model.y.as_slice().to_vec(),
        model.sigma_sq.sqrt(),
        prior.support().to_vec(),
    )?;
    Ok(seq_nll(&obj, prior.weights()))
}

/// Streaming mean lag-1 autocorrelation across coordinates of a chain, a
/// mixing diagnostic for posterior-sampling passes.
#[derive(Debug, Clone)]
pub struct AutocorrAccum {
    prev: Option<DVector<f64>>,
    sum: DVector<f64>,
    sum_sq: DVector<f64>,
    cross: DVector<f64>,
    n: usize,
}

impl AutocorrAccum {
    pub fn new(p: usize) -> Self {
        AutocorrAccum {
            prev: None,
            sum: DVector::zeros(p),
            sum_sq: DVector::zeros(p),
            cross: DVector::zeros(p),
            n: 0,
        }
    }

    pub fn push(&mut self, phi: &DVector<f64>) {
        if let Some(prev) = &self.prev {
            for j in 0..phi.len() {
                self.cross[j] += prev[j] * phi[j];
            }
        }
        for j in 0..phi.len() {
            self.sum[j] += phi[j];
            self.sum_sq[j] += phi[j] * phi[j];
        }
        self.n += 1;
        self.prev = Some(phi.clone());
    }

    /// Mean over coordinates of the lag-1 autocorrelation; `None` with fewer
    /// than three samples or all-degenerate coordinates.
    pub fn mean_lag1(&self) -> Option<f64> {
        if self.n < 3 {
            return None;
        }
        let n = self.n as f64;
        let p = self.sum.len();
        let mut total = 0.0;
        let mut used = 0usize;
        for j in 0..p {
            let mean = self.sum[j] / n;
            let var = self.sum_sq[j] / n - mean * mean;
            if var <= 0.0 {
                continue;
            }
            let cov = self.cross[j] / (n - 1.0) - mean * mean;
            total += cov / var;
            used += 1;
        }
        (used > 0).then(|| total / used as f64)
    }
}

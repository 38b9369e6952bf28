//! Brute-force reference implementations used to validate the fast paths.
//!
//! These deliberately avoid the log-space machinery of the production code:
//! densities are summed directly so that any agreement between the two
//! routes is evidence, not circularity.

use crate::math::LN_2PI;

/// Direct double-loop negative mean log-likelihood of a grid mixture, no
/// max-subtraction or kernel caching.
pub fn naive_seq_nll(obs: &[f64], tau: f64, grid: &[f64], w: &[f64]) -> f64 {
    assert_eq!(grid.len(), w.len());
    let norm = 1.0 / (tau * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = 0.0;
    for &yi in obs {
        let mut den = 0.0;
        for (&b, &wk) in grid.iter().zip(w) {
            let d = yi - b;
            den += wk * norm * (-0.5 * d * d / (tau * tau)).exp();
        }
        acc += den.ln();
    }
    -acc / obs.len() as f64
}

/// Direct evaluation of the smoothing penalty `(lambda Delta / 2) sum_k
/// [D (w / Delta)]_k^2` with `D` the second-difference quadrature matrix,
/// built on the fly.
pub fn naive_spline_penalty(lambda: f64, delta: f64, w: &[f64]) -> f64 {
    let k = w.len();
    if k < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..k - 2 {
        let second = (w[i] - 2.0 * w[i + 1] + w[i + 2]) / (delta * delta);
        acc += (second / delta) * (second / delta);
    }
    0.5 * lambda * delta * acc
}

/// Exhaustive scan of the probability simplex at the given resolution
/// (weights on the lattice `{0, r, 2r, ...}` summing to one), returning the
/// minimizing weight vector and its objective. Restricted to `k <= 4`
/// dimensions; the lattice explodes beyond that.
pub fn simplex_scan<F>(k: usize, resolution: f64, mut objective: F) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    assert!((2..=4).contains(&k), "simplex scan supports 2 <= k <= 4");
    let steps = (1.0 / resolution).round() as usize;
    let mut best_w = vec![0.0; k];
    let mut best = f64::INFINITY;
    let mut w = vec![0.0; k];
    scan_rec(k, steps, steps, 0, &mut w, &mut |w| {
        let v = objective(w);
        if v < best {
            best = v;
            best_w.copy_from_slice(w);
        }
    });
    (best_w, best)
}

fn scan_rec(
    k: usize,
    steps: usize,
    remaining: usize,
    dim: usize,
    w: &mut [f64],
    visit: &mut impl FnMut(&[f64]),
) {
    if dim == k - 1 {
        w[dim] = remaining as f64 / steps as f64;
        visit(w);
        return;
    }
    for take in 0..=remaining {
        w[dim] = take as f64 / steps as f64;
        scan_rec(k, steps, remaining - take, dim + 1, w, visit);
    }
}

/// Unnormalized log density used by tests to enumerate exact posteriors of
/// small discrete linear models: `-||y - X theta||^2 / (2 sigma^2) +
/// sum_j ln w(theta_j)`.
pub fn discrete_posterior_log_weight(
    x: &nalgebra::DMatrix<f64>,
    y: &nalgebra::DVector<f64>,
    sigma_sq: f64,
    prior_w: &[f64],
    grid: &[f64],
    atom_idx: &[usize],
) -> f64 {
    let theta = nalgebra::DVector::from_fn(atom_idx.len(), |j, _| grid[atom_idx[j]]);
    let resid = y - x * &theta;
    let mut lp = -0.5 * resid.norm_squared() / sigma_sq;
    for &k in atom_idx {
        lp += if prior_w[k] > 0.0 {
            prior_w[k].ln()
        } else {
            f64::NEG_INFINITY
        };
    }
    lp
}

/// Log density of `N(mean, sd^2)` at `x`, for test-side oracles.
pub fn naive_log_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_enumerates_the_whole_lattice() {
        let mut count = 0usize;
        simplex_scan(3, 0.1, |w| {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            count += 1;
            0.0
        });
        // compositions of 10 into 3 parts: C(12, 2) = 66
        assert_eq!(count, 66);
    }

    #[test]
    fn scan_finds_a_known_minimum() {
        let target = [0.25, 0.5, 0.25];
        let (w, v) = simplex_scan(3, 0.005, |w| {
            w.iter()
                .zip(&target)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum()
        });
        assert!(v < 1e-12);
        for i in 0..3 {
            assert!((w[i] - target[i]).abs() < 1e-9);
        }
    }
}

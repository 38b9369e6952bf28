//! Log-space numerics for Gaussian mixtures over a fixed grid of atoms.
//!
//! All mixture densities in this crate are evaluated with max-subtraction so
//! that small noise scales do not underflow.

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log density of `N(0, s^2)` at `x`.
#[inline]
pub fn log_normal_pdf(x: f64, s: f64) -> f64 {
    let z = x / s;
    -0.5 * z * z - s.ln() - 0.5 * LN_2PI
}

/// Log-sum-exp over a slice; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = vals.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Fills `out` with `ln w_k`, writing `-inf` for zero weights so that they
/// drop out of every mixture sum.
pub fn log_weights(w: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        w.iter()
            .map(|&wk| if wk > 0.0 { wk.ln() } else { f64::NEG_INFINITY }),
    );
}

/// `log sum_k w_k N_tau(x - b_k)` given precomputed log weights.
pub fn log_mixture_density(log_w: &[f64], grid: &[f64], tau: f64, x: f64) -> f64 {
    let inv2 = 0.5 / (tau * tau);
    let mut m = f64::NEG_INFINITY;
    for (&lw, &b) in log_w.iter().zip(grid) {
        if lw == f64::NEG_INFINITY {
            continue;
        }
        let d = x - b;
        let t = lw - d * d * inv2;
        if t > m {
            m = t;
        }
    }
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut s = 0.0;
    for (&lw, &b) in log_w.iter().zip(grid) {
        if lw == f64::NEG_INFINITY {
            continue;
        }
        let d = x - b;
        s += (lw - d * d * inv2 - m).exp();
    }
    m + s.ln() - tau.ln() - 0.5 * LN_2PI
}

/// Posterior mean `E[b | x]` of an atom under prior weights `w` on `grid`
/// observed through `N(0, tau^2)` noise, i.e. the shrinkage map
/// `sum_k b_k w_k N_tau(x - b_k) / sum_k w_k N_tau(x - b_k)`.
///
/// The output always lies in `[min(grid), max(grid)]`.
pub fn mixture_posterior_mean(log_w: &[f64], grid: &[f64], tau: f64, x: f64) -> f64 {
    let inv2 = 0.5 / (tau * tau);
    let mut m = f64::NEG_INFINITY;
    for (&lw, &b) in log_w.iter().zip(grid) {
        if lw == f64::NEG_INFINITY {
            continue;
        }
        let d = x - b;
        let t = lw - d * d * inv2;
        if t > m {
            m = t;
        }
    }
    let mut den = 0.0;
    let mut num = 0.0;
    for (&lw, &b) in log_w.iter().zip(grid) {
        if lw == f64::NEG_INFINITY {
            continue;
        }
        let d = x - b;
        let e = (lw - d * d * inv2 - m).exp();
        den += e;
        num += b * e;
    }
    num / den
}

/// `sum_k a_k ln(a_k / b_k)` with the convention `0 ln 0 = 0`; `+inf` when
/// `a` puts mass where `b` has none.
pub fn kl_weights(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (&ak, &bk) in a.iter().zip(b) {
        if ak == 0.0 {
            continue;
        }
        if bk == 0.0 {
            return f64::INFINITY;
        }
        acc += ak * (ak / bk).ln();
    }
    acc
}

/// Unbiased sample variance (denominator `n - 1`).
pub fn sample_variance(vals: &[f64]) -> f64 {
    let n = vals.len();
    if n < 2 {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

/// Formats a float with 17 significant digits ('.' decimal separator), enough
/// to round-trip any f64 exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

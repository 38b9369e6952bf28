//! Multiplicative (Fisher-Rao) descent over the probability simplex, the
//! in-house engine behind every convex M-step in this crate.
//!
//! For an objective `f(w)` the centered update is
//! `w'_k = w_k - eta * w_k * (grad_k - sum_i w_i grad_i)`, which preserves
//! the simplex for small enough `eta` and reduces to one EM step at
//! `eta = 1` for mixture likelihoods. Objectives report `w ∘ grad f(w)`
//! rather than the raw gradient so that entropy-like terms stay finite at
//! zero weights.

/// Objective value together with the Hadamard product `w ∘ grad f(w)`.
pub(crate) type EvalFn<'a> = dyn Fn(&[f64]) -> (f64, Vec<f64>) + 'a;

pub(crate) struct DescentOutcome {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub clamp_events: usize,
}

/// Runs backtracking multiplicative descent from `w0` (assumed strictly
/// positive after normalization). Convergence is declared once the relative
/// objective decrease over `window` accepted steps falls below `tol`.
pub(crate) fn simplex_descent(
    w0: &[f64],
    eval: &EvalFn,
    tol: f64,
    max_iter: usize,
    window: usize,
) -> DescentOutcome {
    let k = w0.len();
    let total: f64 = w0.iter().sum();
    let mut w: Vec<f64> = w0.iter().map(|&v| v / total).collect();
    let (mut f, mut wg) = eval(&w);
    let mut eta = 1.0;
    let mut clamp_events = 0usize;
    let mut history: Vec<f64> = vec![f];
    let mut converged = false;
    let mut iterations = 0usize;

    while iterations < max_iter {
        iterations += 1;
        let s: f64 = wg.iter().sum();
        let mut proposal = vec![0.0; k];
        let mut mass = 0.0;
        let mut clamped_here = 0usize;
        for i in 0..k {
            let v = w[i] - eta * (wg[i] - s * w[i]);
            let v = if v < 0.0 {
                clamped_here += 1;
                0.0
            } else {
                v
            };
            proposal[i] = v;
            mass += v;
        }
        if !(mass > 0.0 && mass.is_finite()) {
            eta *= 0.5;
            if eta < 1e-12 {
                break;
            }
            continue;
        }
        for v in &mut proposal {
            *v /= mass;
        }
        let (f_new, wg_new) = eval(&proposal);
        // accept only descent; otherwise halve the step and retry
        if f_new.is_finite() && f_new <= f + 1e-15 * f.abs().max(1.0) {
            w = proposal;
            f = f_new;
            wg = wg_new;
            clamp_events += clamped_here;
            history.push(f);
            if history.len() > window {
                let before = history[history.len() - 1 - window];
                if before - f < tol * f.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
        } else {
            eta *= 0.5;
            if eta < 1e-12 {
                break;
            }
        }
    }

    DescentOutcome {
        weights: w,
        objective: f,
        iterations,
        converged,
        clamp_events,
    }
}

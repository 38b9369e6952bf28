//! Identity-design checks: with `X = I` the linear model is exactly a
//! sequence model, so the joint sampler's weights must approach the
//! sequence-model NPMLE of the raw observations, and Gibbs-within-EM must
//! recover the truth on a moderate instance.

use ebflow_core::baselines::{fit_gibbs_mcem, McemOptions};
use ebflow_core::datagen::{
    make_design, make_prior, simulate, DesignKind, DesignSpec, PriorKind, PriorSpec,
};
use ebflow_core::ebflow::{fit_ebflow, FitOptions, SplinePenalty, StepSchedule};
use ebflow_core::inference::{identity_marginal_nll, tv_distance};
use ebflow_core::model::{build_reparam, GridPrior, TauRule};
use ebflow_core::rng::{stream_rng, STREAM_DESIGN, STREAM_FIT, STREAM_SIGNAL};
use ebflow_core::seqnpmle::{solve_seq_npmle, SeqObjective};

fn identity_instance(n: usize, seed: u64) -> (ebflow_core::LinearModel, GridPrior) {
    let prior_spec = PriorSpec {
        kind: PriorKind::Gaussian,
        m: 3.0,
        k: 61,
    };
    let truth = make_prior(&prior_spec).unwrap();
    let spec = DesignSpec {
        kind: DesignKind::Identity,
        n,
        p: n,
    };
    let mut drng = stream_rng(seed, STREAM_DESIGN);
    let x = make_design(&spec, &mut drng).unwrap();
    let mut srng = stream_rng(seed, STREAM_SIGNAL);
    let model = simulate(&truth, x, 0.5, &mut srng).unwrap();
    (model, truth)
}

#[test]
fn ebflow_identity_matches_sequence_npmle() {
    let (model, truth) = identity_instance(200, 31);
    let ctx = build_reparam(&model, TauRule::Auto).unwrap();
    let init = GridPrior::uniform(truth.support().to_vec()).unwrap();
    let schedule = StepSchedule::log_linear(1.0, 0.1, 2_000, 0.01, 200).unwrap();
    let opts = FitOptions::new(schedule, None, 2_200);
    let fit = fit_ebflow(&ctx, &init, &opts, stream_rng(31, STREAM_FIT), Some(&truth)).unwrap();

    // the z-scores of the identity design are the observations themselves
    let obj = SeqObjective::new(
        model.y.as_slice().to_vec(),
        model.sigma_sq.sqrt(),
        truth.support().to_vec(),
    )
    .unwrap();
    let optimum = solve_seq_npmle(&obj, None, 1e-12, 100_000).unwrap();
    assert!(optimum.converged);

    let fit_nll = identity_marginal_nll(&model, &fit.prior).unwrap();
    assert!(
        fit_nll <= optimum.nll + 0.02,
        "sampler NLL {fit_nll} vs NPMLE optimum {}",
        optimum.nll
    );
    // nothing beats the optimum (up to solver slack)
    assert!(fit_nll >= optimum.nll - 1e-6);
}

#[test]
fn gibbs_mcem_identity_recovers_truth() {
    let (model, truth) = identity_instance(200, 77);
    let init = GridPrior::uniform(truth.support().to_vec()).unwrap();
    let penalty = SplinePenalty::new(0.003, truth.support()).unwrap();
    let opts = McemOptions {
        burn_in: 200,
        ..McemOptions::new(100, 2_000, Some(penalty))
    };
    let fit = fit_gibbs_mcem(
        &model,
        &init,
        &opts,
        stream_rng(77, STREAM_FIT),
        Some(&truth),
    )
    .unwrap();
    let tv = tv_distance(&fit.prior, &truth).unwrap();
    assert!(tv <= 0.15, "Gibbs-MCEM TV {tv} exceeds 0.15");
}

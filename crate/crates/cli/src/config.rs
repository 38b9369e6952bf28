//! Experiment configuration: one JSON file per experiment, schema-validated
//! with unknown keys rejected. CLI flags override the file's seed and output
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ebflow_core::datagen::{DesignKind, DesignSpec, PriorKind, PriorSpec};
use ebflow_core::ebflow::ScheduleKind;

#[derive(Debug, thiserror::Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ebflow")]
    Ebflow,
    #[serde(rename = "ebflow-precond")]
    EbflowPrecond,
    #[serde(rename = "langevin-mcem")]
    LangevinMcem,
    #[serde(rename = "gibbs-mcem")]
    GibbsMcem,
    #[serde(rename = "cavi")]
    Cavi,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Ebflow => "ebflow",
            Algorithm::EbflowPrecond => "ebflow-precond",
            Algorithm::LangevinMcem => "langevin-mcem",
            Algorithm::GibbsMcem => "gibbs-mcem",
            Algorithm::Cavi => "cavi",
        }
    }
}

fn default_schedule() -> ScheduleKind {
    ScheduleKind::LogLinear {
        eta_phi_start: 1.0,
        eta_phi_end: 0.1,
        decay_iters: 10_000,
        weight_ratio: 0.01,
    }
}

fn default_burn_in() -> usize {
    200
}

fn default_t_iter() -> usize {
    100
}

fn default_t_prime() -> usize {
    50_000
}

fn default_subsample() -> usize {
    10_000
}

fn default_eta_phi() -> f64 {
    1.0
}

fn default_thin() -> usize {
    1
}

fn default_cavi_iters() -> usize {
    1_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prior: PriorSpec,
    pub design: DesignSpec,
    /// Fraction of the variance of `y` explained by the noise.
    pub noise_fraction: f64,
    pub algorithm: Algorithm,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    /// Smoothing-spline weight; defaults per prior kind when omitted
    /// (0.003 for the Gaussian, 0.001 otherwise).
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Total iterations including burn-in; per-algorithm default when
    /// omitted (burn-in + 10000 for the samplers, 1000 for CAVI).
    #[serde(default)]
    pub total_iters: Option<usize>,
    /// Monte Carlo iterations between M-steps (MCEM fitters).
    #[serde(default = "default_t_iter")]
    pub t_iter: usize,
    /// Post-fit iterates for the posterior mean.
    #[serde(default = "default_t_prime")]
    pub t_prime: usize,
    /// Coordinates subsampled per Langevin-MCEM M-step.
    #[serde(default = "default_subsample")]
    pub subsample: usize,
    /// Fixed post-burn-in step size for langevin-mcem.
    #[serde(default = "default_eta_phi")]
    pub eta_phi: f64,
    /// Thinning factor of the posterior-sampling pass.
    #[serde(default = "default_thin")]
    pub thin: usize,
    /// Seed generating the dataset instance (one instance per experiment).
    #[serde(default)]
    pub data_seed: u64,
    /// Fit seeds: one independent run per entry on the shared instance.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&raw)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.noise_fraction > 0.0 && self.noise_fraction < 1.0) {
            return Err(ConfigError(format!(
                "noise_fraction must be in (0, 1), got {}",
                self.noise_fraction
            )));
        }
        if self.prior.k < 2 || !(self.prior.m > 0.0) {
            return Err(ConfigError("prior needs k >= 2 and m > 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError("at least one fit seed is required".into()));
        }
        if self.t_iter == 0 || self.thin == 0 {
            return Err(ConfigError("t_iter and thin must be at least 1".into()));
        }
        if self.t_prime < self.thin {
            return Err(ConfigError(format!(
                "t_prime ({}) must be at least the thinning factor ({})",
                self.t_prime, self.thin
            )));
        }
        if !(self.eta_phi > 0.0) {
            return Err(ConfigError("eta_phi must be positive".into()));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return Err(ConfigError(format!("lambda must be nonnegative, got {l}")));
            }
        }
        match self.design.kind {
            DesignKind::Identity if self.design.n != self.design.p => {
                return Err(ConfigError("identity design requires n = p".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Smoothing weight: explicit value, or the per-prior default.
    pub fn lambda_value(&self) -> f64 {
        self.lambda.unwrap_or(match self.prior.kind {
            PriorKind::Gaussian => 0.003,
            _ => 0.001,
        })
    }

    /// Total iterations including burn-in, with per-algorithm defaults.
    pub fn total_iters_value(&self) -> usize {
        if let Some(t) = self.total_iters {
            return t;
        }
        match self.algorithm {
            Algorithm::Cavi => default_cavi_iters(),
            Algorithm::Ebflow | Algorithm::EbflowPrecond => {
                let decay = match self.schedule {
                    ScheduleKind::LogLinear { decay_iters, .. } => decay_iters,
                    ScheduleKind::Constant { .. } => 10_000,
                };
                self.burn_in + decay
            }
            Algorithm::LangevinMcem | Algorithm::GibbsMcem => self.burn_in + 10_000,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentConfig {
        ExperimentConfig {
            prior: PriorSpec {
                kind: PriorKind::Gaussian,
                m: 3.0,
                k: 61,
            },
            design: DesignSpec {
                kind: DesignKind::Iid,
                n: 500,
                p: 1000,
            },
            noise_fraction: 0.5,
            algorithm: Algorithm::Ebflow,
            schedule: default_schedule(),
            lambda: None,
            burn_in: 200,
            total_iters: None,
            t_iter: 100,
            t_prime: 50_000,
            subsample: 10_000,
            eta_phi: 1.0,
            thin: 1,
            data_seed: 0,
            seeds: vec![1, 2, 3],
            out_dir: None,
        }
    }

    #[test]
    fn round_trips_through_json() {
        let config = sample();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut v: serde_json::Value = serde_json::to_value(sample()).unwrap();
        v["surprise"] = serde_json::json!(1);
        let res: Result<ExperimentConfig, _> = serde_json::from_value(v);
        assert!(res.is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for (alg, name) in [
            (Algorithm::Ebflow, "\"ebflow\""),
            (Algorithm::EbflowPrecond, "\"ebflow-precond\""),
            (Algorithm::LangevinMcem, "\"langevin-mcem\""),
            (Algorithm::GibbsMcem, "\"gibbs-mcem\""),
            (Algorithm::Cavi, "\"cavi\""),
        ] {
            assert_eq!(serde_json::to_string(&alg).unwrap(), name);
        }
    }

    #[test]
    fn lambda_defaults_by_prior() {
        let mut config = sample();
        assert_eq!(config.lambda_value(), 0.003);
        config.prior.kind = PriorKind::Bimodal;
        assert_eq!(config.lambda_value(), 0.001);
        config.lambda = Some(0.0);
        assert_eq!(config.lambda_value(), 0.0);
    }

    #[test]
    fn default_totals() {
        let mut config = sample();
        assert_eq!(config.total_iters_value(), 10_200);
        config.algorithm = Algorithm::Cavi;
        assert_eq!(config.total_iters_value(), 1_000);
        config.algorithm = Algorithm::GibbsMcem;
        assert_eq!(config.total_iters_value(), 10_200);
        config.total_iters = Some(77);
        assert_eq!(config.total_iters_value(), 77);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut config = sample();
        config.noise_fraction = 1.2;
        assert!(config.validate().is_err());
        let mut config = sample();
        config.seeds.clear();
        assert!(config.validate().is_err());
        let mut config = sample();
        config.design = DesignSpec {
            kind: DesignKind::Identity,
            n: 10,
            p: 20,
        };
        assert!(config.validate().is_err());
        let mut config = sample();
        config.thin = 64;
        config.t_prime = 10;
        assert!(config.validate().is_err());
    }
}

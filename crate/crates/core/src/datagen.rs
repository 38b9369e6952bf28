//! Simulation instances: named priors discretized to a grid, random designs
//! with structured column covariance, and noise calibrated to a requested
//! variance-explained fraction.
//!
//! Everything here is a pure function of `(spec, seed)`; identical inputs
//! reproduce bit-identical datasets within one build.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{format_f64, sample_variance};
use crate::model::{GridPrior, LinearModel};
use crate::rng::sample_categorical;

/// Named prior density, truncated to `[-M, M]` and discretized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Gaussian,
    Cauchy,
    Skew,
    Bimodal,
    Custom { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub kind: PriorKind,
    /// Support bound M; the grid spans exactly `[-M, M]`.
    pub m: f64,
    /// Number of grid points K.
    pub k: usize,
}

/// Design-matrix family. Random designs have i.i.d. `N(0, Sigma_X / n)` rows
/// so the operator norm stays of constant order as `n, p` grow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Identity,
    Iid,
    /// Independent pairs of variables with correlation 0.9.
    #[serde(rename = "block02corr0.9")]
    Block02Corr09,
    /// Independent blocks of 10 variables with pairwise correlation 0.5.
    #[serde(rename = "block10corr0.5")]
    Block10Corr05,
    /// Explicit column covariance (row-major, p x p).
    Custom {
        covariance: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub n: usize,
    pub p: usize,
}

/// Discretizes the named density onto the equally spaced grid over `[-M, M]`
/// and normalizes: `w_k` proportional to `density(b_k)`.
pub fn make_prior(spec: &PriorSpec) -> Result<GridPrior> {
    if !(spec.m > 0.0) || spec.k < 2 {
        return Err(Error::InvalidArgument(format!(
            "prior spec needs m > 0 and k >= 2, got m={}, k={}",
            spec.m, spec.k
        )));
    }
    let grid = GridPrior::equispaced_grid(spec.m, spec.k);
    let weights: Vec<f64> = match &spec.kind {
        PriorKind::Gaussian => grid.iter().map(|&b| normal_density(b, 0.0, 1.0)).collect(),
        PriorKind::Cauchy => grid.iter().map(|&b| cauchy_density(b, 0.6)).collect(),
        PriorKind::Skew => grid
            .iter()
            .map(|&b| {
                (normal_density(b, -2.0, 0.5)
                    + normal_density(b, -1.5, 1.0)
                    + normal_density(b, 0.0, 2.0))
                    / 3.0
            })
            .collect(),
        PriorKind::Bimodal => grid
            .iter()
            .map(|&b| 0.5 * normal_density(b, -1.5, 0.5) + 0.5 * normal_density(b, 1.5, 0.5))
            .collect(),
        PriorKind::Custom { weights } => {
            if weights.len() != spec.k {
                return Err(Error::DimensionMismatch(format!(
                    "custom prior has {} weights for k = {}",
                    weights.len(),
                    spec.k
                )));
            }
            weights.clone()
        }
    };
    GridPrior::from_unnormalized(grid, weights)
}

fn normal_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

fn cauchy_density(x: f64, gamma: f64) -> f64 {
    gamma / (std::f64::consts::PI * (x * x + gamma * gamma))
}

/// Draws the design matrix for a spec. Random designs have rows
/// `L z / sqrt(n)` where `L L^T = Sigma_X` and `z` is standard normal,
/// drawn row-major.
pub fn make_design<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> Result<DMatrix<f64>> {
    let (n, p) = (spec.n, spec.p);
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument("design needs n, p >= 1".into()));
    }
    match &spec.kind {
        DesignKind::Identity => {
            if n != p {
                return Err(Error::DimensionMismatch(format!(
                    "identity design requires n = p, got n={n}, p={p}"
                )));
            }
            Ok(DMatrix::identity(n, p))
        }
        DesignKind::Iid => {
            let scale = 1.0 / (n as f64).sqrt();
            let mut x = DMatrix::zeros(n, p);
            for i in 0..n {
                for j in 0..p {
                    x[(i, j)] = scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Ok(x)
        }
        DesignKind::Block02Corr09 => {
            if p % 2 != 0 {
                return Err(Error::DimensionMismatch(format!(
                    "block02corr0.9 requires even p, got {p}"
                )));
            }
            // Cholesky factor of [[1, 0.9], [0.9, 1]]
            let c = (1.0f64 - 0.81).sqrt();
            let scale = 1.0 / (n as f64).sqrt();
            let mut x = DMatrix::zeros(n, p);
            for i in 0..n {
                for b in 0..p / 2 {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    x[(i, 2 * b)] = scale * z1;
                    x[(i, 2 * b + 1)] = scale * (0.9 * z1 + c * z2);
                }
            }
            Ok(x)
        }
        DesignKind::Block10Corr05 => {
            if p % 10 != 0 {
                return Err(Error::DimensionMismatch(format!(
                    "block10corr0.5 requires p divisible by 10, got {p}"
                )));
            }
            let block = DMatrix::from_fn(10, 10, |i, j| if i == j { 1.0 } else { 0.5 });
            let chol = nalgebra::Cholesky::new(block)
                .ok_or_else(|| Error::FactorizationFailed("block covariance".into()))?;
            let l = chol.l();
            let scale = 1.0 / (n as f64).sqrt();
            let mut x = DMatrix::zeros(n, p);
            let mut z = DVector::zeros(10);
            for i in 0..n {
                for b in 0..p / 10 {
                    for t in 0..10 {
                        z[t] = rng.sample::<f64, _>(StandardNormal);
                    }
                    let row = &l * &z;
                    for t in 0..10 {
                        x[(i, 10 * b + t)] = scale * row[t];
                    }
                }
            }
            Ok(x)
        }
        DesignKind::Custom { covariance } => {
            if covariance.len() != p || covariance.iter().any(|r| r.len() != p) {
                return Err(Error::DimensionMismatch(format!(
                    "custom covariance must be {p} x {p}"
                )));
            }
            let cov = DMatrix::from_fn(p, p, |i, j| covariance[i][j]);
            let chol = nalgebra::Cholesky::new(cov)
                .ok_or_else(|| Error::FactorizationFailed("custom column covariance".into()))?;
            let l = chol.l();
            let scale = 1.0 / (n as f64).sqrt();
            let mut x = DMatrix::zeros(n, p);
            let mut z = DVector::zeros(p);
            for i in 0..n {
                for t in 0..p {
                    z[t] = rng.sample::<f64, _>(StandardNormal);
                }
                let row = &l * &z;
                for j in 0..p {
                    x[(i, j)] = scale * row[j];
                }
            }
            Ok(x)
        }
    }
}

/// Simulates `y = X theta + eps` with `theta_j` drawn i.i.d. from the grid
/// prior (categorical over atoms, so the truth weights are exact) and the
/// noise variance calibrated so that `eps` explains `fraction` of the
/// variance of `y`: `sigma^2 = var(X theta) * fraction / (1 - fraction)`.
pub fn simulate<R: Rng + ?Sized>(
    prior: &GridPrior,
    x: DMatrix<f64>,
    variance_fraction_noise: f64,
    rng: &mut R,
) -> Result<LinearModel> {
    let fraction = variance_fraction_noise;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance fraction must be in (0, 1), got {fraction}"
        )));
    }
    let (n, p) = x.shape();
    let theta = DVector::from_fn(p, |_, _| {
        prior.support()[sample_categorical(rng, prior.weights())]
    });
    let xtheta = &x * &theta;
    let signal_var = sample_variance(xtheta.as_slice());
    if signal_var <= 0.0 {
        return Err(Error::ZeroSignalVariance);
    }
    let sigma_sq = signal_var * fraction / (1.0 - fraction);
    let sigma = sigma_sq.sqrt();
    let mut y = xtheta;
    for i in 0..n {
        y[i] += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    LinearModel::new(x, y, sigma_sq, Some(theta))
}

/// Metadata stored alongside a serialized dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub prior: PriorSpec,
    pub design: DesignSpec,
    pub seed: u64,
    pub sigma_sq: f64,
    pub noise_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub model: LinearModel,
    pub meta: DatasetMeta,
}

/// Writes `X.csv`, `y.csv`, `theta_star.csv` (17 significant digits, no
/// header) and `meta.json` into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, model: &LinearModel, meta: &DatasetMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_matrix_csv(&dir.join("X.csv"), &model.x)?;
    write_column_csv(&dir.join("y.csv"), model.y.as_slice())?;
    if let Some(theta) = &model.theta_star {
        write_column_csv(&dir.join("theta_star.csv"), theta.as_slice())?;
    }
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Parse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta_raw = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_raw).map_err(|e| Error::Parse {
        path: meta_path,
        message: e.to_string(),
    })?;
    let x = read_matrix_csv(&dir.join("X.csv"))?;
    let y = DVector::from_vec(read_column_csv(&dir.join("y.csv"))?);
    let theta_path = dir.join("theta_star.csv");
    let theta_star = if theta_path.exists() {
        Some(DVector::from_vec(read_column_csv(&theta_path)?))
    } else {
        None
    };
    let model = LinearModel::new(x, y, meta.sigma_sq, theta_star)?;
    Ok(Dataset { model, meta })
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut buf = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                buf.push(',');
            }
            buf.push_str(&format_f64(m[(i, j)]));
        }
        buf.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn write_column_csv(path: &Path, vals: &[f64]) -> Result<()> {
    let mut buf = String::new();
    for &v in vals {
        buf.push_str(&format_f64(v));
        buf.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("ragged row at line {}", lineno + 1),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "empty matrix".into(),
        });
    }
    let (n, p) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

pub fn read_column_csv(path: &Path) -> Result<Vec<f64>> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    raw.lines()
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(lineno, line)| {
            line.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", lineno + 1),
            })
        })
        .collect()
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, STREAM_DESIGN, STREAM_SIGNAL};

    fn gaussian_spec() -> PriorSpec {
        PriorSpec {
            kind: PriorKind::Gaussian,
            m: 3.0,
            k: 61,
        }
    }

    #[test]
    fn gaussian_grid_has_expected_spacing() {
        let prior = make_prior(&gaussian_spec()).unwrap();
        assert_eq!(prior.len(), 61);
        assert!((prior.spacing() - 0.1).abs() < 1e-14);
        assert_eq!(prior.support()[0], -3.0);
        assert_eq!(prior.support()[60], 3.0);
    }

    #[test]
    fn gaussian_weights_match_direct_normalization() {
        let prior = make_prior(&gaussian_spec()).unwrap();
        let grid = prior.support();
        let total: f64 = grid.iter().map(|&b| normal_density(b, 0.0, 1.0)).sum();
        let at_zero = normal_density(0.0, 0.0, 1.0) / total;
        assert!((prior.weights()[30] - at_zero).abs() < 1e-14);
    }

    #[test]
    fn bimodal_weights_are_symmetric() {
        let prior = make_prior(&PriorSpec {
            kind: PriorKind::Bimodal,
            m: 3.0,
            k: 61,
        })
        .unwrap();
        let w = prior.weights();
        for k in 0..61 {
            assert!((w[k] - w[60 - k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_design_is_identity() {
        let spec = DesignSpec {
            kind: DesignKind::Identity,
            n: 4,
            p: 4,
        };
        let mut rng = stream_rng(0, STREAM_DESIGN);
        let x = make_design(&spec, &mut rng).unwrap();
        assert_eq!(x, DMatrix::identity(4, 4));
        let bad = DesignSpec {
            kind: DesignKind::Identity,
            n: 4,
            p: 5,
        };
        assert!(make_design(&bad, &mut rng).is_err());
    }

    #[test]
    fn block_design_has_target_covariance() {
        // Monte-Carlo covariance oracle: sample covariance of sqrt(n) X at
        // n = 1e5 lands within 0.02 entrywise of blkdiag([[1, .9], [.9, 1]])
        let n = 100_000;
        let spec = DesignSpec {
            kind: DesignKind::Block02Corr09,
            n,
            p: 4,
        };
        let mut rng = stream_rng(9, STREAM_DESIGN);
        let x = make_design(&spec, &mut rng).unwrap();
        // sample covariance of sqrt(n) X is (sqrt(n) X)^T (sqrt(n) X) / n = X^T X
        let cov = x.transpose() * &x;
        let target = [
            [1.0, 0.9, 0.0, 0.0],
            [0.9, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.9],
            [0.0, 0.0, 0.9, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (cov[(i, j)] - target[i][j]).abs() < 0.02,
                    "cov[{i},{j}] = {}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn block10_posdef_and_divisibility() {
        let spec = DesignSpec {
            kind: DesignKind::Block10Corr05,
            n: 50,
            p: 20,
        };
        let mut rng = stream_rng(2, STREAM_DESIGN);
        assert!(make_design(&spec, &mut rng).is_ok());
        let bad = DesignSpec {
            kind: DesignKind::Block10Corr05,
            n: 50,
            p: 25,
        };
        assert!(make_design(&bad, &mut rng).is_err());
    }

    #[test]
    fn noise_fraction_calibration() {
        let prior = make_prior(&gaussian_spec()).unwrap();
        let spec = DesignSpec {
            kind: DesignKind::Iid,
            n: 600,
            p: 100,
        };
        let mut rng = stream_rng(4, STREAM_SIGNAL);
        let x = make_design(&spec, &mut rng).unwrap();

        // fraction 0.5 => sigma^2 = var(X theta)
        let model = simulate(&prior, x.clone(), 0.5, &mut rng).unwrap();
        let xtheta = &model.x * model.theta_star.as_ref().unwrap();
        let sv = sample_variance(xtheta.as_slice());
        assert!((model.sigma_sq - sv).abs() < 1e-12 * sv);

        // fraction 0.2 => sigma^2 = var(X theta) / 4
        let model = simulate(&prior, x, 0.2, &mut rng).unwrap();
        let xtheta = &model.x * model.theta_star.as_ref().unwrap();
        let sv = sample_variance(xtheta.as_slice());
        assert!((model.sigma_sq - sv / 4.0).abs() < 1e-12 * sv);
    }

    #[test]
    fn empirical_noise_share_tracks_request() {
        let prior = make_prior(&gaussian_spec()).unwrap();
        let spec = DesignSpec {
            kind: DesignKind::Iid,
            n: 800,
            p: 200,
        };
        let mut rng = stream_rng(11, STREAM_SIGNAL);
        let x = make_design(&spec, &mut rng).unwrap();
        let model = simulate(&prior, x, 0.5, &mut rng).unwrap();
        let xtheta = &model.x * model.theta_star.as_ref().unwrap();
        let eps = &model.y - &xtheta;
        let share = sample_variance(eps.as_slice())
            / (sample_variance(eps.as_slice()) + sample_variance(xtheta.as_slice()));
        assert!((share - 0.5).abs() < 0.05 * 0.5, "share = {share}");
    }

    #[test]
    fn point_mass_at_zero_is_degenerate() {
        let mut w = vec![0.0; 61];
        w[30] = 1.0;
        let prior = make_prior(&PriorSpec {
            kind: PriorKind::Custom { weights: w },
            m: 3.0,
            k: 61,
        })
        .unwrap();
        let spec = DesignSpec {
            kind: DesignKind::Iid,
            n: 50,
            p: 10,
        };
        let mut rng = stream_rng(5, STREAM_SIGNAL);
        let x = make_design(&spec, &mut rng).unwrap();
        let err = simulate(&prior, x, 0.5, &mut rng).unwrap_err();
        assert!(matches!(err, Error::ZeroSignalVariance));
    }

    #[test]
    fn theta_lands_on_grid_and_datasets_reproduce() {
        let prior = make_prior(&gaussian_spec()).unwrap();
        let spec = DesignSpec {
            kind: DesignKind::Iid,
            n: 40,
            p: 12,
        };
        let gen = |seed: u64| {
            let mut drng = stream_rng(seed, STREAM_DESIGN);
            let x = make_design(&spec, &mut drng).unwrap();
            let mut srng = stream_rng(seed, STREAM_SIGNAL);
            simulate(&prior, x, 0.5, &mut srng).unwrap()
        };
        let a = gen(3);
        let b = gen(3);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.theta_star, b.theta_star);
        for &t in a.theta_star.as_ref().unwrap().iter() {
            assert!(prior.support().iter().any(|&b| b == t));
        }
    }

    #[test]
    fn dataset_roundtrip_is_exact() {
        let prior = make_prior(&gaussian_spec()).unwrap();
        let spec = DesignSpec {
            kind: DesignKind::Iid,
            n: 15,
            p: 7,
        };
        let mut rng = stream_rng(1, STREAM_SIGNAL);
        let x = make_design(&spec, &mut rng).unwrap();
        let model = simulate(&prior, x, 0.3, &mut rng).unwrap();
        let meta = DatasetMeta {
            prior: gaussian_spec(),
            design: spec,
            seed: 1,
            sigma_sq: model.sigma_sq,
            noise_fraction: 0.3,
        };
        let dir = std::env::temp_dir().join(format!("ebflow-dataset-{}", std::process::id()));
        save_dataset(&dir, &model, &meta).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(loaded.model.x, model.x);
        assert_eq!(loaded.model.y, model.y);
        assert_eq!(loaded.model.theta_star, model.theta_star);
        assert_eq!(loaded.meta, meta);
        fs::remove_dir_all(&dir).ok();
    }
}

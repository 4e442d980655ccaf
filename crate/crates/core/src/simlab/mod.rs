//! Synthetic precision matrices, Gaussian samplers, error metrics and the
//! experiment runners built on them.

mod experiment;
mod metrics;

pub use experiment::{
    evaluate_splits, run_experiment, ClassificationRecord, ClassifierSettings, EstimationRecord, ExperimentConfig, ExperimentName,
    ExperimentResults, Method,
};
pub use metrics::{error_report, error_report_sparse, hamming_distance, spectral_norm, ErrorReport, ErrorSummary};

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covsource::{DataMatrix, LabeledData};
use crate::error::{PcsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Unit diagonal, `rho` on the first off-diagonals.
    Tridiagonal { rho: f64 },
    /// 3x3 diagonal blocks with unit diagonal, `A(1,2) = 0`, `A(1,3) = a`,
    /// `A(2,3) = b`.
    Block3 { a: f64, b: f64 },
    /// Sparse Bernoulli(`epsilon`) adjacency, shifted to condition number `p`
    /// and rescaled to unit diagonal.
    Wigner { epsilon: f64 },
}

impl ModelKind {
    pub fn tridiagonal() -> Self {
        ModelKind::Tridiagonal { rho: 0.4 }
    }

    pub fn block3() -> Self {
        ModelKind::Block3 { a: 0.5, b: 0.7 }
    }

    pub fn wigner() -> Self {
        ModelKind::Wigner { epsilon: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub p: usize,
    pub seed: u64,
}

/// Positive definite precision matrix with its Cholesky factor; the covariance
/// is computed on first use.
#[derive(Debug, Clone)]
pub struct PrecisionModel {
    omega: DMatrix<f64>,
    cholesky: Cholesky<f64, Dyn>,
    covariance: OnceLock<DMatrix<f64>>,
}

impl PrecisionModel {
    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        let cholesky = omega.clone().cholesky().ok_or_else(|| {
            PcsError::InvalidInput("precision matrix is not positive definite".into())
        })?;
        Ok(Self {
            omega,
            cholesky,
            covariance: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// Exact covariance `Omega^-1`, symmetrized.
    pub fn covariance(&self) -> &DMatrix<f64> {
        self.covariance.get_or_init(|| {
            let inv = self.cholesky.inverse();
            (&inv + inv.transpose()) * 0.5
        })
    }

    /// Number of nonzero off-diagonal entries in row `i`.
    pub fn row_support(&self, i: usize) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| j != i && self.omega[(i, j)] != 0.0)
            .collect()
    }
}

/// Largest number of off-diagonal nonzeros in a row.
pub fn max_row_degree(omega: &DMatrix<f64>) -> usize {
    (0..omega.nrows())
        .map(|i| {
            (0..omega.ncols())
                .filter(|&j| j != i && omega[(i, j)] != 0.0)
                .count()
        })
        .max()
        .unwrap_or(0)
}

const WIGNER_RETRIES: u64 = 10;

pub fn generate_precision(spec: &ModelSpec) -> Result<PrecisionModel> {
    let p = spec.p;
    if p < 3 {
        return Err(PcsError::InvalidInput(format!("p >= 3 required, got {p}")));
    }
    let omega = match spec.kind {
        ModelKind::Tridiagonal { rho } => DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else if i.abs_diff(j) == 1 {
                rho
            } else {
                0.0
            }
        }),
        ModelKind::Block3 { a, b } => {
            if !p.is_multiple_of(3) {
                return Err(PcsError::InvalidInput(format!(
                    "block3 model needs p divisible by 3, got {p}"
                )));
            }
            let block = [[1.0, 0.0, a], [0.0, 1.0, b], [a, b, 1.0]];
            DMatrix::from_fn(p, p, |i, j| {
                if i / 3 == j / 3 {
                    block[i % 3][j % 3]
                } else {
                    0.0
                }
            })
        }
        ModelKind::Wigner { epsilon } => {
            if !(epsilon > 0.0 && epsilon < 1.0) {
                return Err(PcsError::InvalidInput(format!(
                    "wigner epsilon must lie in (0, 1), got {epsilon}"
                )));
            }
            let mut found = None;
            for attempt in 0..WIGNER_RETRIES {
                if let Some(m) = wigner_precision(p, epsilon, spec.seed.wrapping_add(attempt)) {
                    found = Some(m);
                    break;
                }
            }
            found.ok_or_else(|| {
                PcsError::InvalidInput(format!(
                    "no usable Wigner draw after {WIGNER_RETRIES} seeds"
                ))
            })?
        }
    };
    PrecisionModel::new(omega)
}

/// Condition number of `0.5 W + theta I` given the extreme eigenvalues of `W`.
fn shifted_condition(lo: f64, hi: f64, theta: f64) -> f64 {
    (0.5 * hi + theta) / (0.5 * lo + theta)
}

/// `0.5 W + theta I` with `theta` found by bisection so that its condition
/// number is `p`, scaled to unit diagonal. `None` when no shift reaches `p`.
fn wigner_precision(p: usize, epsilon: f64, seed: u64) -> Option<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coin = Bernoulli::new(epsilon).expect("epsilon in (0, 1)");
    let mut w = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in i + 1..p {
            if coin.sample(&mut rng) {
                w[(i, j)] = 1.0;
                w[(j, i)] = 1.0;
            }
        }
    }
    let eig = w.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let target = p as f64;
    if !(hi > lo) {
        return None;
    }
    // cond decreases from +inf (theta -> -lo/2) to 1 (theta -> inf).
    let mut left = -0.5 * lo;
    let mut right = left + 1.0;
    while shifted_condition(lo, hi, right) > target {
        right = left + 2.0 * (right - left);
    }
    for _ in 0..200 {
        let mid = 0.5 * (left + right);
        if shifted_condition(lo, hi, mid) > target {
            left = mid;
        } else {
            right = mid;
        }
        if (shifted_condition(lo, hi, right) / target - 1.0).abs() < 1e-10 {
            break;
        }
    }
    let theta = right;
    if !(theta > 0.0) {
        return None;
    }
    // The diagonal of 0.5 W + theta I is theta everywhere.
    let mut omega = w * (0.5 / theta);
    omega.fill_diagonal(1.0);
    Some(omega)
}

/// Draws Gaussian vectors with a given covariance, through a triangular factor.
#[derive(Debug, Clone)]
pub enum GaussianSampler {
    /// `Sigma = L L'`, sample `L z`.
    Covariance(DMatrix<f64>),
    /// `Omega = L L'`, sample `L'^-1 z`.
    Precision(DMatrix<f64>),
}

impl GaussianSampler {
    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cov.clone().cholesky().ok_or_else(|| {
            PcsError::InvalidInput("covariance is not positive definite".into())
        })?;
        Ok(GaussianSampler::Covariance(chol.l()))
    }

    pub fn from_model(model: &PrecisionModel) -> Self {
        GaussianSampler::Precision(model.cholesky.l())
    }

    pub fn dim(&self) -> usize {
        match self {
            GaussianSampler::Covariance(l) | GaussianSampler::Precision(l) => l.nrows(),
        }
    }

    /// `n` draws as a `p x n` matrix of columns.
    fn draw(&self, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let p = self.dim();
        let z = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        // Column-major fill above visits features fastest within a sample.
        match self {
            GaussianSampler::Covariance(l) => l * z,
            GaussianSampler::Precision(l) => l
                .transpose()
                .solve_upper_triangular(&z)
                .expect("Cholesky factor has a positive diagonal"),
        }
    }
}

/// `n` samples with mean zero.
pub fn sample_gaussian(sampler: &GaussianSampler, n: usize, seed: u64) -> Result<DataMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = sampler.draw(n, &mut rng);
    DataMatrix::new(n, sampler.dim(), cols.as_slice().to_vec())
}

/// Rare-and-weak two-class design: `sqrt(n) mu(j)` is `tau_p` with
/// probability `epsilon_p` and 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub epsilon_p: f64,
    pub tau_p: f64,
    pub model: ModelSpec,
    pub seed: u64,
}

impl ClassSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_p > 0.0 && self.epsilon_p < 1.0) {
            return Err(PcsError::InvalidInput(format!(
                "epsilon_p must lie in (0, 1), got {}",
                self.epsilon_p
            )));
        }
        if !(self.tau_p >= 0.0 && self.tau_p.is_finite()) {
            return Err(PcsError::InvalidInput(format!(
                "tau_p must be >= 0, got {}",
                self.tau_p
            )));
        }
        Ok(())
    }

    /// The contrast half-mean `mu` for sample size `n`.
    pub fn mean_vector(&self, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let coin = Bernoulli::new(self.epsilon_p).expect("validated epsilon_p");
        let height = self.tau_p / (n as f64).sqrt();
        (0..self.model.p)
            .map(|_| if coin.sample(&mut rng) { height } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TwoClassSample {
    pub data: LabeledData,
    pub mu: Vec<f64>,
}

/// `n` labeled samples: the first `floor(n / 2)` have label +1 and mean `mu`,
/// the rest label -1 and mean `-mu`; all share the model's covariance.
pub fn sample_two_class(
    spec: &ClassSpec,
    model: &PrecisionModel,
    n: usize,
    seed: u64,
) -> Result<TwoClassSample> {
    spec.validate()?;
    if model.dim() != spec.model.p {
        return Err(PcsError::DimensionMismatch {
            expected: spec.model.p,
            actual: model.dim(),
        });
    }
    let mu = spec.mean_vector(n);
    let noise = sample_gaussian(&GaussianSampler::from_model(model), n, seed)?;
    let p = model.dim();
    let labels: Vec<i8> = (0..n).map(|i| if i < n / 2 { 1 } else { -1 }).collect();
    let mut values = noise.values().to_vec();
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..p {
            values[i * p + j] += y as f64 * mu[j];
        }
    }
    let data = LabeledData::new(DataMatrix::new(n, p, values)?, labels)?;
    Ok(TwoClassSample { data, mu })
}

//! Higher-Criticism thresholding (HCT) classifier on top of a precision
//! matrix estimate.
//!
//! Training computes two-sample t-scores, standardizes them, multiplies by the
//! estimated precision matrix (the innovated transform), picks a threshold by
//! maximizing the Higher-Criticism functional over the smallest P-values, and
//! keeps `sign(z)` weights for the scores above the threshold. A test vector
//! is classified by the sign of `w' Omega x*`, with `x*` the test vector
//! centered at the midpoint of the class means and scaled by the pooled sd.

use serde::{Deserialize, Serialize};

use crate::covsource::{class_moments, pooled_correlation, ClassMoments, DataMatrix, LabeledData};
use crate::error::{PcsError, Result};
use crate::foba::{foba_estimate_from_source, FobaConfig};
use crate::pcs::{estimate_precision, estimate_precision_grid, PcsConfig};
use crate::sparse::SparseSymmetricMatrix;

pub const DEFAULT_ALPHA0: f64 = 0.2;

fn scores_from_moments(m: &ClassMoments) -> Vec<f64> {
    let n0 = (1.0 / m.n_plus as f64 + 1.0 / m.n_minus as f64).sqrt();
    m.mu_plus
        .iter()
        .zip(&m.mu_minus)
        .zip(&m.pooled_sd)
        .map(|((a, b), s)| (a - b) / (n0 * s))
        .collect()
}

/// Two-sample t-scores `(mu+ - mu-) / (n0 s)` with `n0 = sqrt(1/n1 + 1/n2)`.
pub fn t_scores(data: &LabeledData) -> Result<Vec<f64>> {
    Ok(scores_from_moments(&class_moments(data)?))
}

/// Centers and scales the scores by their own mean and standard deviation
/// (divisor `p`).
pub fn empirical_null_normalize(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(PcsError::DegenerateScores);
    }
    let p = z.len() as f64;
    let mean = z.iter().sum::<f64>() / p;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p).sqrt();
    let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sd > 1e-14 * scale) {
        return Err(PcsError::DegenerateScores);
    }
    Ok(z.iter().map(|v| (v - mean) / sd).collect())
}

/// `Omega z*`.
pub fn innovated_transform(omega: &SparseSymmetricMatrix, z_star: &[f64]) -> Result<Vec<f64>> {
    omega.mul_vec(z_star)
}

/// `P(|N(0, 1)| >= |x|)`.
pub fn two_sided_pvalue(x: f64) -> f64 {
    libm::erfc(x.abs() / std::f64::consts::SQRT_2)
}

/// P-values of the transformed scores, each standardized by `Omega(j, j)`.
pub fn hc_pvalues(z_tilde: &[f64], omega_diagonals: &[f64]) -> Result<Vec<f64>> {
    if z_tilde.len() != omega_diagonals.len() {
        return Err(PcsError::DimensionMismatch {
            expected: omega_diagonals.len(),
            actual: z_tilde.len(),
        });
    }
    z_tilde
        .iter()
        .zip(omega_diagonals)
        .enumerate()
        .map(|(j, (&z, &d))| {
            if d > 0.0 {
                Ok(two_sided_pvalue(z / d.sqrt()))
            } else {
                Err(PcsError::InvalidInput(format!(
                    "precision diagonal at feature {j} is {d} (must be positive)"
                )))
            }
        })
        .collect()
}

/// Number of sorted P-values the HC search looks at: `floor(alpha0 p)`,
/// clamped to `1..=p-1`.
pub fn hc_search_range(p: usize, alpha0: f64) -> usize {
    ((alpha0 * p as f64).floor() as usize).clamp(1, p.saturating_sub(1).max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HcSelection {
    /// 1-based maximizing index.
    pub j_hat: usize,
    /// `HC_{p,j}` for `j = 1..=range`.
    pub values: Vec<f64>,
}

/// Maximizes `HC_{p,j} = (j/p - pi_(j)) / sqrt((1 - j/p) j/p)` over the search
/// range. `sorted` must be ascending; ties go to the smallest `j`.
pub fn hc_select(sorted: &[f64], alpha0: f64) -> Result<HcSelection> {
    let p = sorted.len();
    if p < 2 {
        return Err(PcsError::InvalidInput(format!("HC needs p >= 2, got {p}")));
    }
    if !(alpha0 > 0.0 && alpha0 <= 1.0) {
        return Err(PcsError::InvalidInput(format!(
            "alpha0 must lie in (0, 1], got {alpha0}"
        )));
    }
    let pf = p as f64;
    let values: Vec<f64> = (1..=hc_search_range(p, alpha0))
        .map(|j| {
            let f = j as f64 / pf;
            (f - sorted[j - 1]) / ((1.0 - f) * f).sqrt()
        })
        .collect();
    let mut j_hat = 1;
    for (k, &v) in values.iter().enumerate() {
        if v > values[j_hat - 1] {
            j_hat = k + 1;
        }
    }
    Ok(HcSelection { j_hat, values })
}

/// HC threshold: the magnitude of the `j_hat`-th largest `|z_tilde|`.
/// Returns `(threshold, j_hat)`.
pub fn hc_threshold(z_tilde: &[f64], omega_diagonals: &[f64], alpha0: f64) -> Result<(f64, usize)> {
    let mut pvalues = hc_pvalues(z_tilde, omega_diagonals)?;
    pvalues.sort_by(f64::total_cmp);
    let selection = hc_select(&pvalues, alpha0)?;
    let mut magnitudes: Vec<f64> = z_tilde.iter().map(|z| z.abs()).collect();
    magnitudes.sort_by(|a, b| b.total_cmp(a));
    Ok((magnitudes[selection.j_hat - 1], selection.j_hat))
}

/// A trained HCT classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HctModel {
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    pub pooled_sd: Vec<f64>,
    pub omega: SparseSymmetricMatrix,
    pub z: Vec<f64>,
    pub z_star: Vec<f64>,
    pub z_tilde: Vec<f64>,
    pub hc_threshold: f64,
    pub j_hat: usize,
    pub weights: Vec<i8>,
    pub alpha0: f64,
}

fn train_from_moments(
    moments: ClassMoments,
    omega: SparseSymmetricMatrix,
    alpha0: f64,
) -> Result<HctModel> {
    let p = moments.pooled_sd.len();
    if omega.dim() != p {
        return Err(PcsError::DimensionMismatch {
            expected: p,
            actual: omega.dim(),
        });
    }
    let z = scores_from_moments(&moments);
    let z_star = empirical_null_normalize(&z)?;
    let z_tilde = innovated_transform(&omega, &z_star)?;
    let (threshold, j_hat) = hc_threshold(&z_tilde, &omega.diagonal(), alpha0)?;
    let weights = z_tilde
        .iter()
        .map(|&v| {
            if v.abs() >= threshold {
                v.signum() as i8 * (v != 0.0) as i8
            } else {
                0
            }
        })
        .collect();
    Ok(HctModel {
        mu_plus: moments.mu_plus,
        mu_minus: moments.mu_minus,
        pooled_sd: moments.pooled_sd,
        omega,
        z,
        z_star,
        z_tilde,
        hc_threshold: threshold,
        j_hat,
        weights,
        alpha0,
    })
}

/// Trains the classifier with a given precision matrix estimate.
pub fn train(data: &LabeledData, omega: SparseSymmetricMatrix, alpha0: f64) -> Result<HctModel> {
    train_from_moments(class_moments(data)?, omega, alpha0)
}

impl HctModel {
    pub fn dim(&self) -> usize {
        self.pooled_sd.len()
    }

    /// `Omega w`, the direction the standardized test vector is projected on.
    pub fn direction(&self) -> Vec<f64> {
        let w: Vec<f64> = self.weights.iter().map(|&v| v as f64).collect();
        self.omega
            .mul_vec(&w)
            .expect("model omega and weights share the dimension")
    }

    fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.dim() {
            return Err(PcsError::DimensionMismatch {
                expected: self.dim(),
                actual,
            });
        }
        Ok(())
    }

    fn score_with(&self, direction: &[f64], x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|j| {
                let mid = 0.5 * (self.mu_plus[j] + self.mu_minus[j]);
                direction[j] * (x[j] - mid) / self.pooled_sd[j]
            })
            .sum()
    }

    /// `L(x) = w' Omega x*`.
    pub fn discriminant(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.score_with(&self.direction(), x))
    }

    /// +1 when the discriminant is `>= 0`, -1 otherwise.
    pub fn classify(&self, x: &[f64]) -> Result<i8> {
        Ok(if self.discriminant(x)? >= 0.0 { 1 } else { -1 })
    }

    pub fn classify_batch(&self, data: &DataMatrix) -> Result<Vec<i8>> {
        self.check_dim(data.p())?;
        let direction = self.direction();
        Ok((0..data.n())
            .map(|i| {
                if self.score_with(&direction, data.sample(i)) >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect())
    }

    /// Fraction of misclassified samples.
    pub fn error_rate(&self, data: &LabeledData) -> Result<f64> {
        let predicted = self.classify_batch(data.data())?;
        let wrong = predicted
            .iter()
            .zip(data.labels())
            .filter(|(a, b)| a != b)
            .count();
        Ok(wrong as f64 / data.n() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        let p = model.dim();
        for len in [
            model.mu_plus.len(),
            model.mu_minus.len(),
            model.weights.len(),
            model.omega.dim(),
        ] {
            if len != p {
                return Err(PcsError::DimensionMismatch {
                    expected: p,
                    actual: len,
                });
            }
        }
        Ok(model)
    }
}

/// How the precision matrix behind an HCT classifier is estimated from the
/// pooled correlation matrix of the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OmegaMethod {
    /// Identity, i.e. features treated as independent (naive HCT).
    Naive,
    Pcs(PcsConfig),
    Foba(FobaConfig),
}

impl OmegaMethod {
    pub fn name(&self) -> &'static str {
        match self {
            OmegaMethod::Naive => "nHCT",
            OmegaMethod::Pcs(_) => "HCT-PCS",
            OmegaMethod::Foba(_) => "HCT-FoBa",
        }
    }
}

/// Precision estimate on the pooled correlation matrix of `data`.
pub fn estimate_omega(
    data: &LabeledData,
    method: &OmegaMethod,
    threads: usize,
) -> Result<SparseSymmetricMatrix> {
    match method {
        OmegaMethod::Naive => Ok(SparseSymmetricMatrix::identity(data.p())),
        OmegaMethod::Pcs(config) => {
            let r = pooled_correlation(data)?;
            Ok(estimate_precision(&r, data.n(), config, threads)?.matrix)
        }
        OmegaMethod::Foba(config) => {
            let r = pooled_correlation(data)?;
            Ok(foba_estimate_from_source(&r, data.n(), config, threads)?.matrix)
        }
    }
}

/// Estimates the precision matrix and trains the classifier.
pub fn fit(data: &LabeledData, method: &OmegaMethod, alpha0: f64, threads: usize) -> Result<HctModel> {
    let omega = estimate_omega(data, method, threads)?;
    train(data, omega, alpha0)
}

/// HCT-PCS classifiers for each `q` in `qs`, sharing one screening pass.
pub fn fit_pcs_grid(
    data: &LabeledData,
    qs: &[f64],
    config: &PcsConfig,
    alpha0: f64,
    threads: usize,
) -> Result<Vec<HctModel>> {
    let moments = class_moments(data)?;
    let r = pooled_correlation(data)?;
    estimate_precision_grid(&r, data.n(), qs, config, threads)?
        .into_iter()
        .map(|est| train_from_moments(moments.clone(), est.matrix, alpha0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_score_hand_value() {
        // Class means 1 and -1, n1 = n2 = 2.
        let x = DataMatrix::from_rows(&[
            vec![0.0, 1.0],
            vec![2.0, 0.0],
            vec![-2.0, 1.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let data = LabeledData::new(x, vec![1, 1, -1, -1]).unwrap();
        let m = class_moments(&data).unwrap();
        // Feature 0: centered (-1, 1, -1, 1), SS = 4, dof 2 -> sd sqrt(2).
        assert_eq!(m.mu_plus[0], 1.0);
        assert_eq!(m.mu_minus[0], -1.0);
        let z = t_scores(&data).unwrap();
        let expected = 2.0 / (2f64.sqrt() * 1.0);
        assert!((z[0] - expected).abs() < 1e-15);
        // Feature 1 has identical class means.
        assert_eq!(z[1], 0.0);
    }

    #[test]
    fn t_score_with_unit_pooled_sd() {
        let m = ClassMoments {
            mu_plus: vec![1.0],
            mu_minus: vec![-1.0],
            pooled_sd: vec![1.0],
            n_plus: 2,
            n_minus: 2,
        };
        assert!((scores_from_moments(&m)[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(empirical_null_normalize(&[-1.0, 1.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(matches!(
            empirical_null_normalize(&[2.0, 2.0, 2.0]),
            Err(PcsError::DegenerateScores)
        ));
        let z = [0.3, -1.2, 2.5, 0.1, -0.7];
        let once = empirical_null_normalize(&z).unwrap();
        let twice = empirical_null_normalize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn innovated_transform_examples() {
        let z = [0.5, -1.0, 2.0];
        let id = SparseSymmetricMatrix::identity(3);
        assert_eq!(innovated_transform(&id, &z).unwrap(), z.to_vec());
        let tri = SparseSymmetricMatrix::new(
            4,
            vec![
                (0, 0, 1.0),
                (1, 1, 1.0),
                (2, 2, 1.0),
                (3, 3, 1.0),
                (0, 1, 0.4),
                (1, 2, 0.4),
                (2, 3, 0.4),
            ],
        )
        .unwrap();
        let out = innovated_transform(&tri, &[1.0; 4]).unwrap();
        assert!((out[1] - 1.8).abs() < 1e-15 && (out[2] - 1.8).abs() < 1e-15);
        assert!((out[0] - 1.4).abs() < 1e-15);
        assert_eq!(innovated_transform(&tri, &[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn hc_functional_hand_example() {
        let mut pv = vec![0.001, 0.02];
        pv.extend(std::iter::repeat_n(0.5, 8));
        let sel = hc_select(&pv, 0.2).unwrap();
        assert_eq!(sel.values.len(), 2);
        assert!((sel.values[0] - 0.099 / 0.3).abs() < 1e-12);
        assert!((sel.values[1] - 0.18 / 0.4).abs() < 1e-12);
        assert_eq!(sel.j_hat, 2);
    }

    #[test]
    fn uniform_pvalues_tie_to_first() {
        let p = 20;
        let pv: Vec<f64> = (1..=p).map(|j| j as f64 / p as f64).collect();
        let sel = hc_select(&pv, 0.2).unwrap();
        assert!(sel.values.iter().all(|&v| v == 0.0));
        assert_eq!(sel.j_hat, 1);
    }

    #[test]
    fn search_range_clamps() {
        assert_eq!(hc_search_range(4, 0.2), 1);
        assert_eq!(hc_search_range(10, 0.2), 2);
        assert_eq!(hc_search_range(10, 1.0), 9);
    }

    #[test]
    fn pvalue_accuracy() {
        // 2 * (1 - Phi(1.959963984540054)) = 0.05.
        let v = two_sided_pvalue(1.959963984540054);
        assert!((v - 0.05).abs() < 1e-16, "{v:e}");
        assert_eq!(two_sided_pvalue(0.0), 1.0);
        // Far tail stays relative-accurate: 2 Phi(-10) = 1.523970604832105e-23.
        let tail = two_sided_pvalue(-10.0);
        assert!((tail / 1.523970604832105e-23 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn non_positive_diagonal_rejected() {
        assert!(hc_threshold(&[1.0, 2.0], &[1.0, 0.0], 0.2).is_err());
    }

    #[test]
    fn classify_follows_the_dominant_feature() {
        let model = HctModel {
            mu_plus: vec![1.0, 0.0],
            mu_minus: vec![-1.0, 0.0],
            pooled_sd: vec![1.0, 1.0],
            omega: SparseSymmetricMatrix::identity(2),
            z: vec![10.0, 0.0],
            z_star: vec![1.0, -1.0],
            z_tilde: vec![1.0, -1.0],
            hc_threshold: 1.0,
            j_hat: 1,
            weights: vec![1, 0],
            alpha0: 0.2,
        };
        assert_eq!(model.classify(&[0.5, 3.0]).unwrap(), 1);
        assert_eq!(model.classify(&[-0.5, 3.0]).unwrap(), -1);
        assert_eq!(model.classify(&[0.0, -7.0]).unwrap(), 1);
        assert!(matches!(
            model.classify(&[0.0]),
            Err(PcsError::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{PcsError, Result};
use crate::sparse::SparseSymmetricMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub spectral: f64,
    pub frobenius: f64,
    pub l1: f64,
    pub hamming: f64,
}

/// Mean and sample standard deviation of each measure over repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub reps: usize,
    pub mean: ErrorReport,
    pub sd: ErrorReport,
}

pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (k - 1) as f64).sqrt())
}

impl ErrorSummary {
    pub fn from_reports(reports: &[ErrorReport]) -> Self {
        let pick = |f: fn(&ErrorReport) -> f64| mean_sd(&reports.iter().map(f).collect::<Vec<_>>());
        let (s, s_sd) = pick(|r| r.spectral);
        let (f, f_sd) = pick(|r| r.frobenius);
        let (l, l_sd) = pick(|r| r.l1);
        let (h, h_sd) = pick(|r| r.hamming);
        Self {
            reps: reports.len(),
            mean: ErrorReport {
                spectral: s,
                frobenius: f,
                l1: l,
                hamming: h,
            },
            sd: ErrorReport {
                spectral: s_sd,
                frobenius: f_sd,
                l1: l_sd,
                hamming: h_sd,
            },
        }
    }
}

/// Upper-triangle merge of two matrices: `(i, j, a_ij, b_ij)` over the union
/// of their stored entries.
fn merge(a: &SparseSymmetricMatrix, b: &SparseSymmetricMatrix) -> Vec<(usize, usize, f64, f64)> {
    let (ta, tb) = (a.triplets(), b.triplets());
    let mut out = Vec::with_capacity(ta.len().max(tb.len()));
    let (mut x, mut y) = (0, 0);
    while x < ta.len() || y < tb.len() {
        let ka = ta.get(x).map(|t| (t.0, t.1));
        let kb = tb.get(y).map(|t| (t.0, t.1));
        match (ka, kb) {
            (Some(u), Some(v)) if u == v => {
                out.push((u.0, u.1, ta[x].2, tb[y].2));
                x += 1;
                y += 1;
            }
            (Some(u), Some(v)) if u < v => {
                out.push((u.0, u.1, ta[x].2, 0.0));
                x += 1;
            }
            (Some(u), None) => {
                out.push((u.0, u.1, ta[x].2, 0.0));
                x += 1;
            }
            (_, Some(v)) => {
                out.push((v.0, v.1, 0.0, tb[y].2));
                y += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

fn check_dims(a: &SparseSymmetricMatrix, b: &SparseSymmetricMatrix) -> Result<usize> {
    if a.dim() != b.dim() {
        return Err(PcsError::DimensionMismatch {
            expected: b.dim(),
            actual: a.dim(),
        });
    }
    Ok(a.dim())
}

/// `(1/p) #{(i, j) : 1{a_ij != 0} != 1{b_ij != 0}}` over all `p^2` entries.
pub fn hamming_distance(a: &SparseSymmetricMatrix, b: &SparseSymmetricMatrix) -> Result<f64> {
    let p = check_dims(a, b)?;
    let count: usize = merge(a, b)
        .iter()
        .filter(|&&(_, _, x, y)| (x != 0.0) != (y != 0.0))
        .map(|&(i, j, _, _)| if i == j { 1 } else { 2 })
        .sum();
    Ok(count as f64 / p as f64)
}

/// Symmetric matrix in compressed-row form, both triangles stored.
struct Csr {
    start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_upper(p: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut count = vec![0usize; p + 1];
        for &(i, j, _) in entries {
            count[i + 1] += 1;
            if i != j {
                count[j + 1] += 1;
            }
        }
        for k in 0..p {
            count[k + 1] += count[k];
        }
        let mut fill = count.clone();
        let total = count[p];
        let mut cols = vec![0; total];
        let mut vals = vec![0.0; total];
        for &(i, j, v) in entries {
            cols[fill[i]] = j;
            vals[fill[i]] = v;
            fill[i] += 1;
            if i != j {
                cols[fill[j]] = i;
                vals[fill[j]] = v;
                fill[j] += 1;
            }
        }
        Self {
            start: count,
            cols,
            vals,
        }
    }

    fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = (self.start[r]..self.start[r + 1])
                .map(|k| self.vals[k] * x[self.cols[k]])
                .sum();
        }
    }
}

const POWER_MAX_ITER: usize = 1000;
const POWER_TOL: f64 = 1e-8;

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Largest absolute eigenvalue of a symmetric matrix given by its upper
/// triangle, by power iteration on its square.
fn spectral_norm_upper(p: usize, entries: &[(usize, usize, f64)]) -> f64 {
    if entries.iter().all(|e| e.2 == 0.0) {
        return 0.0;
    }
    let m = Csr::from_upper(p, entries);
    let mut mv = vec![0.0; p];
    let mut best = 0.0f64;
    // Second start, used only if the first is orthogonal to the top eigenspace.
    for start in 0..2 {
        let mut v: Vec<f64> = (0..p)
            .map(|k| 1.0 + 0.5 * ((k + 1 + 7 * start) as f64).sin())
            .collect();
        normalize(&mut v);
        let mut estimate = 0.0;
        for _ in 0..POWER_MAX_ITER {
            m.mul(&v, &mut mv);
            let next = mv.iter().map(|x| x * x).sum::<f64>().sqrt();
            m.mul(&mv, &mut v);
            if normalize(&mut v) == 0.0 {
                break;
            }
            let converged = (next - estimate).abs() <= POWER_TOL * next;
            estimate = next;
            if converged {
                break;
            }
        }
        best = best.max(estimate);
        if best > 0.0 {
            break;
        }
    }
    best
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm(m: &SparseSymmetricMatrix) -> f64 {
    spectral_norm_upper(m.dim(), m.triplets())
}

/// Spectral, Frobenius and matrix l1 norms of `a - b`, and the Hamming
/// distance between their supports.
pub fn error_report(a: &SparseSymmetricMatrix, b: &SparseSymmetricMatrix) -> Result<ErrorReport> {
    let p = check_dims(a, b)?;
    let merged = merge(a, b);
    let diff: Vec<(usize, usize, f64)> = merged.iter().map(|&(i, j, x, y)| (i, j, x - y)).collect();
    let mut fro = 0.0;
    let mut col_sums = vec![0.0; p];
    for &(i, j, d) in &diff {
        if i == j {
            fro += d * d;
            col_sums[j] += d.abs();
        } else {
            fro += 2.0 * d * d;
            col_sums[i] += d.abs();
            col_sums[j] += d.abs();
        }
    }
    Ok(ErrorReport {
        spectral: spectral_norm_upper(p, &diff),
        frobenius: fro.sqrt(),
        l1: col_sums.iter().copied().fold(0.0, f64::max),
        hamming: hamming_distance(a, b)?,
    })
}

/// [`error_report`] for an estimate against a dense truth.
pub fn error_report_sparse(
    estimate: &SparseSymmetricMatrix,
    truth: &nalgebra::DMatrix<f64>,
) -> Result<ErrorReport> {
    error_report(estimate, &SparseSymmetricMatrix::from_dense(truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn sym(p: usize, t: &[(usize, usize, f64)]) -> SparseSymmetricMatrix {
        SparseSymmetricMatrix::new(p, t.to_vec()).unwrap()
    }

    #[test]
    fn identical_matrices_have_zero_error() {
        let a = sym(3, &[(0, 0, 1.0), (1, 1, 2.0), (2, 2, 1.0), (0, 2, 0.3)]);
        let r = error_report(&a, &a).unwrap();
        assert_eq!(r, ErrorReport { spectral: 0.0, frobenius: 0.0, l1: 0.0, hamming: 0.0 });
    }

    #[test]
    fn one_missing_pair() {
        let truth = sym(4, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 3, 1.0), (1, 2, 0.4)]);
        let est = SparseSymmetricMatrix::identity(4);
        let r = error_report(&est, &truth).unwrap();
        assert_eq!(r.hamming, 2.0 / 4.0);
        assert!((r.spectral - 0.4).abs() < 1e-10);
        assert!((r.frobenius - (2.0f64 * 0.16).sqrt()).abs() < 1e-15);
        assert_eq!(r.l1, 0.4);
    }

    #[test]
    fn spectral_matches_eigen_decomposition() {
        let d = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, -3.0, 0.5, 0.0, 0.5, 1.0]);
        let expected = d.clone().symmetric_eigenvalues().amax();
        let got = spectral_norm(&SparseSymmetricMatrix::from_dense(&d));
        assert!((got - expected).abs() < 1e-7 * expected, "{got} vs {expected}");
    }

    #[test]
    fn sd_of_single_rep_is_zero() {
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}

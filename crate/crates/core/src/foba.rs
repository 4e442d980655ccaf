//! Forward-backward stepwise selection on the row-regression form of the
//! precision matrix, as a baseline for PCS.
//!
//! Row `i` regresses `x_i` on the other columns. Forward steps add the column
//! with the largest `|x_i' (I - H_S) x_j| / ||x_j||`; after each forward step,
//! previously selected columns are deleted while the cheapest deletion costs at
//! most `backward_factor` times the gain of that forward step. Everything is
//! computed from the Gram matrix `X'X / n`, so a [`CovarianceSource`] is
//! enough.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covsource::{empirical_covariance, CovarianceSource, DataMatrix, DenseCovariance};
use crate::error::{PcsError, Result};
use crate::pcs::{for_each_row, OrderedIndexSet, PcsEstimate, RowEstimate, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FobaConfig {
    pub delta: f64,
    pub max_steps: usize,
    pub backward_factor: f64,
}

impl Default for FobaConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            max_steps: 30,
            backward_factor: 0.5,
        }
    }
}

impl FobaConfig {
    pub fn new(delta: f64, max_steps: usize) -> Self {
        Self {
            delta,
            max_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(PcsError::InvalidInput(format!(
                "delta must be >= 0, got {}",
                self.delta
            )));
        }
        if self.max_steps < 1 {
            return Err(PcsError::InvalidInput("max_steps must be >= 1".into()));
        }
        if !(self.backward_factor > 0.0 && self.backward_factor < 1.0) {
            return Err(PcsError::InvalidInput(format!(
                "backward_factor must lie in (0, 1), got {}",
                self.backward_factor
            )));
        }
        Ok(())
    }
}

/// One move of the forward-backward search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FobaMove {
    /// Forward step: the column added and its objective value.
    Add { index: usize, objective: f64 },
    /// Backward step: the column removed and the objective increase it caused.
    Remove { index: usize, cost: f64 },
}

/// Relative size below which the best forward objective counts as zero.
const NO_SIGNAL: f64 = 1e-10;

/// Ridge least squares of row `i` on the selected set.
struct RowFit {
    beta: DVector<f64>,
    /// Diagonal of `(Sigma[S, S] + delta I)^-1`.
    inv_diag: DVector<f64>,
    /// Penalized objective `Sigma_ii - b' G^-1 b`, with `b = Sigma[S, i]`.
    objective: f64,
}

struct RowProblem<'a> {
    i: usize,
    n: usize,
    delta: f64,
    diag: &'a [f64],
    rows: std::collections::HashMap<usize, Vec<f64>>,
    source: &'a dyn CovarianceSource,
}

impl<'a> RowProblem<'a> {
    fn sigma(&mut self, a: usize, b: usize) -> Result<f64> {
        if !self.rows.contains_key(&a) {
            self.rows.insert(a, self.source.row(a)?);
        }
        Ok(self.rows[&a][b])
    }

    fn fit(&mut self, s: &[usize]) -> Result<RowFit> {
        let k = s.len();
        if k == 0 {
            return Ok(RowFit {
                beta: DVector::zeros(0),
                inv_diag: DVector::zeros(0),
                objective: self.diag[self.i],
            });
        }
        let mut g = DMatrix::zeros(k, k);
        let mut b = DVector::zeros(k);
        for a in 0..k {
            for c in 0..k {
                g[(a, c)] = self.sigma(s[a], s[c])?;
            }
            g[(a, a)] += self.delta;
            b[a] = self.sigma(s[a], self.i)?;
        }
        let scale = g.diagonal().max();
        let chol = g.cholesky().ok_or(PcsError::Singular { size: k })?;
        let l_diag = chol.l_dirty().diagonal();
        let ratio = l_diag.max() / l_diag.min();
        if !(ratio * ratio <= crate::pcs::CONDITION_CAP) || !(scale > 0.0) {
            return Err(PcsError::Singular { size: k });
        }
        let beta = chol.solve(&b);
        let inv_diag = chol.inverse().diagonal();
        let objective = self.diag[self.i] - b.dot(&beta);
        Ok(RowFit {
            beta,
            inv_diag,
            objective,
        })
    }

    /// Forward objectives `|x_i'(I - H_S) x_j| / ||x_j||` of every column, in
    /// data units.
    fn forward_objectives(&mut self, s: &[usize], fit: &RowFit) -> Result<Vec<f64>> {
        for &k in s.iter().chain(std::iter::once(&self.i)) {
            if !self.rows.contains_key(&k) {
                self.rows.insert(k, self.source.row(k)?);
            }
        }
        let mut c = self.rows[&self.i].clone();
        for (a, sa) in s.iter().enumerate() {
            let beta = fit.beta[a];
            for (cj, r) in c.iter_mut().zip(&self.rows[sa]) {
                *cj -= beta * r;
            }
        }
        let n = self.n as f64;
        Ok(c.iter()
            .zip(self.diag)
            .map(|(cj, dj)| (n * cj).abs() / (n * dj).sqrt())
            .collect())
    }
}

/// Forward-backward selection for row `i` of the covariance of `n` samples,
/// returning the row estimate and the sequence of moves.
pub fn foba_row_traced(
    source: &dyn CovarianceSource,
    n: usize,
    i: usize,
    config: &FobaConfig,
) -> Result<(RowEstimate, Vec<FobaMove>)> {
    config.validate()?;
    let p = source.dim();
    if i >= p {
        return Err(PcsError::IndexOutOfRange { index: i, dim: p });
    }
    let mut prob = RowProblem {
        i,
        n,
        delta: config.delta,
        diag: source.diagonals(),
        rows: Default::default(),
        source,
    };
    let mut selected: Vec<usize> = Vec::new();
    let mut moves = Vec::new();
    let mut fit = prob.fit(&selected)?;
    let mut forward_steps = 0;
    let scale = (n as f64 * prob.diag[i]).sqrt();

    while forward_steps < config.max_steps {
        let objectives = prob.forward_objectives(&selected, &fit)?;
        let mut best: Option<(usize, f64)> = None;
        for j in (0..p).filter(|&j| j != i && !selected.contains(&j)) {
            let obj = objectives[j];
            if best.is_none_or(|(_, m)| obj > m) {
                best = Some((j, obj));
            }
        }
        let Some((j, objective)) = best else { break };
        if !(objective > NO_SIGNAL * scale) {
            break;
        }
        selected.push(j);
        let before = fit.objective;
        fit = prob.fit(&selected)?;
        let gain = before - fit.objective;
        forward_steps += 1;
        moves.push(FobaMove::Add { index: j, objective });

        // Backward deletions; the column just added is exempt.
        while selected.len() > 1 {
            let (k, cost) = (0..selected.len() - 1)
                .map(|k| (k, fit.beta[k] * fit.beta[k] / fit.inv_diag[k]))
                .fold((usize::MAX, f64::INFINITY), |acc, (k, c)| {
                    if c < acc.1 {
                        (k, c)
                    } else {
                        acc
                    }
                });
            if !(cost <= config.backward_factor * gain) {
                break;
            }
            let removed = selected.remove(k);
            fit = prob.fit(&selected)?;
            moves.push(FobaMove::Remove {
                index: removed,
                cost,
            });
        }
    }

    // Residual variance of the final (ridge) fit: Sigma_ii - 2 b'beta + beta' Sigma_SS beta.
    let mut rss = prob.diag[i];
    for (a, &sa) in selected.iter().enumerate() {
        rss -= 2.0 * fit.beta[a] * prob.sigma(sa, i)?;
        for (c, &sc) in selected.iter().enumerate() {
            rss += fit.beta[a] * fit.beta[c] * prob.sigma(sa, sc)?;
        }
    }
    if !(rss > NO_SIGNAL * prob.diag[i]) {
        return Err(PcsError::Singular {
            size: selected.len() + 1,
        });
    }
    let diagonal = 1.0 / rss;
    let support = selected
        .iter()
        .enumerate()
        .map(|(a, &j)| (j, -diagonal * fit.beta[a]))
        .collect();
    let mut recruit_order = OrderedIndexSet::new();
    selected.iter().for_each(|&j| {
        recruit_order.push(j);
    });
    let terminated_by = if forward_steps == config.max_steps {
        Termination::StepCap
    } else {
        Termination::Threshold
    };
    Ok((
        RowEstimate {
            row: i,
            support,
            diagonal,
            recruit_order,
            steps_taken: forward_steps,
            terminated_by,
        },
        moves,
    ))
}

/// Forward-backward estimate of row `i` from raw samples.
pub fn foba_row(data: &DataMatrix, i: usize, config: &FobaConfig) -> Result<RowEstimate> {
    let cov = empirical_covariance(data)?;
    foba_row_traced(&cov, data.n(), i, config).map(|(row, _)| row)
}

/// Forward-backward estimate of every row of a covariance source, symmetrized.
pub fn foba_estimate_from_source(
    source: &dyn CovarianceSource,
    n: usize,
    config: &FobaConfig,
    threads: usize,
) -> Result<PcsEstimate> {
    config.validate()?;
    let p = source.dim();
    let rows = for_each_row(p, threads, |i| {
        foba_row_traced(source, n, i, config).map(|(row, _)| row)
    })?;
    Ok(PcsEstimate::from_rows(p, rows))
}

pub fn foba_estimate(data: &DataMatrix, config: &FobaConfig, threads: usize) -> Result<PcsEstimate> {
    let cov: DenseCovariance = empirical_covariance(data)?;
    foba_estimate_from_source(&cov, data.n(), config, threads)
}

/// `|x_i'(I - H_S) x_j| / ||x_j||` computed directly from the samples, with
/// `H_S` the (ridge) projection onto the columns in `s`.
pub fn forward_objective_from_data(
    data: &DataMatrix,
    i: usize,
    j: usize,
    s: &[usize],
    delta: f64,
) -> Result<f64> {
    let n = data.n();
    let x = data.to_dmatrix();
    let xi = x.column(i).into_owned();
    let xj = x.column(j).into_owned();
    let residual = if s.is_empty() {
        xi
    } else {
        let xs = x.select_columns(s);
        let mut g = xs.tr_mul(&xs);
        for a in 0..s.len() {
            g[(a, a)] += n as f64 * delta;
        }
        let beta = g
            .cholesky()
            .ok_or(PcsError::Singular { size: s.len() })?
            .solve(&xs.tr_mul(&xi));
        xi - xs * beta
    };
    Ok(residual.dot(&xj).abs() / xj.norm())
}

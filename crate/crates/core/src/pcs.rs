//! Partial correlation screening.
//!
//! Each row `i` of the precision matrix is estimated independently:
//!
//! 1. **Screen**: greedily recruit the index with the largest regularized
//!    partial correlation with `i`, given everything recruited so far, until
//!    no partial correlation reaches the threshold `q * sqrt(2 log p / n)` or
//!    `max_steps` indices have been recruited.
//! 2. **Clean**: invert the covariance submatrix on `{i} + recruits`, drop
//!    recruits whose entry in the first row falls below the threshold, and
//!    re-invert on the survivors. The first row is the row estimate.
//!
//! The row estimates are then symmetrized. A row only ever touches the
//! covariance diagonals and the rows of `i` and of its recruits.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covsource::CovarianceSource;
use crate::error::{PcsError, Result};
use crate::sparse::SparseSymmetricMatrix;

/// Condition-number cap beyond which an unregularized submatrix is singular.
pub const CONDITION_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcsConfig {
    /// Threshold multiplier `q`.
    pub q: f64,
    /// Ridge parameter; 0 disables regularization.
    pub delta: f64,
    /// Maximum number of recruits per row (`L`).
    pub max_steps: usize,
    /// Slack on the eigenvalue test of the ridge rule.
    pub eig_tol: f64,
}

impl Default for PcsConfig {
    fn default() -> Self {
        Self {
            q: 0.2,
            delta: 0.1,
            max_steps: 30,
            eig_tol: 1e-12,
        }
    }
}

impl PcsConfig {
    pub fn new(q: f64, delta: f64, max_steps: usize) -> Self {
        Self {
            q,
            delta,
            max_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(PcsError::InvalidInput(format!("q must be > 0, got {}", self.q)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(PcsError::InvalidInput(format!(
                "delta must be >= 0, got {}",
                self.delta
            )));
        }
        if self.max_steps < 1 {
            return Err(PcsError::InvalidInput("max_steps must be >= 1".into()));
        }
        if !(self.eig_tol >= 0.0) {
            return Err(PcsError::InvalidInput("eig_tol must be >= 0".into()));
        }
        Ok(())
    }

    pub fn threshold(&self, p: usize, n: usize) -> f64 {
        threshold(self.q, p, n)
    }
}

/// `q * sqrt(2 log(p) / n)`.
pub fn threshold(q: f64, p: usize, n: usize) -> f64 {
    q * (2.0 * (p as f64).ln() / n as f64).sqrt()
}

/// Distinct indices kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderedIndexSet(Vec<usize>);

impl OrderedIndexSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `j`; returns `false` (and leaves the set unchanged) if present.
    pub fn push(&mut self, j: usize) -> bool {
        if self.0.contains(&j) {
            return false;
        }
        self.0.push(j);
        true
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.contains(&j)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    fn truncated(&self, len: usize) -> Self {
        Self(self.0[..len].to_vec())
    }
}

impl TryFrom<Vec<usize>> for OrderedIndexSet {
    type Error = PcsError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        let mut set = Self::new();
        for j in v {
            if !set.push(j) {
                return Err(PcsError::InvalidInput(format!("duplicate index {j}")));
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Threshold,
    StepCap,
}

/// Result of the Screen step for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenOutcome {
    pub recruits: OrderedIndexSet,
    /// Largest `|partial correlation|` seen at each stage. Entry `k` belongs to
    /// the stage that recruited `recruits[k]`; a trailing extra entry, when
    /// present, is the sub-threshold maximum that stopped the screen.
    pub stage_maxima: Vec<f64>,
    pub terminated_by: Termination,
}

impl ScreenOutcome {
    pub fn steps_taken(&self) -> usize {
        self.recruits.len()
    }

    /// The outcome the screen would have produced with a threshold at least as
    /// large as the one used to compute `self`, and at most `max_steps`
    /// recruits. The greedy path does not depend on the threshold, so the
    /// result is a prefix of this one.
    pub fn truncate(&self, threshold: f64, max_steps: usize) -> ScreenOutcome {
        let limit = self.recruits.len().min(max_steps);
        let stop = self.stage_maxima[..limit]
            .iter()
            .position(|&m| m < threshold);
        let (len, terminated_by) = match stop {
            Some(k) => (k, Termination::Threshold),
            None if limit == max_steps => (limit, Termination::StepCap),
            None => (limit, self.terminated_by),
        };
        ScreenOutcome {
            recruits: self.recruits.truncated(len),
            stage_maxima: self.stage_maxima[..(len + 1).min(self.stage_maxima.len())].to_vec(),
            terminated_by,
        }
    }
}

/// One estimated row of the (unsymmetrized) precision matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowEstimate {
    pub row: usize,
    /// Off-diagonal entries `(j, value)`, in recruit order.
    pub support: Vec<(usize, f64)>,
    pub diagonal: f64,
    pub recruit_order: OrderedIndexSet,
    pub steps_taken: usize,
    pub terminated_by: Termination,
}

impl RowEstimate {
    pub fn support_indices(&self) -> Vec<usize> {
        self.support.iter().map(|&(j, _)| j).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PcsEstimate {
    pub matrix: SparseSymmetricMatrix,
    pub rows: Vec<RowEstimate>,
}

impl PcsEstimate {
    pub fn from_rows(p: usize, rows: Vec<RowEstimate>) -> Self {
        let matrix = SparseSymmetricMatrix::symmetrize_rows(
            p,
            rows.iter().map(|r| (r.row, r.diagonal, &r.support[..])),
        );
        Self { matrix, rows }
    }
}

/// `W^-1` if every eigenvalue of `W` is at least `delta` (up to `eig_tol`),
/// otherwise `(W + delta I)^-1`. With `delta = 0` the plain inverse is always
/// used and a matrix whose condition number exceeds [`CONDITION_CAP`] is an
/// error.
pub fn ridge_inverse(w: &DMatrix<f64>, delta: f64, eig_tol: f64) -> Result<DMatrix<f64>> {
    let k = w.nrows();
    if k == 0 || w.ncols() != k {
        return Err(PcsError::InvalidInput(format!(
            "ridge_inverse needs a non-empty square matrix, got {}x{}",
            k,
            w.ncols()
        )));
    }
    let eig = SymmetricEigen::new(w.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    let shift = if delta == 0.0 || lo >= delta - eig_tol {
        0.0
    } else {
        delta
    };
    let (lo, hi) = (lo + shift, hi + shift);
    if !(lo > 0.0) || hi / lo > CONDITION_CAP {
        return Err(PcsError::Singular { size: k });
    }
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (c, lambda) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(c).scale_mut(1.0 / (lambda + shift));
    }
    Ok(scaled * q.transpose())
}

/// Rows fetched for one row task; dropped when the task finishes.
struct RowCache<'a> {
    source: &'a dyn CovarianceSource,
    rows: HashMap<usize, Vec<f64>>,
}

impl<'a> RowCache<'a> {
    fn new(source: &'a dyn CovarianceSource) -> Self {
        Self {
            source,
            rows: HashMap::new(),
        }
    }

    fn load(&mut self, i: usize) -> Result<&[f64]> {
        if !self.rows.contains_key(&i) {
            let row = self.source.row(i)?;
            self.rows.insert(i, row);
        }
        Ok(&self.rows[&i])
    }

    fn get(&self, i: usize) -> &[f64] {
        &self.rows[&i]
    }

    /// `Sigma[W, W]` for indices that are all loaded.
    fn submatrix(&self, w: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(w.len(), w.len(), |a, b| self.get(w[a])[w[b]])
    }
}

fn check_index(i: usize, p: usize) -> Result<()> {
    if i >= p {
        return Err(PcsError::IndexOutOfRange { index: i, dim: p });
    }
    Ok(())
}

/// Regularized partial correlation of `i` and `j` given `s`, computed from the
/// ridge-regularized inverse of the covariance submatrix on `{i} + s + {j}`
/// (in that order).
pub fn partial_correlation(
    source: &dyn CovarianceSource,
    i: usize,
    j: usize,
    s: &OrderedIndexSet,
    delta: f64,
    eig_tol: f64,
) -> Result<f64> {
    let p = source.dim();
    check_index(i, p)?;
    check_index(j, p)?;
    if i == j || s.contains(i) || s.contains(j) {
        return Err(PcsError::InvalidInput(format!(
            "partial correlation needs distinct i = {i}, j = {j} outside the conditioning set"
        )));
    }
    let mut w = vec![i];
    w.extend(s.iter());
    w.push(j);
    let mut cache = RowCache::new(source);
    for &k in &w {
        check_index(k, p)?;
        cache.load(k)?;
    }
    let a = ridge_inverse(&cache.submatrix(&w), delta, eig_tol)?;
    let last = w.len() - 1;
    Ok(-a[(0, last)] / (a[(0, 0)] * a[(last, last)]).sqrt())
}

/// Relative pivot below which a Schur complement counts as zero.
const PIVOT_TOL: f64 = 1.0 / CONDITION_CAP;

/// Incremental Cholesky factor of `Sigma[S, S] + shift I` for the recruited
/// set `S`, together with `y_a = L^-1 Sigma[S, a]` for every index `a`.
///
/// The Schur complement of `S` in `Sigma + shift I` at `(a, b)` is then
/// `Sigma(a, b) + shift [a = b] - <y_a, y_b>`, which gives every partial
/// correlation given `S` in `O(|S|)` time.
struct SchurSystem {
    shift: f64,
    p: usize,
    k: usize,
    /// Column `l` holds coordinate `l` of every `y_a`.
    y: Vec<f64>,
    norms: Vec<f64>,
    /// The row being estimated, and `<y_anchor, y_a>` for every `a`.
    anchor: usize,
    cross: Vec<f64>,
}

impl SchurSystem {
    fn new(p: usize, cap: usize, shift: f64, anchor: usize) -> Self {
        Self {
            shift,
            p,
            k: 0,
            y: vec![0.0; p * cap],
            norms: vec![0.0; p],
            anchor,
            cross: vec![0.0; p],
        }
    }

    fn schur_diag(&self, a: usize, diag: &[f64]) -> f64 {
        diag[a] + self.shift - self.norms[a]
    }

    /// Extends `S` by `r`. Returns `false` when `Sigma[S + r] + shift I` is not
    /// positive definite, after which the system must not be used.
    fn add(&mut self, r: usize, row_r: &[f64], diag: &[f64]) -> bool {
        let pivot = self.schur_diag(r, diag);
        if !(pivot > PIVOT_TOL * (diag[r] + self.shift).abs()) {
            return false;
        }
        let d = pivot.sqrt();
        let (p, k) = (self.p, self.k);
        let (done, rest) = self.y.split_at_mut(k * p);
        let col = &mut rest[..p];
        col.copy_from_slice(row_r);
        for prev in done.chunks_exact(p) {
            let yr = prev[r];
            for (c, v) in col.iter_mut().zip(prev) {
                *c -= yr * v;
            }
        }
        let inv_d = 1.0 / d;
        col.iter_mut().for_each(|c| *c *= inv_d);
        let v_anchor = col[self.anchor];
        for ((norm, cross), v) in self.norms.iter_mut().zip(self.cross.iter_mut()).zip(col.iter()) {
            *norm += v * v;
            *cross += v_anchor * v;
        }
        self.k += 1;
        true
    }
}

/// Screening state for one row: the plain system, and when `delta > 0` the
/// eigenvalue-test system (shift `-(delta - eig_tol)`) and the ridge system
/// (shift `+delta`).
struct Screener {
    i: usize,
    delta: f64,
    plain: Option<SchurSystem>,
    test: Option<SchurSystem>,
    ridge: Option<SchurSystem>,
}

impl Screener {
    fn new(p: usize, i: usize, config: &PcsConfig) -> Self {
        let cap = config.max_steps.min(p);
        let ridged = config.delta > 0.0;
        Self {
            i,
            delta: config.delta,
            plain: Some(SchurSystem::new(p, cap, 0.0, i)),
            test: ridged.then(|| SchurSystem::new(p, cap, -(config.delta - config.eig_tol), i)),
            ridge: ridged.then(|| SchurSystem::new(p, cap, config.delta, i)),
        }
    }

    fn recruit(&mut self, r: usize, row_r: &[f64], diag: &[f64], size: usize) -> Result<()> {
        if self.delta == 0.0 {
            if !self.plain.as_mut().unwrap().add(r, row_r, diag) {
                return Err(PcsError::Singular { size });
            }
            return Ok(());
        }
        // Once Sigma[S, S] has an eigenvalue below delta every larger W does
        // too, so only the ridge system is needed from then on.
        let test_ok = self.test.as_mut().is_some_and(|t| t.add(r, row_r, diag));
        if test_ok {
            self.plain.as_mut().unwrap().add(r, row_r, diag);
        } else {
            self.test = None;
            self.plain = None;
        }
        self.ridge.as_mut().unwrap().add(r, row_r, diag);
        Ok(())
    }

    /// Candidate with the largest `|rho_ij|` among those not `taken`; ties go
    /// to the smallest index.
    fn best_candidate(
        &self,
        row_i: &[f64],
        diag: &[f64],
        taken: &[bool],
        size: usize,
    ) -> Result<Option<(usize, f64)>> {
        let i = self.i;
        let mut best: Option<(usize, f64)> = None;
        let mut consider = |j: usize, rho: f64| {
            let r = rho.abs();
            if best.is_none_or(|(_, m)| r > m) {
                best = Some((j, r));
            }
        };
        let candidates = taken.iter().enumerate().filter(|(_, &t)| !t).map(|(j, _)| j);
        match (&self.plain, &self.test, &self.ridge) {
            (Some(plain), None, None) => {
                let cii = plain.schur_diag(i, diag);
                if !(cii > PIVOT_TOL * diag[i]) {
                    return Err(PcsError::Singular { size });
                }
                for j in candidates {
                    let cjj = plain.schur_diag(j, diag);
                    if !(cjj > PIVOT_TOL * diag[j]) {
                        return Err(PcsError::Singular { size });
                    }
                    consider(j, (row_i[j] - plain.cross[j]) / (cii * cjj).sqrt());
                }
            }
            (Some(plain), Some(test), Some(ridge)) => {
                let (tii, pii, rii) = (
                    test.schur_diag(i, diag),
                    plain.schur_diag(i, diag),
                    ridge.schur_diag(i, diag),
                );
                for j in candidates {
                    let tjj = test.schur_diag(j, diag);
                    let tij = row_i[j] - test.cross[j];
                    let rho = if tii > 0.0 && tjj > 0.0 && tii * tjj - tij * tij > 0.0 {
                        (row_i[j] - plain.cross[j]) / (pii * plain.schur_diag(j, diag)).sqrt()
                    } else {
                        (row_i[j] - ridge.cross[j]) / (rii * ridge.schur_diag(j, diag)).sqrt()
                    };
                    consider(j, rho);
                }
            }
            (None, None, Some(ridge)) => {
                let rii = ridge.schur_diag(i, diag);
                for j in candidates {
                    consider(j, (row_i[j] - ridge.cross[j]) / (rii * ridge.schur_diag(j, diag)).sqrt());
                }
            }
            _ => unreachable!("inconsistent screening systems"),
        }
        Ok(best)
    }
}

fn screen_cached(
    cache: &mut RowCache<'_>,
    i: usize,
    threshold: f64,
    config: &PcsConfig,
) -> Result<ScreenOutcome> {
    let source = cache.source;
    let p = source.dim();
    let diag = source.diagonals();
    let mut screener = Screener::new(p, i, config);
    let mut recruits = OrderedIndexSet::new();
    let mut stage_maxima = Vec::new();
    let mut taken = vec![false; p];
    taken[i] = true;
    cache.load(i)?;

    let terminated_by = loop {
        if recruits.len() >= config.max_steps {
            break Termination::StepCap;
        }
        let size = recruits.len() + 2;
        let row_i = cache.get(i);
        let Some((j, max)) = screener.best_candidate(row_i, diag, &taken, size)? else {
            break Termination::Threshold;
        };
        stage_maxima.push(max);
        if !(max >= threshold) {
            break Termination::Threshold;
        }
        let row_j = cache.load(j)?;
        screener.recruit(j, row_j, diag, size)?;
        recruits.push(j);
        taken[j] = true;
    };
    Ok(ScreenOutcome {
        recruits,
        stage_maxima,
        terminated_by,
    })
}

/// First row of the ridge-regularized inverse of `w`, from Cholesky factors
/// when `delta > 0` and from [`ridge_inverse`] otherwise.
fn ridge_inverse_first_row(w: DMatrix<f64>, delta: f64, eig_tol: f64) -> Result<DVector<f64>> {
    let k = w.nrows();
    if delta == 0.0 {
        return Ok(ridge_inverse(&w, delta, eig_tol)?.row(0).transpose());
    }
    // Sigma[W, W] - (delta - eig_tol) I is positive definite exactly when
    // every eigenvalue of Sigma[W, W] is at least delta - eig_tol.
    let mut test = w.clone();
    for a in 0..k {
        test[(a, a)] -= delta - eig_tol;
    }
    let shift = if test.cholesky().is_some() { 0.0 } else { delta };
    let mut shifted = w;
    for a in 0..k {
        shifted[(a, a)] += shift;
    }
    let chol = shifted.cholesky().ok_or(PcsError::Singular { size: k })?;
    let mut e0 = DVector::zeros(k);
    e0[0] = 1.0;
    Ok(chol.solve(&e0))
}

/// First rows of regularized inverses, keyed by the index list `{i} + S`.
type CleanMemo = HashMap<Vec<usize>, DVector<f64>>;

fn first_row_memo(
    cache: &RowCache<'_>,
    w: &[usize],
    config: &PcsConfig,
    memo: &mut CleanMemo,
) -> Result<DVector<f64>> {
    if let Some(row) = memo.get(w) {
        return Ok(row.clone());
    }
    let row = ridge_inverse_first_row(cache.submatrix(w), config.delta, config.eig_tol)?;
    memo.insert(w.to_vec(), row.clone());
    Ok(row)
}

fn clean_cached(
    cache: &mut RowCache<'_>,
    i: usize,
    recruits: &OrderedIndexSet,
    threshold: f64,
    config: &PcsConfig,
    memo: &mut CleanMemo,
) -> Result<RowEstimate> {
    let mut w = vec![i];
    w.extend(recruits.iter());
    for &k in &w {
        cache.load(k)?;
    }
    let eta = first_row_memo(cache, &w, config, memo)?;
    let mut kept = vec![i];
    kept.extend(
        recruits
            .iter()
            .enumerate()
            .filter(|&(l, _)| eta[l + 1].abs() >= threshold)
            .map(|(_, j)| j),
    );
    let a = first_row_memo(cache, &kept, config, memo)?;
    Ok(RowEstimate {
        row: i,
        support: kept[1..]
            .iter()
            .enumerate()
            .map(|(l, &j)| (j, a[l + 1]))
            .collect(),
        diagonal: a[0],
        recruit_order: recruits.clone(),
        steps_taken: recruits.len(),
        terminated_by: Termination::Threshold,
    })
}

/// Screen step for row `i` of a covariance estimated from `n` samples.
pub fn screen_row(
    source: &dyn CovarianceSource,
    i: usize,
    n: usize,
    config: &PcsConfig,
) -> Result<ScreenOutcome> {
    config.validate()?;
    check_index(i, source.dim())?;
    let mut cache = RowCache::new(source);
    screen_cached(&mut cache, i, config.threshold(source.dim(), n), config)
}

/// Clean step for row `i` given the recruits of the Screen step. The returned
/// estimate reports `recruits.len()` steps and threshold termination; use
/// [`estimate_row`] for the diagnostics of an actual screen.
pub fn clean_row(
    source: &dyn CovarianceSource,
    i: usize,
    recruits: &OrderedIndexSet,
    n: usize,
    config: &PcsConfig,
) -> Result<RowEstimate> {
    config.validate()?;
    let p = source.dim();
    check_index(i, p)?;
    for j in recruits.iter() {
        check_index(j, p)?;
        if j == i {
            return Err(PcsError::InvalidInput(format!("row {i} cannot recruit itself")));
        }
    }
    let mut cache = RowCache::new(source);
    clean_cached(&mut cache, i, recruits, config.threshold(p, n), config, &mut CleanMemo::new())
}

/// Screen and Clean for one row, sharing fetched rows between the two steps.
pub fn estimate_row(
    source: &dyn CovarianceSource,
    i: usize,
    n: usize,
    config: &PcsConfig,
) -> Result<RowEstimate> {
    config.validate()?;
    check_index(i, source.dim())?;
    let t = config.threshold(source.dim(), n);
    let mut cache = RowCache::new(source);
    let screened = screen_cached(&mut cache, i, t, config)?;
    let mut row = clean_cached(&mut cache, i, &screened.recruits, t, config, &mut CleanMemo::new())?;
    row.terminated_by = screened.terminated_by;
    Ok(row)
}

/// Runs `task` for every row, on `threads` workers (0 = rayon's default), and
/// returns the results in row order. The first failing row wins.
pub(crate) fn for_each_row<T, F>(p: usize, threads: usize, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let run = |i: usize| task(i).map_err(|e| e.in_row(i));
    if threads == 1 {
        return (0..p).map(run).collect();
    }
    let collect = || (0..p).into_par_iter().map(run).collect::<Vec<_>>();
    let results = if threads == 0 {
        collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| PcsError::InvalidInput(format!("thread pool: {e}")))?
            .install(collect)
    };
    results.into_iter().collect()
}

/// Estimates the whole precision matrix, row by row, and symmetrizes it.
/// The output does not depend on `threads`.
pub fn estimate_precision(
    source: &dyn CovarianceSource,
    n: usize,
    config: &PcsConfig,
    threads: usize,
) -> Result<PcsEstimate> {
    config.validate()?;
    let p = source.dim();
    let rows = for_each_row(p, threads, |i| estimate_row(source, i, n, config))?;
    Ok(PcsEstimate::from_rows(p, rows))
}

/// Estimates for several values of `q` at once. Each row is screened a single
/// time with the smallest threshold; larger thresholds reuse a prefix of that
/// greedy path. Results are returned in the order of `qs`.
pub fn estimate_precision_grid(
    source: &dyn CovarianceSource,
    n: usize,
    qs: &[f64],
    config: &PcsConfig,
    threads: usize,
) -> Result<Vec<PcsEstimate>> {
    let configs: Vec<PcsConfig> = qs.iter().map(|&q| PcsConfig { q, ..*config }).collect();
    for c in &configs {
        c.validate()?;
    }
    let Some(q_min) = qs.iter().copied().reduce(f64::min) else {
        return Ok(Vec::new());
    };
    let p = source.dim();
    let t_min = threshold(q_min, p, n);
    let per_row = for_each_row(p, threads, |i| {
        let mut cache = RowCache::new(source);
        let path = screen_cached(&mut cache, i, t_min, config)?;
        let mut memo = CleanMemo::new();
        configs
            .iter()
            .map(|c| {
                let t = c.threshold(p, n);
                let screened = path.truncate(t, c.max_steps);
                let mut row = clean_cached(&mut cache, i, &screened.recruits, t, c, &mut memo)?;
                row.terminated_by = screened.terminated_by;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut by_q: Vec<Vec<RowEstimate>> = vec![Vec::with_capacity(p); qs.len()];
    for rows in per_row {
        for (k, row) in rows.into_iter().enumerate() {
            by_q[k].push(row);
        }
    }
    Ok(by_q
        .into_iter()
        .map(|rows| PcsEstimate::from_rows(p, rows))
        .collect())
}

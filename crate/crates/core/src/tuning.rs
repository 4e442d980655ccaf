//! Class-stratified 3-fold splitting in two layers, and the cross-validated
//! choice of `q` for HCT-PCS.
//!
//! Each split instance is one random 3-fold partition of every class; the first
//! fold is the test set and the other two form the training set. When a class
//! size is not divisible by 3 the extra samples go to the earliest folds, so a
//! class of 7 gives folds of sizes 3, 2, 2.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covsource::LabeledData;
use crate::error::{PcsError, Result};
use crate::hct::fit_pcs_grid;
use crate::pcs::PcsConfig;

pub const FOLDS: usize = 3;

/// The classification grid `0.05, 0.10, ..., 0.50`.
pub fn default_q_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 * 0.05).collect()
}

/// Parses `start:stop:step` (inclusive stop) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || PcsError::InvalidInput(format!("invalid grid {spec:?}; use start:stop:step or a,b,c"));
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || !(stop >= start) {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count).map(|k| start + k as f64 * step).collect()
    } else if parts.len() == 1 {
        spec.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?
    } else {
        return Err(bad());
    };
    if grid.is_empty() || grid.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
        return Err(bad());
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInstance {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One data split and the cv splits of its training set. Inner indices are
/// positions within `split.train`, not sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OuterSplit {
    pub split: SplitInstance,
    pub inner: Vec<SplitInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub n: usize,
    pub outer: Vec<OuterSplit>,
}

impl SplitPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Sizes of the 3 folds of `m` items; remainders go to the earliest folds.
pub fn fold_sizes(m: usize) -> [usize; FOLDS] {
    let mut sizes = [m / FOLDS; FOLDS];
    for s in sizes.iter_mut().take(m % FOLDS) {
        *s += 1;
    }
    sizes
}

/// A random class-stratified 3-fold split of positions `0..labels.len()`.
pub fn stratified_split(labels: &[i8], rng: &mut ChaCha8Rng) -> SplitInstance {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [1i8, -1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == class).collect();
        members.shuffle(rng);
        let n_test = fold_sizes(members.len())[0];
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    SplitInstance { train, test }
}

fn check_classes(labels: &[i8], min_per_class: usize) -> Result<()> {
    for class in [1i8, -1] {
        let m = labels.iter().filter(|&&y| y == class).count();
        if m < min_per_class {
            return Err(PcsError::InvalidInput(format!(
                "class {class:+} has {m} samples; at least {min_per_class} are needed for two layers of 3-fold splitting"
            )));
        }
    }
    if let Some(y) = labels.iter().find(|&&y| y != 1 && y != -1) {
        return Err(PcsError::InvalidInput(format!("label {y} is not +1 or -1")));
    }
    Ok(())
}

/// `r_outer` data splits, each with `r_inner` cv splits of its training set.
/// Deterministic in `seed`.
pub fn make_split_plan(labels: &[i8], r_outer: usize, r_inner: usize, seed: u64) -> Result<SplitPlan> {
    if r_outer == 0 {
        return Err(PcsError::InvalidInput("at least one outer split is required".into()));
    }
    // The inner training sets need two samples per class.
    check_classes(labels, if r_inner > 0 { 5 } else { 3 })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer = (0..r_outer)
        .map(|_| {
            let split = stratified_split(labels, &mut rng);
            let train_labels: Vec<i8> = split.train.iter().map(|&k| labels[k]).collect();
            let inner = (0..r_inner)
                .map(|_| stratified_split(&train_labels, &mut rng))
                .collect();
            OuterSplit { split, inner }
        })
        .collect();
    Ok(SplitPlan {
        seed,
        n: labels.len(),
        outer,
    })
}

/// `r` random class-stratified 3-fold splits of all samples.
pub fn make_cv_splits(labels: &[i8], r: usize, seed: u64) -> Result<Vec<SplitInstance>> {
    check_classes(labels, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..r).map(|_| stratified_split(labels, &mut rng)).collect())
}

/// Outcome of the `q` search: the grid (sorted, deduplicated), the mean cv
/// test error of each grid value and the chosen value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSelection {
    pub grid: Vec<f64>,
    pub cv_error: Vec<f64>,
    pub q: f64,
}

/// Picks the `q` with the smallest mean cv test error of HCT-PCS over the
/// `inner` splits of `train`; ties go to the smallest `q`.
pub fn select_q(
    train: &LabeledData,
    grid: &[f64],
    inner: &[SplitInstance],
    config: &PcsConfig,
    alpha0: f64,
    threads: usize,
) -> Result<QSelection> {
    let mut grid: Vec<f64> = grid.to_vec();
    if grid.is_empty() {
        return Err(PcsError::InvalidInput("the q grid is empty".into()));
    }
    if grid.iter().any(|q| !q.is_finite()) {
        return Err(PcsError::InvalidInput("the q grid contains a non-finite value".into()));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if inner.is_empty() {
        return Err(PcsError::InvalidInput("no cv splits to evaluate q on".into()));
    }
    let mut totals = vec![0.0; grid.len()];
    for split in inner {
        let fit_set = train.select_samples(&split.train)?;
        let test_set = train.select_samples(&split.test)?;
        let models = fit_pcs_grid(&fit_set, &grid, config, alpha0, threads)?;
        for (total, model) in totals.iter_mut().zip(&models) {
            *total += model.error_rate(&test_set)?;
        }
    }
    let cv_error: Vec<f64> = totals.iter().map(|t| t / inner.len() as f64).collect();
    let best = (0..grid.len())
        .reduce(|a, b| if cv_error[b] < cv_error[a] { b } else { a })
        .expect("non-empty grid");
    Ok(QSelection {
        q: grid[best],
        grid,
        cv_error,
    })
}

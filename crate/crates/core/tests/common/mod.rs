//! Independent reference computations checked against the library. Shared by
//! the `oracles` tests and the acceptance run.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pcs_core::covsource::{empirical_covariance, DataMatrix, DenseCovariance};
use pcs_core::foba::{foba_row_traced, forward_objective_from_data, FobaConfig, FobaMove};
use pcs_core::hct::{hc_select, hc_threshold, hc_search_range, two_sided_pvalue};
use pcs_core::pcs::{
    clean_row, estimate_row, partial_correlation, ridge_inverse, screen_row, OrderedIndexSet,
    PcsConfig, Termination,
};
use pcs_core::simlab::{generate_precision, max_row_degree, ModelKind, ModelSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Diagonally dominant precision matrix with a few random off-diagonal entries.
fn random_sparse_omega(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut omega: DMatrix<f64> = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            if rng.random::<f64>() < 3.0 / p as f64 {
                let v = rng.random_range(-0.6..0.6);
                omega[(i, j)] = v;
                omega[(j, i)] = v;
            }
        }
    }
    for i in 0..p {
        let off: f64 = (0..p).filter(|&j| j != i).map(|j| omega[(i, j)].abs()).sum();
        omega[(i, i)] = off + rng.random_range(0.3..1.5);
    }
    omega
}

fn random_data(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DataMatrix {
    let values: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    DataMatrix::new(n, p, values).unwrap()
}

fn random_subset(p: usize, exclude: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..p).filter(|j| !exclude.contains(j)).collect();
    pool.shuffle(rng);
    pool.truncate(k);
    pool
}

pub fn inverse_of_superset_submatrix_recovers_precision_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let p = rng.random_range(5..=40);
        let omega = random_sparse_omega(p, &mut rng);
        let sigma = omega.clone().try_inverse().unwrap();
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let i = rng.random_range(0..p);
        let support: Vec<usize> = (0..p).filter(|&j| j != i && omega[(i, j)] != 0.0).collect();
        let extra_count = rng.random_range(0..=(p - 1 - support.len()).min(6));
        let mut exclude = support.clone();
        exclude.push(i);
        let mut others = support.clone();
        others.extend(random_subset(p, &exclude, extra_count, &mut rng));
        others.shuffle(&mut rng);
        let mut w = vec![i];
        w.extend(&others);

        // Direct check of the submatrix inverse.
        let sub = DMatrix::from_fn(w.len(), w.len(), |a, b| sigma[(w[a], w[b])]);
        let inv = ridge_inverse(&sub, 0.0, 1e-12).unwrap();
        for (a, &j) in w.iter().enumerate() {
            assert!(
                (inv[(0, a)] - omega[(i, j)]).abs() < 1e-9,
                "case {case}: entry ({i}, {j}) {} vs {}",
                inv[(0, a)],
                omega[(i, j)]
            );
        }

        // The Clean step on exact covariance returns the same row.
        let source = DenseCovariance::from_dmatrix(&sigma).unwrap();
        let recruits = OrderedIndexSet::try_from(others.clone()).unwrap();
        let config = PcsConfig::new(1e-9, 0.0, 60);
        let row = clean_row(&source, i, &recruits, 1_000_000, &config).unwrap();
        assert!((row.diagonal - omega[(i, i)]).abs() < 1e-9, "case {case}: diagonal");
        for &j in &support {
            let got = row.support.iter().find(|&&(k, _)| k == j).map(|&(_, v)| v);
            let got = got.unwrap_or_else(|| panic!("case {case}: lost support index {j}"));
            assert!((got - omega[(i, j)]).abs() < 1e-9, "case {case}: entry ({i}, {j})");
        }
        for &(j, v) in &row.support {
            assert!((v - omega[(i, j)]).abs() < 1e-9, "case {case}: extra entry ({i}, {j}) = {v}");
        }
    }
}

/// `x_i'(I - H_S) x_j / (||(I - H_S) x_i|| ||(I - H_S) x_j||)` by least squares.
fn residual_partial_correlation(x: &DMatrix<f64>, i: usize, j: usize, s: &[usize]) -> f64 {
    let residual = |k: usize| -> DVector<f64> {
        let xk = x.column(k).into_owned();
        if s.is_empty() {
            return xk;
        }
        let xs = x.select_columns(s);
        let beta = xs.clone().svd(true, true).solve(&xk, 1e-14).unwrap();
        xk - xs * beta
    };
    let (ri, rj) = (residual(i), residual(j));
    ri.dot(&rj) / (ri.norm() * rj.norm())
}

pub fn partial_correlation_matches_residual_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..100 {
        let p = rng.random_range(4..=25);
        let n = rng.random_range(p + 5..=p + 60);
        let data = random_data(n, p, &mut rng);
        let x = data.to_dmatrix();
        let i = rng.random_range(0..p);
        let j = random_subset(p, &[i], 1, &mut rng)[0];
        let k = rng.random_range(0..=(p - 2).min(8));
        let s = random_subset(p, &[i, j], k, &mut rng);
        let cov = empirical_covariance(&data).unwrap();
        let set = OrderedIndexSet::try_from(s.clone()).unwrap();
        let got = partial_correlation(&cov, i, j, &set, 0.0, 1e-12).unwrap();
        let want = residual_partial_correlation(&x, i, j, &s);
        assert!((got - want).abs() < 1e-8, "case {case}: {got} vs {want}");
    }
}

pub fn forward_objective_matches_residual_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..100 {
        let p = rng.random_range(4..=20);
        let n = rng.random_range(p + 5..=p + 40);
        let data = random_data(n, p, &mut rng);
        let x = data.to_dmatrix();
        let i = rng.random_range(0..p);
        let j = random_subset(p, &[i], 1, &mut rng)[0];
        let s = random_subset(p, &[i, j], rng.random_range(0..=(p - 2).min(6)), &mut rng);
        let got = forward_objective_from_data(&data, i, j, &s, 0.0).unwrap();
        let rho = residual_partial_correlation(&x, i, j, &s);
        // |x_i'(I - H) x_j| / ||x_j|| = |rho| ||r_i|| ||r_j|| / ||x_j||
        let resid_norm = |k: usize| {
            let xk = x.column(k).into_owned();
            if s.is_empty() {
                return xk.norm();
            }
            let xs = x.select_columns(&s);
            let beta = xs.clone().svd(true, true).solve(&xk, 1e-14).unwrap();
            (xk - xs * beta).norm()
        };
        let want = rho.abs() * resid_norm(i) * resid_norm(j) / x.column(j).norm();
        assert!((got - want).abs() < 1e-8 * want.max(1.0), "case {case}: {got} vs {want}");
    }
}

pub fn foba_forward_moves_use_the_residual_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..20 {
        let p = rng.random_range(5..=15);
        let n = rng.random_range(p + 10..=p + 50);
        let data = random_data(n, p, &mut rng);
        let cov = empirical_covariance(&data).unwrap();
        let i = rng.random_range(0..p);
        let delta = if case % 2 == 0 { 0.0 } else { 0.1 };
        let config = FobaConfig::new(delta, 4);
        let (_, moves) = foba_row_traced(&cov, n, i, &config).unwrap();
        let mut selected: Vec<usize> = Vec::new();
        for m in moves {
            match m {
                FobaMove::Add { index, objective } => {
                    let best = (0..p)
                        .filter(|&j| j != i && !selected.contains(&j))
                        .map(|j| forward_objective_from_data(&data, i, j, &selected, delta).unwrap())
                        .fold(0.0, f64::max);
                    let want = forward_objective_from_data(&data, i, index, &selected, delta).unwrap();
                    assert!((objective - want).abs() < 1e-8 * want.max(1.0), "case {case}");
                    assert!(objective >= best - 1e-8 * best.max(1.0), "case {case}: not the argmax");
                    selected.push(index);
                }
                FobaMove::Remove { index, .. } => selected.retain(|&j| j != index),
            }
        }
    }
}

pub fn screen_agrees_with_reference_partial_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..30 {
        let p = rng.random_range(5..=18);
        let n = rng.random_range(p + 3..=p + 30);
        let data = random_data(n, p, &mut rng);
        let cov = empirical_covariance(&data).unwrap();
        let delta = [0.0, 0.1, 0.5][case % 3];
        let config = PcsConfig::new(0.05, delta, 6);
        let i = rng.random_range(0..p);
        let out = screen_row(&cov, i, n, &config).unwrap();
        let recruits = out.recruits.as_slice();
        for (stage, &picked) in recruits.iter().enumerate() {
            let s = OrderedIndexSet::try_from(recruits[..stage].to_vec()).unwrap();
            let mut best = (usize::MAX, -1.0);
            for j in (0..p).filter(|&j| j != i && !s.contains(j)) {
                let r = partial_correlation(&cov, i, j, &s, delta, config.eig_tol).unwrap().abs();
                if r > best.1 + 1e-10 {
                    best = (j, r);
                }
            }
            assert!(
                (out.stage_maxima[stage] - best.1).abs() < 1e-10,
                "case {case} stage {stage}: {} vs {}",
                out.stage_maxima[stage],
                best.1
            );
            assert_eq!(picked, best.0, "case {case} stage {stage}");
        }
    }
}

fn idealized_recovery(kind: ModelKind, p: usize) {
    let model = generate_precision(&ModelSpec { kind, p, seed: 0 }).unwrap();
    let s = max_row_degree(model.omega());
    let source = DenseCovariance::from_dmatrix(model.covariance()).unwrap();
    // Exact covariance: a large nominal n puts the threshold far below the
    // smallest true partial correlation.
    let config = PcsConfig::new(1.0, 0.0, 4 * s * s + 5);
    for i in 0..p {
        let row = estimate_row(&source, i, 10_000_000, &config).unwrap();
        let mut got = row.support_indices();
        got.sort_unstable();
        assert_eq!(got, model.row_support(i), "row {i}");
        assert!(row.steps_taken <= 4 * s * s, "row {i}: {} steps", row.steps_taken);
        assert_eq!(row.terminated_by, Termination::Threshold, "row {i}");
        for &(j, v) in &row.support {
            assert!((v - model.omega()[(i, j)]).abs() < 1e-8, "row {i} entry {j}");
        }
    }
}

pub fn idealized_pcs_recovers_tridiagonal_support() {
    idealized_recovery(ModelKind::tridiagonal(), 60);
}

pub fn idealized_pcs_recovers_block_support() {
    idealized_recovery(ModelKind::block3(), 60);
}

/// Exhaustive `HC_{p,j}` maximization with ties to the smallest `j`.
fn brute_force_hc(pvalues: &[f64], alpha0: f64) -> usize {
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p = sorted.len() as f64;
    let range = ((alpha0 * p).floor() as usize).max(1).min(sorted.len() - 1);
    let mut best = (0, f64::NEG_INFINITY);
    for j in 1..=range {
        let f = j as f64 / p;
        let hc = (f - sorted[j - 1]) / (f * (1.0 - f)).sqrt();
        if hc > best.1 {
            best = (j, hc);
        }
    }
    best.0
}

pub fn hc_threshold_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for case in 0..100 {
        let p = rng.random_range(2..=50);
        let alpha0 = [0.2, 0.5, 1.0][case % 3];
        let z: Vec<f64> = (0..p)
            .map(|_| {
                let base: f64 = rng.sample(StandardNormal);
                if rng.random::<f64>() < 0.1 { base + 3.0 } else { base }
            })
            .collect();
        let diag: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..2.0)).collect();
        let pvalues: Vec<f64> = z.iter().zip(&diag).map(|(x, d)| two_sided_pvalue(x / d.sqrt())).collect();
        let want_j = brute_force_hc(&pvalues, alpha0);
        let (threshold, j_hat) = hc_threshold(&z, &diag, alpha0).unwrap();
        assert_eq!(j_hat, want_j, "case {case}");
        let mut mags: Vec<f64> = z.iter().map(|v| v.abs()).collect();
        mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(threshold, mags[want_j - 1], "case {case}");

        let mut sorted = pvalues.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sel = hc_select(&sorted, alpha0).unwrap();
        assert_eq!(sel.values.len(), hc_search_range(p, alpha0));
    }
}

/// Symmetric output, identical results for 1 and 4 workers, and screened
/// partial correlations inside [0, 1] on random data.
pub fn random_instances_keep_invariants() {
    use pcs_core::pcs::estimate_precision;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..40 {
        let p = rng.random_range(5..=40);
        let n = rng.random_range(10..=80);
        let data = random_data(n, p, &mut rng);
        let cov = empirical_covariance(&data).unwrap();
        let config = PcsConfig::new(rng.random_range(0.1..1.5), 0.1, rng.random_range(1..=10));
        let one = estimate_precision(&cov, n, &config, 1).unwrap();
        let four = estimate_precision(&cov, n, &config, 4).unwrap();
        assert_eq!(one.matrix.triplets(), four.matrix.triplets(), "case {case}");
        let dense = one.matrix.to_dense();
        assert_eq!(dense, dense.transpose(), "case {case}");
        for i in 0..p {
            let out = screen_row(&cov, i, n, &config).unwrap();
            assert!(out.stage_maxima.iter().all(|&m| (0.0..=1.0 + 1e-12).contains(&m)), "case {case}");
        }
    }
}

/// Rows fetched from a file-backed store while estimating single rows.
/// Returns the largest count seen, which must not exceed `L + 1`.
pub fn store_fetches_for_one_row() -> Vec<(usize, usize)> {
    use pcs_core::covsource::{build_store, open_store, CovarianceSource};
    use pcs_core::simlab::{sample_gaussian, GaussianSampler};
    let model = generate_precision(&ModelSpec {
        kind: ModelKind::tridiagonal(),
        p: 300,
        seed: 0,
    })
    .unwrap();
    let data = sample_gaussian(&GaussianSampler::from_model(&model), 200, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cov.pcs1");
    build_store(&data, &path).unwrap();
    let store = open_store(&path).unwrap();
    let mut seen = Vec::new();
    for (q, l) in [(1.5, 15), (0.2, 30), (0.05, 8)] {
        for i in [0, 17, 299] {
            store.telemetry().reset();
            let row = estimate_row(&store, i, 200, &PcsConfig::new(q, 0.1, l)).unwrap();
            let touched = store.telemetry().distinct_rows();
            assert!(touched >= row.steps_taken);
            seen.push((l, touched));
        }
    }
    seen
}

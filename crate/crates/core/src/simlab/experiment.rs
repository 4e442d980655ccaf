use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{error_report, mean_sd, ErrorReport, ErrorSummary};
use super::{
    generate_precision, sample_gaussian, sample_two_class, ClassSpec, GaussianSampler, ModelKind,
    ModelSpec,
};
use crate::covsource::{empirical_covariance, CovarianceSource, LabeledData};
use crate::error::{PcsError, Result};
use crate::foba::{foba_estimate_from_source, FobaConfig};
use crate::hct::{fit, OmegaMethod, DEFAULT_ALPHA0};
use crate::pcs::{estimate_precision, PcsConfig};
use crate::sparse::SparseSymmetricMatrix;
use crate::tuning::{default_q_grid, make_split_plan, select_q, SplitPlan};

/// Separates the sampling stream from the model stream of a repetition.
const DATA_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentName {
    #[serde(rename = "1a")]
    E1a,
    #[serde(rename = "1b")]
    E1b,
    #[serde(rename = "1c")]
    E1c,
    #[serde(rename = "2")]
    E2,
}

impl ExperimentName {
    pub fn is_classification(self) -> bool {
        self == ExperimentName::E2
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentName::E1a => "1a",
            ExperimentName::E1b => "1b",
            ExperimentName::E1c => "1c",
            ExperimentName::E2 => "2",
        })
    }
}

impl FromStr for ExperimentName {
    type Err = PcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1a" => Ok(ExperimentName::E1a),
            "1b" => Ok(ExperimentName::E1b),
            "1c" => Ok(ExperimentName::E1c),
            "2" => Ok(ExperimentName::E2),
            _ => Err(PcsError::InvalidInput(format!(
                "unknown experiment {s:?}; expected 1a, 1b, 1c or 2"
            ))),
        }
    }
}

/// Precision estimator, or the classifier built on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Diagonal estimate `1 / Sigma_ii`; nHCT for classification.
    Naive,
    Pcs,
    Foba,
}

impl Method {
    pub fn estimator_name(self) -> &'static str {
        match self {
            Method::Naive => "diagonal",
            Method::Pcs => "PCS",
            Method::Foba => "FoBa",
        }
    }

    pub fn classifier_name(self) -> &'static str {
        match self {
            Method::Naive => "nHCT",
            Method::Pcs => "HCT-PCS",
            Method::Foba => "HCT-FoBa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    pub model: ModelKind,
    pub p: usize,
    pub n: usize,
    /// Repetitions for estimation experiments, data splits for classification.
    pub reps: usize,
    pub seed: u64,
    pub pcs: PcsConfig,
    pub foba: FobaConfig,
    pub methods: Vec<Method>,
    pub epsilon_p: f64,
    pub tau_p: f64,
    /// cv splits per data split.
    pub inner: usize,
    /// Candidate `q` values for HCT-PCS; a single value skips cross validation.
    pub grid: Vec<f64>,
    pub alpha0: f64,
    /// Worker threads, 0 for all available.
    pub threads: usize,
    /// Record wall-clock seconds; otherwise the column is 0 so output is reproducible.
    pub timing: bool,
}

impl ExperimentConfig {
    /// Settings of each experiment at desk scale, or at the largest published
    /// scale when `full_scale` is set.
    pub fn preset(name: ExperimentName, full_scale: bool) -> Self {
        let estimation = |model, desk: (usize, usize), full: (usize, usize), q, l| {
            let (p, n) = if full_scale { full } else { desk };
            ExperimentConfig {
                name,
                model,
                p,
                n,
                reps: 10,
                seed: 0,
                pcs: PcsConfig::new(q, 0.0, l),
                foba: FobaConfig::new(0.0, l),
                methods: vec![Method::Pcs, Method::Foba],
                epsilon_p: 0.1,
                tau_p: 3.5,
                inner: 0,
                grid: vec![q],
                alpha0: DEFAULT_ALPHA0,
                threads: 0,
                timing: false,
            }
        };
        match name {
            ExperimentName::E1a => {
                estimation(ModelKind::tridiagonal(), (1000, 500), (5000, 1000), 1.5, 15)
            }
            ExperimentName::E1b => estimation(ModelKind::block3(), (1500, 500), (4500, 1000), 1.5, 15),
            ExperimentName::E1c => estimation(ModelKind::wigner(), (1000, 500), (5000, 1000), 0.75, 30),
            ExperimentName::E2 => {
                let (p, n) = if full_scale { (5000, 1000) } else { (1000, 400) };
                ExperimentConfig {
                    name,
                    model: ModelKind::tridiagonal(),
                    p,
                    n,
                    reps: 10,
                    seed: 0,
                    pcs: PcsConfig::new(0.2, 0.1, 30),
                    foba: FobaConfig::new(0.1, 30),
                    methods: vec![Method::Naive, Method::Pcs, Method::Foba],
                    epsilon_p: 0.1,
                    tau_p: 3.5,
                    inner: 10,
                    grid: default_q_grid(),
                    alpha0: DEFAULT_ALPHA0,
                    threads: 0,
                    timing: false,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(PcsError::InvalidInput("reps must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(PcsError::InvalidInput("no methods selected".into()));
        }
        if self.n < 2 {
            return Err(PcsError::InvalidInput(format!("n >= 2 required, got {}", self.n)));
        }
        self.pcs.validate()?;
        self.foba.validate()?;
        if self.name.is_classification() {
            if self.n < 15 {
                return Err(PcsError::InvalidInput(format!(
                    "classification needs n >= 15 for two layers of 3-fold splits, got {}",
                    self.n
                )));
            }
            if self.grid.is_empty() {
                return Err(PcsError::InvalidInput("the q grid is empty".into()));
            }
            if self.grid.len() > 1 && self.inner == 0 {
                return Err(PcsError::InvalidInput(
                    "choosing q from a grid needs at least one cv split".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationRecord {
    pub estimator: Method,
    pub rep: usize,
    pub report: ErrorReport,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub classifier: Method,
    pub split: usize,
    pub test_error: f64,
    /// Value of `q` used by HCT-PCS.
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub estimation: Vec<EstimationRecord>,
    pub classification: Vec<ClassificationRecord>,
}

impl ExperimentResults {
    pub fn estimation_summary(&self, method: Method) -> Option<ErrorSummary> {
        let reports: Vec<ErrorReport> = self
            .estimation
            .iter()
            .filter(|r| r.estimator == method)
            .map(|r| r.report)
            .collect();
        (!reports.is_empty()).then(|| ErrorSummary::from_reports(&reports))
    }

    /// Mean, standard deviation and minimum of the test error of a classifier.
    pub fn classification_summary(&self, method: Method) -> Option<(f64, f64, f64)> {
        let errors: Vec<f64> = self
            .classification
            .iter()
            .filter(|r| r.classifier == method)
            .map(|r| r.test_error)
            .collect();
        if errors.is_empty() {
            return None;
        }
        let (mean, sd) = mean_sd(&errors);
        Some((mean, sd, errors.iter().copied().fold(f64::INFINITY, f64::min)))
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let name = self.config.name;
        if name.is_classification() {
            writeln!(w, "experiment,classifier,split,test_error")?;
            for r in &self.classification {
                writeln!(w, "{name},{},{},{}", r.classifier.classifier_name(), r.split, r.test_error)?;
            }
        } else {
            writeln!(w, "experiment,estimator,p,n,rep,spectral,frobenius,l1,hamming,seconds")?;
            for r in &self.estimation {
                let e = &r.report;
                writeln!(
                    w,
                    "{name},{},{},{},{},{},{},{},{},{}",
                    r.estimator.estimator_name(),
                    self.config.p,
                    self.config.n,
                    r.rep,
                    e.spectral,
                    e.frobenius,
                    e.l1,
                    e.hamming,
                    r.seconds
                )?;
            }
        }
        Ok(())
    }

    /// Table of `mean(sd)` cells.
    pub fn summary(&self) -> String {
        let c = &self.config;
        let mut out = format!("experiment {}  p={} n={} reps={} seed={}\n", c.name, c.p, c.n, c.reps, c.seed);
        if c.name.is_classification() {
            out.push_str(&format!("{:<10} {:>16} {:>12}\n", "classifier", "average error %", "best error %"));
            for &m in &c.methods {
                if let Some((mean, sd, best)) = self.classification_summary(m) {
                    out.push_str(&format!(
                        "{:<10} {:>16} {:>12.2}\n",
                        m.classifier_name(),
                        format!("{:.2}({:.2})", 100.0 * mean, 100.0 * sd),
                        100.0 * best
                    ));
                }
            }
            let qs: Vec<String> = self
                .classification
                .iter()
                .filter_map(|r| r.q.map(|q| format!("{q:.2}")))
                .collect();
            if !qs.is_empty() {
                out.push_str(&format!("HCT-PCS q per split: {}\n", qs.join(" ")));
            }
        } else {
            out.push_str(&format!(
                "{:<10} {:>14} {:>14} {:>14} {:>14}\n",
                "estimator", "spectral", "frobenius", "l1", "hamming"
            ));
            for &m in &c.methods {
                if let Some(s) = self.estimation_summary(m) {
                    let cell = |mean: f64, sd: f64| format!("{mean:.2}({sd:.3})");
                    out.push_str(&format!(
                        "{:<10} {:>14} {:>14} {:>14} {:>14}\n",
                        m.estimator_name(),
                        cell(s.mean.spectral, s.sd.spectral),
                        cell(s.mean.frobenius, s.sd.frobenius),
                        cell(s.mean.l1, s.sd.l1),
                        cell(s.mean.hamming, s.sd.hamming)
                    ));
                }
            }
        }
        out
    }
}

/// Runs `task` on `0..count` inside a pool of `threads` workers (0 for the
/// global pool), returning results in index order.
fn run_indexed<T, F>(count: usize, threads: usize, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let collect = || (0..count).into_par_iter().map(&task).collect::<Result<Vec<_>>>();
    if threads == 0 {
        return collect();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PcsError::InvalidInput(format!("thread pool: {e}")))?
        .install(collect)
}

fn seconds_since(start: Instant, timing: bool) -> f64 {
    if timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

fn estimation_rep(config: &ExperimentConfig, rep: usize) -> Result<Vec<EstimationRecord>> {
    let rep_seed = config.seed.wrapping_add(rep as u64);
    let model = generate_precision(&ModelSpec {
        kind: config.model,
        p: config.p,
        seed: rep_seed,
    })?;
    let truth = SparseSymmetricMatrix::from_dense(model.omega());
    let data = sample_gaussian(&GaussianSampler::from_model(&model), config.n, rep_seed ^ DATA_STREAM)?;
    let cov = empirical_covariance(&data)?;
    config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let estimate = match method {
                Method::Naive => SparseSymmetricMatrix::from_diagonal(
                    &cov.diagonals().iter().map(|d| 1.0 / d).collect::<Vec<_>>(),
                ),
                Method::Pcs => estimate_precision(&cov, config.n, &config.pcs, 0)?.matrix,
                Method::Foba => foba_estimate_from_source(&cov, config.n, &config.foba, 0)?.matrix,
            };
            let seconds = seconds_since(start, config.timing);
            Ok(EstimationRecord {
                estimator: method,
                rep,
                report: error_report(&estimate, &truth)?,
                seconds,
            })
        })
        .collect()
}

/// Settings shared by every data split of a classification comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSettings {
    pub methods: Vec<Method>,
    pub pcs: PcsConfig,
    pub foba: FobaConfig,
    /// Candidate `q` values; a single value skips cross validation.
    pub grid: Vec<f64>,
    pub alpha0: f64,
}

/// Trains each classifier on the training part of every data split of `plan`
/// (choosing `q` for HCT-PCS on that split's cv splits) and records its error
/// on the test part. Records are ordered by split, then by method.
pub fn evaluate_splits(
    data: &LabeledData,
    plan: &SplitPlan,
    settings: &ClassifierSettings,
    threads: usize,
) -> Result<Vec<ClassificationRecord>> {
    if plan.n != data.n() {
        return Err(PcsError::InvalidInput(format!(
            "split plan is for {} samples, data has {}",
            plan.n,
            data.n()
        )));
    }
    let per_split = run_indexed(plan.outer.len(), threads, |k| {
        let outer = &plan.outer[k];
        let train = data.select_samples(&outer.split.train)?;
        let test = data.select_samples(&outer.split.test)?;
        settings
            .methods
            .iter()
            .map(|&method| {
                let (omega_method, q) = match method {
                    Method::Naive => (OmegaMethod::Naive, None),
                    Method::Foba => (OmegaMethod::Foba(settings.foba), None),
                    Method::Pcs => {
                        let q = match settings.grid[..] {
                            [q] => q,
                            _ => select_q(&train, &settings.grid, &outer.inner, &settings.pcs, settings.alpha0, 0)?.q,
                        };
                        (OmegaMethod::Pcs(PcsConfig { q, ..settings.pcs }), Some(q))
                    }
                };
                let model = fit(&train, &omega_method, settings.alpha0, 0)?;
                Ok(ClassificationRecord {
                    classifier: method,
                    split: k,
                    test_error: model.error_rate(&test)?,
                    q,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_split.into_iter().flatten().collect())
}

fn classification_run(config: &ExperimentConfig) -> Result<Vec<ClassificationRecord>> {
    let model_spec = ModelSpec {
        kind: config.model,
        p: config.p,
        seed: config.seed,
    };
    let model = generate_precision(&model_spec)?;
    let class_spec = ClassSpec {
        epsilon_p: config.epsilon_p,
        tau_p: config.tau_p,
        model: model_spec,
        seed: config.seed,
    };
    let data = sample_two_class(&class_spec, &model, config.n, config.seed ^ DATA_STREAM)?.data;
    let plan = make_split_plan(data.labels(), config.reps, config.inner, config.seed)?;
    let settings = ClassifierSettings {
        methods: config.methods.clone(),
        pcs: config.pcs,
        foba: config.foba,
        grid: config.grid.clone(),
        alpha0: config.alpha0,
    };
    evaluate_splits(&data, &plan, &settings, config.threads)
}

/// Runs an experiment. Output depends only on the configuration, not on the
/// number of threads.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let (estimation, classification) = if config.name.is_classification() {
        (Vec::new(), classification_run(config)?)
    } else {
        let reps = run_indexed(config.reps, config.threads, |rep| estimation_rep(config, rep))?;
        (reps.into_iter().flatten().collect(), Vec::new())
    };
    Ok(ExperimentResults {
        config: config.clone(),
        estimation,
        classification,
    })
}

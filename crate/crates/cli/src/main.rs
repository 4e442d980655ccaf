use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcs_core::covsource::{build_store, empirical_covariance, open_store, read_store_meta, CovarianceSource};
use pcs_core::foba::{foba_estimate_from_source, FobaConfig};
use pcs_core::hct::{fit, HctModel, OmegaMethod, DEFAULT_ALPHA0};
use pcs_core::io::{read_data_file, read_labels_file, write_labels};
use pcs_core::pcs::{estimate_precision, PcsConfig};
use pcs_core::simlab::{
    evaluate_splits, run_experiment, ClassifierSettings, ExperimentConfig, ExperimentName,
    ExperimentResults, Method,
};
use pcs_core::tuning::{make_cv_splits, make_split_plan, parse_grid, select_q};
use pcs_core::{LabeledData, PcsError};

const DEFAULT_GRID: &str = "0.05:0.5:0.05";

const FORMATS: &str = "\
File formats:
  data CSV      one sample per line, one numeric field per feature; an optional
                header line is skipped
  labels        one label per line: 1 for the positive class, -1 or 0 for the other
  triplets      first line `p <dim> format pcs-triplet-v1` (or foba-), then `i j value` for the
                upper triangle (0-based, i <= j)
  store         binary: \"PCS1\", u32 version, u64 p, then p*p little-endian f64
                rows; `covstore build` adds <store>.meta.json with n and p

Exit status: 0 on success, 2 for input or format errors, 3 for numeric failures
(the message names the failing row).";

#[derive(Parser)]
#[command(name = "pcs", version, about = "Sparse precision matrix estimation and HCT classification", after_help = FORMATS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a sparse precision matrix from samples or a covariance store
    Estimate(EstimateArgs),
    /// Build or inspect an on-disk covariance store
    #[command(subcommand)]
    Covstore(CovstoreCommand),
    /// Train or apply an HCT classifier
    #[command(subcommand)]
    Classify(ClassifyCommand),
    /// Run a simulation experiment (1a, 1b, 1c: estimation; 2: classification)
    Simulate(SimulateArgs),
    /// Compare classifiers over repeated stratified data splits
    Cv(CvArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Estimator {
    Pcs,
    Foba,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassifierMethod {
    Naive,
    Pcs,
    Foba,
}

impl From<ClassifierMethod> for Method {
    fn from(m: ClassifierMethod) -> Self {
        match m {
            ClassifierMethod::Naive => Method::Naive,
            ClassifierMethod::Pcs => Method::Pcs,
            ClassifierMethod::Foba => Method::Foba,
        }
    }
}

#[derive(Args, Clone)]
struct TuningArgs {
    /// Ridge parameter delta
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Maximum number of screening (or forward) steps L per row
    #[arg(long, default_value_t = 30)]
    max_steps: usize,
    /// Worker threads; 0 uses all available cores
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct EstimateArgs {
    /// Samples as CSV (assumed centered; the covariance is X'X / n)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Covariance store to read rows from; built from --input if missing
    #[arg(long)]
    store: Option<PathBuf>,
    /// Sample count behind --store when it has no metadata file
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum, default_value_t = Estimator::Pcs)]
    method: Estimator,
    /// Threshold multiplier q (PCS only)
    #[arg(long, default_value_t = 0.2)]
    q: f64,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Output triplet file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CovstoreCommand {
    /// Stream the empirical covariance of a data CSV into a store
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the dimension, sample count and diagonal range of a store
    Info { store: PathBuf },
}

#[derive(Subcommand)]
enum ClassifyCommand {
    /// Fit an HCT classifier and save it as JSON
    Train(TrainArgs),
    /// Label samples with a saved classifier
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output label file (one +1/-1 per line)
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// How the precision matrix is estimated (naive = identity)
    #[arg(long, value_enum, default_value_t = ClassifierMethod::Pcs)]
    method: ClassifierMethod,
    /// PCS threshold multiplier, or `auto` to choose it by cross validation over --grid
    #[arg(long, default_value = "auto")]
    q: String,
    /// Candidate q values for `--q auto`, as start:stop:step or a,b,c
    #[arg(long, default_value = DEFAULT_GRID)]
    grid: String,
    /// Number of cv splits for `--q auto`
    #[arg(long, default_value_t = 10)]
    cv_splits: usize,
    /// Seed for the cv splits
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// HC search fraction alpha0
    #[arg(long, default_value_t = DEFAULT_ALPHA0)]
    alpha0: f64,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Output model JSON
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    experiment: String,
    /// Dimension (default: the experiment preset)
    #[arg(long)]
    p: Option<usize>,
    /// Sample size (default: the experiment preset)
    #[arg(long)]
    n: Option<usize>,
    /// Repetitions, or data splits for experiment 2
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result CSV
    #[arg(long)]
    out: PathBuf,
    /// Use the largest published (p, n) instead of the desk-scale preset
    #[arg(long)]
    full_scale: bool,
    /// Record wall-clock seconds in the CSV (otherwise 0, keeping output reproducible)
    #[arg(long)]
    timing: bool,
    /// Override the preset q (experiment 2: fixes q instead of cross validation)
    #[arg(long)]
    q: Option<f64>,
    /// Override the preset delta (presets: 0 for 1a-1c, 0.1 for 2)
    #[arg(long)]
    delta: Option<f64>,
    /// Override the preset L (presets: 15 for 1a/1b, 30 for 1c and 2)
    #[arg(long)]
    max_steps: Option<usize>,
    /// cv splits per data split for experiment 2
    #[arg(long, default_value_t = 10)]
    inner: usize,
    /// Candidate q values for experiment 2
    #[arg(long, default_value = DEFAULT_GRID)]
    grid: String,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Candidate q values for HCT-PCS, as start:stop:step or a,b,c
    #[arg(long, default_value = DEFAULT_GRID)]
    grid: String,
    /// Number of data splits
    #[arg(long, default_value_t = 10)]
    outer: usize,
    /// Number of cv splits per data split
    #[arg(long, default_value_t = 10)]
    inner: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Classifiers to compare
    #[arg(long, value_enum, value_delimiter = ',', default_value = "naive,pcs,foba")]
    methods: Vec<ClassifierMethod>,
    /// HC search fraction alpha0
    #[arg(long, default_value_t = DEFAULT_ALPHA0)]
    alpha0: f64,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Result CSV (default: standard output)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the split plan as JSON
    #[arg(long)]
    plan: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>, PcsError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PcsError::InvalidInput(format!("cannot create {}: {e}", path.display())))
}

fn read_labeled(data: &Path, labels: &Path) -> Result<LabeledData, PcsError> {
    let x = read_data_file(data)?;
    let y = read_labels_file(labels)?;
    if x.n() != y.len() {
        return Err(PcsError::InvalidInput(format!(
            "{} has {} samples but {} has {} labels",
            data.display(),
            x.n(),
            labels.display(),
            y.len()
        )));
    }
    LabeledData::new(x, y)
}

fn estimate(args: EstimateArgs) -> Result<(), PcsError> {
    let data = args.input.as_deref().map(read_data_file).transpose()?;
    let source: Box<dyn CovarianceSource> = match (&args.store, &data) {
        (Some(store), data) => {
            if !store.exists() {
                let data = data.as_ref().ok_or_else(|| {
                    PcsError::InvalidInput(format!("{} does not exist and no --input was given", store.display()))
                })?;
                build_store(data, store)?;
            }
            Box::new(open_store(store)?)
        }
        (None, Some(data)) => Box::new(empirical_covariance(data)?),
        (None, None) => return Err(PcsError::InvalidInput("pass --input, --store, or both".into())),
    };
    let n = match (args.n, &args.store, &data) {
        (Some(n), _, _) => n,
        (None, Some(store), data) => match (read_store_meta(store)?, data) {
            (Some(meta), _) => meta.n,
            (None, Some(data)) => data.n(),
            (None, None) => {
                return Err(PcsError::InvalidInput(format!(
                    "{} has no metadata file; pass --n",
                    store.display()
                )))
            }
        },
        (None, None, Some(data)) => data.n(),
        (None, None, None) => unreachable!(),
    };
    let t = &args.tuning;
    let (estimate, tag) = match args.method {
        Estimator::Pcs => (
            estimate_precision(source.as_ref(), n, &PcsConfig::new(args.q, t.delta, t.max_steps), t.threads)?,
            "pcs-triplet-v1",
        ),
        Estimator::Foba => (
            foba_estimate_from_source(source.as_ref(), n, &FobaConfig::new(t.delta, t.max_steps), t.threads)?,
            "foba-triplet-v1",
        ),
    };
    let mut w = create(&args.out)?;
    estimate.matrix.write_triplets(&mut w, tag)?;
    w.flush()?;
    eprintln!(
        "p = {}, {} nonzeros, {} rows fetched",
        estimate.matrix.dim(),
        estimate.matrix.nnz(),
        source.telemetry().total()
    );
    Ok(())
}

fn covstore(cmd: CovstoreCommand) -> Result<(), PcsError> {
    match cmd {
        CovstoreCommand::Build { input, out } => {
            let data = read_data_file(&input)?;
            build_store(&data, &out)?;
            println!("p = {}, n = {}", data.p(), data.n());
        }
        CovstoreCommand::Info { store } => {
            let s = open_store(&store)?;
            let diag = s.diagonals();
            let lo = diag.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            println!("p = {}", s.dim());
            match read_store_meta(&store)? {
                Some(meta) => println!("n = {}", meta.n),
                None => println!("n = unknown (no metadata file)"),
            }
            println!("bytes = {}", std::fs::metadata(&store)?.len());
            println!("diagonal range = [{lo}, {hi}]");
        }
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), PcsError> {
    let data = read_labeled(&args.data, &args.labels)?;
    let t = &args.tuning;
    let method = match args.method {
        ClassifierMethod::Naive => OmegaMethod::Naive,
        ClassifierMethod::Foba => {
            if args.q != "auto" {
                eprintln!("note: --q does not apply to foba");
            }
            OmegaMethod::Foba(FobaConfig::new(t.delta, t.max_steps))
        }
        ClassifierMethod::Pcs => {
            let base = PcsConfig::new(PcsConfig::default().q, t.delta, t.max_steps);
            let q = if args.q == "auto" {
                let grid = parse_grid(&args.grid)?;
                let splits = make_cv_splits(data.labels(), args.cv_splits, args.seed)?;
                let sel = select_q(&data, &grid, &splits, &base, args.alpha0, t.threads)?;
                for (q, e) in sel.grid.iter().zip(&sel.cv_error) {
                    eprintln!("q = {q:.4}  cv error = {e:.4}");
                }
                eprintln!("selected q = {}", sel.q);
                sel.q
            } else {
                args.q.parse::<f64>().map_err(|_| {
                    PcsError::InvalidInput(format!("--q expects a number or `auto`, got {:?}", args.q))
                })?
            };
            OmegaMethod::Pcs(PcsConfig { q, ..base })
        }
    };
    let model = fit(&data, &method, args.alpha0, t.threads)?;
    let mut w = create(&args.model)?;
    w.write_all(model.to_json()?.as_bytes())?;
    w.flush()?;
    eprintln!(
        "{}: {} features selected, training error {:.4}",
        method.name(),
        model.weights.iter().filter(|&&w| w != 0).count(),
        model.error_rate(&data)?
    );
    Ok(())
}

fn predict(model: &Path, data: &Path, out: &Path) -> Result<(), PcsError> {
    let text = std::fs::read_to_string(model)
        .map_err(|e| PcsError::InvalidInput(format!("cannot read {}: {e}", model.display())))?;
    let model = HctModel::from_json(&text)
        .map_err(|e| PcsError::InvalidInput(format!("{} is not a model file: {e}", model.display())))?;
    let x = read_data_file(data)?;
    let labels = model.classify_batch(&x)?;
    let mut w = create(out)?;
    write_labels(&mut w, &labels)?;
    w.flush()?;
    Ok(())
}

fn write_results(results: &ExperimentResults, out: &Path) -> Result<(), PcsError> {
    let mut w = create(out)?;
    results.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), PcsError> {
    let name: ExperimentName = args.experiment.parse()?;
    if args.full_scale {
        eprintln!("warning: full-scale presets use p up to 5000; expect hours of run time and several GB of memory");
    }
    let mut config = ExperimentConfig::preset(name, args.full_scale);
    config.p = args.p.unwrap_or(config.p);
    config.n = args.n.unwrap_or(config.n);
    config.reps = args.reps;
    config.seed = args.seed;
    config.threads = args.threads;
    config.timing = args.timing;
    if let Some(delta) = args.delta {
        config.pcs.delta = delta;
        config.foba.delta = delta;
    }
    if let Some(l) = args.max_steps {
        config.pcs.max_steps = l;
        config.foba.max_steps = l;
    }
    if name.is_classification() {
        config.inner = args.inner;
        config.grid = parse_grid(&args.grid)?;
    }
    if let Some(q) = args.q {
        config.pcs.q = q;
        config.grid = vec![q];
    }
    let results = run_experiment(&config)?;
    write_results(&results, &args.out)?;
    print!("{}", results.summary());
    Ok(())
}

fn cv(args: CvArgs) -> Result<(), PcsError> {
    let data = read_labeled(&args.data, &args.labels)?;
    let plan = make_split_plan(data.labels(), args.outer, args.inner, args.seed)?;
    if let Some(path) = &args.plan {
        let mut w = create(path)?;
        w.write_all(plan.to_json()?.as_bytes())?;
        w.flush()?;
    }
    let t = &args.tuning;
    let settings = ClassifierSettings {
        methods: args.methods.iter().map(|&m| m.into()).collect(),
        pcs: PcsConfig::new(PcsConfig::default().q, t.delta, t.max_steps),
        foba: FobaConfig::new(t.delta, t.max_steps),
        grid: parse_grid(&args.grid)?,
        alpha0: args.alpha0,
    };
    let records = evaluate_splits(&data, &plan, &settings, t.threads)?;
    let mut config = ExperimentConfig::preset(ExperimentName::E2, false);
    config.p = data.p();
    config.n = data.n();
    config.reps = args.outer;
    config.seed = args.seed;
    config.methods = settings.methods.clone();
    let results = ExperimentResults {
        config,
        estimation: Vec::new(),
        classification: records,
    };
    match &args.out {
        Some(out) => write_results(&results, out)?,
        None => results.write_csv(&mut io::stdout().lock())?,
    }
    let summary = results.summary();
    // The first line describes the simulation preset, not the user's data.
    for line in summary.lines().skip(1) {
        eprintln!("{line}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), PcsError> {
    match cli.command {
        Command::Estimate(args) => estimate(args),
        Command::Covstore(cmd) => covstore(cmd),
        Command::Classify(ClassifyCommand::Train(args)) => train(args),
        Command::Classify(ClassifyCommand::Predict { model, data, out }) => predict(&model, &data, &out),
        Command::Simulate(args) => simulate(args),
        Command::Cv(args) => cv(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

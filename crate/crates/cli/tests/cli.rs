use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcs_core::covsource::DataMatrix;
use pcs_core::io::write_data_csv;
use pcs_core::simlab::{
    generate_precision, sample_gaussian, sample_two_class, ClassSpec, GaussianSampler, ModelKind,
    ModelSpec,
};
use tempfile::TempDir;

fn pcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcs"))
        .args(args)
        .output()
        .expect("run pcs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_csv(path: &Path, data: &DataMatrix) {
    let mut buf = Vec::new();
    write_data_csv(&mut buf, data).unwrap();
    fs::write(path, buf).unwrap();
}

fn tridiagonal_csv(dir: &TempDir, p: usize, n: usize, seed: u64) -> PathBuf {
    let model = generate_precision(&ModelSpec {
        kind: ModelKind::tridiagonal(),
        p,
        seed: 0,
    })
    .unwrap();
    let x = sample_gaussian(&GaussianSampler::from_model(&model), n, seed).unwrap();
    let path = dir.path().join(format!("data_{p}_{n}_{seed}.csv"));
    write_csv(&path, &x);
    path
}

/// Two-class data with a strong mean shift; returns (data, labels).
fn labeled_files(dir: &TempDir, p: usize, n: usize) -> (PathBuf, PathBuf) {
    let spec = ModelSpec {
        kind: ModelKind::tridiagonal(),
        p,
        seed: 0,
    };
    let model = generate_precision(&spec).unwrap();
    let class = ClassSpec {
        epsilon_p: 0.2,
        tau_p: 12.0,
        model: spec,
        seed: 1,
    };
    let sample = sample_two_class(&class, &model, n, 2).unwrap();
    let data = dir.path().join("train.csv");
    write_csv(&data, sample.data.data());
    let labels = dir.path().join("labels.txt");
    let text: String = sample.data.labels().iter().map(|y| format!("{y}\n")).collect();
    fs::write(&labels, text).unwrap();
    (data, labels)
}

#[test]
fn identity_data_gives_two_diagonal_entries() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("id.csv");
    fs::write(&input, "x1,x2\n1,0\n0,1\n-1,0\n0,-1\n").unwrap();
    let out = dir.path().join("omega.triplets");
    let run = pcs(&["estimate", "--input", s(&input), "--out", s(&out)]);
    assert!(run.status.success(), "{}", stderr(&run));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "p 2 format pcs-triplet-v1");
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[1].starts_with("0 0 "));
    assert!(lines[2].starts_with("1 1 "));
}

#[test]
fn estimate_output_is_reproducible_across_threads_and_sources() {
    let dir = TempDir::new().unwrap();
    let input = tridiagonal_csv(&dir, 60, 150, 3);
    let a = dir.path().join("a.triplets");
    let b = dir.path().join("b.triplets");
    let c = dir.path().join("c.triplets");
    let store = dir.path().join("cov.pcs1");
    let common = ["--q", "1.0", "--delta", "0"];
    let run = |extra: &[&str], out: &Path| {
        let mut args = vec!["estimate"];
        args.extend(extra);
        args.extend(common);
        args.extend(["--out", s(out)]);
        let r = pcs(&args);
        assert!(r.status.success(), "{}", stderr(&r));
    };
    run(&["--input", s(&input), "--threads", "1"], &a);
    run(&["--input", s(&input), "--threads", "3"], &b);
    run(&["--input", s(&input), "--store", s(&store)], &c);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(store.exists());

    // The store alone is enough once built; n comes from its metadata.
    let d = dir.path().join("d.triplets");
    run(&["--store", s(&store)], &d);
    assert_eq!(fs::read(&c).unwrap(), fs::read(&d).unwrap());
    let pcs_lines = fs::read_to_string(&a).unwrap().lines().count();
    assert_eq!(pcs_lines, fs::read_to_string(&c).unwrap().lines().count());
}

#[test]
fn foba_estimate_runs() {
    let dir = TempDir::new().unwrap();
    let input = tridiagonal_csv(&dir, 20, 80, 4);
    let out = dir.path().join("f.triplets");
    let run = pcs(&["estimate", "--input", s(&input), "--method", "foba", "--max-steps", "4", "--out", s(&out)]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(fs::read_to_string(&out).unwrap().starts_with("p 20 format foba-triplet-v1\n"));
}

#[test]
fn covstore_build_and_info() {
    let dir = TempDir::new().unwrap();
    let input = tridiagonal_csv(&dir, 10, 30, 5);
    let store = dir.path().join("cov.pcs1");
    let run = pcs(&["covstore", "build", "--input", s(&input), "--out", s(&store)]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(fs::metadata(&store).unwrap().len(), 16 + 8 * 100);
    let info = pcs(&["covstore", "info", s(&store)]);
    assert!(info.status.success());
    let text = stdout(&info);
    assert!(text.contains("p = 10") && text.contains("n = 30"), "{text}");

    fs::write(&store, b"garbage").unwrap();
    let bad = pcs(&["covstore", "info", s(&store)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn train_and_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let (data, labels) = labeled_files(&dir, 40, 120);
    let model = dir.path().join("model.json");
    let train = pcs(&[
        "classify", "train", "--data", s(&data), "--labels", s(&labels), "--model", s(&model),
        "--cv-splits", "3", "--grid", "0.1,0.3", "--seed", "4",
    ]);
    assert!(train.status.success(), "{}", stderr(&train));
    assert!(stderr(&train).contains("selected q = "));

    let out = dir.path().join("pred.txt");
    let predict = pcs(&["classify", "predict", "--model", s(&model), "--data", s(&data), "--out", s(&out)]);
    assert!(predict.status.success(), "{}", stderr(&predict));
    let predicted = fs::read_to_string(&out).unwrap();
    let truth = fs::read_to_string(&labels).unwrap();
    let wrong = predicted.lines().zip(truth.lines()).filter(|(a, b)| a != b).count();
    assert_eq!(predicted.lines().count(), 120);
    assert!(wrong < 12, "{wrong} training mistakes");

    // Same command line, same model file.
    let again = dir.path().join("model2.json");
    let train2 = pcs(&[
        "classify", "train", "--data", s(&data), "--labels", s(&labels), "--model", s(&again),
        "--cv-splits", "3", "--grid", "0.1,0.3", "--seed", "4",
    ]);
    assert!(train2.status.success());
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());

    for method in ["naive", "foba"] {
        let m = dir.path().join(format!("{method}.json"));
        let r = pcs(&[
            "classify", "train", "--data", s(&data), "--labels", s(&labels), "--method", method,
            "--max-steps", "3", "--model", s(&m),
        ]);
        assert!(r.status.success(), "{method}: {}", stderr(&r));
        assert!(!stderr(&r).contains("does not apply"));
    }
}

#[test]
fn predict_with_wrong_dimension_names_both() {
    let dir = TempDir::new().unwrap();
    let (data, labels) = labeled_files(&dir, 12, 60);
    let model = dir.path().join("model.json");
    let train = pcs(&[
        "classify", "train", "--data", s(&data), "--labels", s(&labels), "--q", "0.3", "--model", s(&model),
    ]);
    assert!(train.status.success(), "{}", stderr(&train));
    let other = tridiagonal_csv(&dir, 9, 5, 1);
    let out = dir.path().join("pred.txt");
    let run = pcs(&["classify", "predict", "--model", s(&model), "--data", s(&other), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(2));
    let msg = stderr(&run);
    assert!(msg.contains("12") && msg.contains('9'), "{msg}");
    assert_eq!(msg.trim_end().lines().count(), 1, "{msg}");
}

#[test]
fn input_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,oops\n").unwrap();
    let out = dir.path().join("o.triplets");
    let run = pcs(&["estimate", "--input", s(&bad), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).starts_with("error: "), "{}", stderr(&run));

    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "1,2\n3\n").unwrap();
    assert_eq!(pcs(&["estimate", "--input", s(&ragged), "--out", s(&out)]).status.code(), Some(2));

    let missing = pcs(&["estimate", "--input", "/nonexistent/x.csv", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));

    assert_eq!(pcs(&["estimate", "--bogus"]).status.code(), Some(2));
    assert_eq!(pcs(&["simulate", "--experiment", "9", "--out", s(&out)]).status.code(), Some(2));

    let (data, _) = labeled_files(&dir, 6, 30);
    let short = dir.path().join("short.txt");
    fs::write(&short, "1\n-1\n").unwrap();
    let model = dir.path().join("m.json");
    let r = pcs(&["classify", "train", "--data", s(&data), "--labels", s(&short), "--model", s(&model)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("30 samples but"), "{}", stderr(&r));
}

#[test]
fn singular_covariance_exits_with_3() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("dup.csv");
    // Columns 0 and 1 are identical.
    let rows: String = (0..12)
        .map(|k| {
            let a = (k as f64 * 1.7).sin();
            let b = (k as f64 * 0.9).cos();
            format!("{a},{a},{b}\n")
        })
        .collect();
    fs::write(&input, rows).unwrap();
    let out = dir.path().join("o.triplets");
    let run = pcs(&["estimate", "--input", s(&input), "--delta", "0", "--q", "0.01", "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(3), "{}", stderr(&run));
    assert!(stderr(&run).contains("row"), "{}", stderr(&run));
}

#[test]
fn simulate_is_byte_identical_across_threads() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = |out: &Path, threads: &'static str| {
        vec![
            "simulate".to_string(), "--experiment".into(), "1a".into(), "--p".into(), "60".into(),
            "--n".into(), "100".into(), "--reps".into(), "3".into(), "--seed".into(), "7".into(),
            "--threads".into(), threads.into(), "--out".into(), s(out).into(),
        ]
    };
    let run_a = Command::new(env!("CARGO_BIN_EXE_pcs")).args(args(&a, "1")).output().unwrap();
    let run_b = Command::new(env!("CARGO_BIN_EXE_pcs")).args(args(&b, "3")).output().unwrap();
    assert!(run_a.status.success(), "{}", stderr(&run_a));
    assert!(run_b.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(run_a.stdout, run_b.stdout);
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("experiment,estimator,p,n,rep,"));
    assert_eq!(text.lines().count(), 1 + 3 * 2);
}

#[test]
fn simulate_classification_small() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("e2.csv");
    let run = pcs(&[
        "simulate", "--experiment", "2", "--p", "60", "--n", "60", "--reps", "2", "--inner", "2",
        "--grid", "0.1,0.3", "--max-steps", "5", "--out", s(&out),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("experiment,classifier,split,test_error\n"), "{text}");
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}

#[test]
fn cv_writes_plan_and_results() {
    let dir = TempDir::new().unwrap();
    let (data, labels) = labeled_files(&dir, 20, 60);
    let plan = dir.path().join("plan.json");
    let run = pcs(&[
        "cv", "--data", s(&data), "--labels", s(&labels), "--outer", "2", "--inner", "2",
        "--grid", "0.1,0.4", "--methods", "naive,pcs", "--seed", "3", "--plan", s(&plan),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let text = stdout(&run);
    assert!(text.starts_with("experiment,classifier,split,test_error\n"), "{text}");
    assert_eq!(text.lines().count(), 1 + 2 * 2);
    let json = fs::read_to_string(&plan).unwrap();
    assert!(json.contains("\"outer\"") && json.contains("\"seed\": 3"));
}

#[test]
fn help_documents_defaults() {
    let top = stdout(&pcs(&["--help"]));
    assert!(top.contains("File formats") && top.contains("Exit status"), "{top}");
    let estimate = stdout(&pcs(&["estimate", "--help"]));
    assert!(estimate.contains("[default: 0.1]") && estimate.contains("[default: 30]"), "{estimate}");
    let train = stdout(&pcs(&["classify", "train", "--help"]));
    for d in ["[default: auto]", "[default: 0.05:0.5:0.05]", "[default: 0.2]", "[default: 0.1]", "[default: 30]"] {
        assert!(train.contains(d), "missing {d} in\n{train}");
    }
    let cv = stdout(&pcs(&["cv", "--help"]));
    assert!(cv.contains("[default: 0.05:0.5:0.05]") && cv.contains("[default: 10]"), "{cv}");
    let simulate = stdout(&pcs(&["simulate", "--help"]));
    assert!(simulate.contains("--full-scale") && simulate.contains("[default: 10]"), "{simulate}");
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vennpred(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vennpred"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn gen_writes_data_and_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    ok(&vennpred(&["gen", "--n", "162", "--seed", "4"], dir.path()));
    let data = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let mut lines = data.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 35);
    assert_eq!(header[0], "x0");
    assert_eq!(lines.count(), 162);
    let probs = fs::read_to_string(dir.path().join("true_probs.csv")).unwrap();
    assert_eq!(probs.lines().count(), 163);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn online_trace_and_replay_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&vennpred(
        &["online", "--synthetic-n", "40", "--synthetic-seed", "2", "--lambda", "2", "--mode", "mo"],
        &first,
    ));
    let trace = fs::read_to_string(first.join("trace.csv")).unwrap();
    assert!(trace.starts_with("n,err,E_n,LEP_n,UEP_n\n"));
    assert_eq!(trace.lines().count(), 36);
    let svg = fs::read_to_string(first.join("curves.svg")).unwrap();
    assert!(svg.contains("stroke-dasharray"));

    let second = dir.path().join("second");
    let manifest = first.join("manifest.json");
    let replay = Command::new(env!("CARGO_BIN_EXE_vennpred"))
        .args(["replay", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&second)
        .output()
        .unwrap();
    ok(&replay);
    for f in ["trace.csv", "curves.svg", "manifest.json"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f} differs after replay"
        );
    }
}

#[test]
fn ann_online_reports_pvalue() {
    let dir = tempfile::tempdir().unwrap();
    ok(&vennpred(&["online", "--synthetic-n", "30", "--predictor", "ann"], dir.path()));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("n,err,E_n,EP_n\n"));
    let p: f64 = fs::read_to_string(dir.path().join("pvalue.txt")).unwrap().trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn batch_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(&vennpred(&["gen", "--n", "60", "--seed", "1", "--dim", "4"], dir.path()));
    let csv = dir.path().join("data.csv");
    let out = dir.path().join("batch");
    ok(&vennpred(
        &[
            "batch",
            "--data",
            csv.to_str().unwrap(),
            "--folds",
            "3",
            "--repeats",
            "2",
            "--theta",
            "0.2",
            "--features",
            "0,1",
        ],
        &out,
    ));
    let pooled = fs::read_to_string(out.join("pooled.csv")).unwrap();
    let header = pooled.lines().next().unwrap();
    for col in ["config", "sensitivity", "specificity", "cross_entropy", "brier", "reliability"] {
        assert!(header.contains(col), "{header}");
    }
    assert_eq!(fs::read_to_string(out.join("per_run.csv")).unwrap().lines().count(), 3);
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"command\": \"batch\""));
}

#[test]
fn featsel_scores_every_feature() {
    let dir = tempfile::tempdir().unwrap();
    ok(&vennpred(&["featsel", "--synthetic-n", "100", "--criterion", "ig"], dir.path()));
    let scores = fs::read_to_string(dir.path().join("feature_scores.csv")).unwrap();
    assert!(scores.starts_with("index,chi2,info_gain,retained\n"));
    assert_eq!(scores.lines().count(), 35);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let usage = vennpred(&["online", "--synthetic-n", "30", "--predictor", "ann", "--lambda", "4"], dir.path());
    assert_eq!(usage.status.code(), Some(1));
    let usage = vennpred(&["batch", "--synthetic-n", "30", "--lambda", "1"], dir.path());
    assert_eq!(usage.status.code(), Some(1));
    let usage = vennpred(&["batch", "--bogus"], dir.path());
    assert_eq!(usage.status.code(), Some(1));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,0,1\n0,oops,0\n").unwrap();
    let data = vennpred(&["batch", "--data", bad.to_str().unwrap()], dir.path());
    assert_eq!(data.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&data.stderr).contains("row 2"));
    let missing = vennpred(&["batch", "--data", "/nonexistent/x.csv"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_vennpred"))
        .args(["gen", "--n", "20"])
        .env("VENNPRED_OUT", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("data.csv").exists());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn usneedle(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_usneedle"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        let o = usneedle(&["--seed", "7", "--out", d, "simulate"], tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = dir_bytes(&tmp.path().join("a"));
    assert_eq!(a, dir_bytes(&tmp.path().join("b")));
    assert!(a.iter().any(|(n, _)| n == "poses.json") && a.iter().any(|(n, _)| n == "gt.json"));
    assert_eq!(a.iter().filter(|(n, _)| n.ends_with(".pgm")).count(), 50);
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), r#"{"simulate": {"mode": "transverse", "poses": []}}"#).unwrap();
    let o = usneedle(&["--config", "bad.json", "simulate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    fs::write(tmp.path().join("mon.json"), r#"{"monitor": {"t_mis": 1.5}}"#).unwrap();
    assert_eq!(usneedle(&["--config", "mon.json", "experiment"], tmp.path()).status.code(), Some(2));
    fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(usneedle(&["detect", "empty"], tmp.path()).status.code(), Some(2));
    assert_eq!(usneedle(&["--jobs", "0", "simulate"], tmp.path()).status.code(), Some(2));
}

#[test]
fn detect_clean_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(usneedle(&["--out", "sweep", "simulate"], tmp.path()).status.success());
    let o = usneedle(&["--out", "det", "detect", "sweep"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(tmp.path().join("det/metrics.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 51);
    for row in &rows[..50] {
        let iou: f64 = row[2].parse().unwrap();
        assert!(iou >= 0.95);
    }
    assert_eq!(&rows[50][0], "summary");
    let det: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("det/detections.json")).unwrap()).unwrap();
    assert_eq!(det.as_array().unwrap().len(), 50);
}

#[test]
fn degraded_sweep_reports_continuity_in_range() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("deg.json"), r#"{"simulate": {"degradation": {}}}"#).unwrap();
    assert!(usneedle(&["--config", "deg.json", "--out", "sweep", "simulate"], tmp.path()).status.success());
    assert!(usneedle(&["--out", "det", "detect", "sweep"], tmp.path()).status.success());
    let mut r = csv::Reader::from_path(tmp.path().join("det/metrics.csv")).unwrap();
    for row in r.records().map(|x| x.unwrap()).filter(|r| &r[0] != "summary") {
        if let Ok(c) = row[5].parse::<f64>() {
            assert!((0.0..=1.0).contains(&c));
        }
    }
}

#[test]
fn single_cell_experiment_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("cell.json"),
        r#"{"experiment": {"thetas_deg": [5.0], "shifts_mm": [0.0], "trials": 5}}"#,
    )
    .unwrap();
    for d in ["a", "b"] {
        let o = usneedle(&["--config", "cell.json", "--seed", "3", "--out", d, "experiment"], tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read_to_string(tmp.path().join("a/results.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(tmp.path().join("b/results.csv")).unwrap());
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "d_theta_inj,d_p_inj,trial,success,e_p_mm,e_theta_deg,frames_to_restore");
    assert_eq!(lines.len(), 6);
    assert!(tmp.path().join("a/episodes/004/log.json").exists());
    assert!(tmp.path().join("a/summary.csv").exists());
}

#[test]
fn train_toy_outputs_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("small.json"),
        r#"{"dataset": {"n_train": 8, "n_val": 4}, "train": {"phase1": {"epochs": 2}, "phase2": {"epochs": 9}}}"#,
    )
    .unwrap();
    for d in ["a", "b"] {
        let o = usneedle(&["--config", "small.json", "--out", d, "train-toy", "--loss", "dice"], tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let h = fs::read_to_string(tmp.path().join("a/history.csv")).unwrap();
    assert_eq!(h, fs::read_to_string(tmp.path().join("b/history.csv")).unwrap());
    assert_eq!(h.lines().count(), 1 + 2 + 9);
    // phase-2 generator rate halves after epoch 7
    let lr: Vec<f64> = h.lines().skip(3).map(|l| l.split(',').nth(5).unwrap().parse().unwrap()).collect();
    assert_eq!(lr[7], 5e-5);
    assert_eq!(lr[8], 2.5e-5);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("a/model.json")).unwrap()).unwrap();
    assert_eq!(m["model"]["weights"].as_array().unwrap().len(), 5);
}

#[test]
fn eval_losses_anchors() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("e.json"), r#"{"eval": {"samples": 5}}"#).unwrap();
    assert!(usneedle(&["--config", "e.json", "--out", "ev", "eval-losses"], tmp.path()).status.success());
    let mut r = csv::Reader::from_path(tmp.path().join("ev/losses.csv")).unwrap();
    for row in r.records().map(|x| x.unwrap()) {
        let err: f64 = row[2].parse().unwrap();
        assert!(err <= 1e-4, "{}: {err}", &row[0]);
    }
    let a = fs::read_to_string(tmp.path().join("ev/anchors.csv")).unwrap();
    assert!(a.contains("adv_disc_at_half,1.386294361119"));
}

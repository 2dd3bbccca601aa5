use std::path::Path;
use std::process::Command;

fn relvos() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_relvos"));
    c.env_remove("RELVOS_DATA_ROOT");
    c
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(
        &p,
        "[simulation]\nrounds = 2\n\n[synthetic]\nwidth = 40\nheight = 32\nnum_frames = 5\nseed = 2\n",
    )
    .unwrap();
    p
}

#[test]
fn oracle_passes_and_reports() {
    let out = relvos().args(["oracle", "--count", "3"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("within tolerance"));
    assert!(text.contains("A(a0->t) scaled"));
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!relvos().output().unwrap().status.success());
    assert!(!relvos().args(["simulate", "--mode", "sideways"]).output().unwrap().status.success());
    let out = relvos().args(["simulate", "--dataset", "no-such-sequence"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("unknown sequence"));
}

#[test]
fn simulate_writes_documented_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = relvos()
        .args(["simulate", "--synthetic", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("AUC"));
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "round,frame,object,J,F");
    assert_eq!(csv.lines().count(), 1 + 2 * 5 * 2);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds"].as_array().unwrap().len(), 2);
    assert_eq!(summary["mode"], "gt-worst");
    let log = std::fs::read_to_string(out_dir.join("rounds.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn replay_regenerates_saved_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out_dir = dir.path().join("out");
    assert!(relvos()
        .args(["simulate", "--synthetic", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap()
        .status
        .success());
    let rep = dir.path().join("rep");
    let out = relvos()
        .arg("replay")
        .arg(out_dir.join("snapshot.json"))
        .arg("--out")
        .arg(&rep)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let snap = relvos::snapshot::SessionSnapshot::load(&out_dir.join("snapshot.json")).unwrap();
    let saved = snap.decoded_masks().unwrap();
    for (t, m) in saved.iter().enumerate() {
        let replayed = relvos::dataset::read_mask(&rep.join(format!("round_02/{t:05}.pgm"))).unwrap();
        assert_eq!(&replayed, m);
    }
    assert!(rep.join("round_01/00004.pgm").is_file());
}

#[test]
fn synth_then_simulate_from_data_root() {
    let root = tempfile::tempdir().unwrap();
    let seq = root.path().join("clip");
    assert!(relvos()
        .args(["synth", "--seed", "6", "--frames", "4", "--out"])
        .arg(&seq)
        .output()
        .unwrap()
        .status
        .success());
    let out_dir = root.path().join("out");
    let out = relvos()
        .env("RELVOS_DATA_ROOT", root.path())
        .args(["simulate", "--dataset", "clip", "--rounds", "1", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(out_dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"sequence\": \"clip\""));
}

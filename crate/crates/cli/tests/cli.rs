use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use modalbench::sweep::StoreContents;

const SPEC: &str = r#"{"dim": 8, "num_classes": 3, "num_instances": 120, "invariant_dim": 4, "spurious_dim": 2}"#;

fn modalbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modalbench"))
        .args(args)
        .env_remove("MODALBENCH_WORKERS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = modalbench(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str) {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, SPEC).unwrap();
    ok(&["gen-synthetic", "--spec", p(&spec), "--seed", seed, "--out", p(&dir.join("data"))]);
}

fn write_plan(dir: &Path, extra: &str) -> std::path::PathBuf {
    let plan = dir.join("plan.json");
    std::fs::write(
        &plan,
        format!(r#"{{"dataset": "data", "test_modality": "m2", "seeds": 2 {extra}}}"#),
    )
    .unwrap();
    plan
}

#[test]
fn gen_synthetic_is_deterministic_and_valid() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), "7");
    gen(b.path(), "7");
    let mut names: Vec<_> = std::fs::read_dir(a.path().join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 4, "three MBED files plus the manifest");
    for n in &names {
        let x = std::fs::read(a.path().join("data").join(n)).unwrap();
        let y = std::fs::read(b.path().join("data").join(n)).unwrap();
        assert_eq!(x, y, "{n:?} differs");
    }
    assert!(ok(&["validate", p(&a.path().join("data"))]).starts_with("ok:"));

    let c = tempfile::tempdir().unwrap();
    gen(c.path(), "8");
    let m7 = std::fs::read(a.path().join("data/manifest.json")).unwrap();
    let m8 = std::fs::read(c.path().join("data/manifest.json")).unwrap();
    assert_ne!(m7, m8);
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    for args in [&["report"][..], &["sweep", "--plan", "x", "--bogus"], &["train", "--algorithm", "XYZ"], &["frobnicate"]] {
        assert_eq!(modalbench(args).status.code(), Some(2), "{args:?}");
    }
    let out = modalbench(&["report", "--store", "/nonexistent/r.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("error: code=E_IO message="), "{stderr}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("plan.json");
    std::fs::write(&bad, r#"{"dataset": "d", "test_modality": "m", "unknown": 1}"#).unwrap();
    let out = modalbench(&["sweep", "--plan", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("code=E_FORMAT"));
}

#[test]
fn train_prints_a_record_and_appends_to_the_store() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "1");
    let store = dir.path().join("train.jsonl");
    let data = dir.path().join("data");
    let args = [
        "train", "--dataset", p(&data), "--algorithm", "irm", "--test-modality", "m2", "--regime", "weak",
        "--steps", "6", "--seed", "3", "--out", p(&store),
    ];
    let first: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(first["algorithm"], "IRM");
    assert_eq!(first["status"], "ok");
    let second: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(first, second);
    assert_eq!(StoreContents::read(&store).unwrap().trials.len(), 1);

    let out = modalbench(&[
        "train", "--dataset", p(&data), "--algorithm", "ERM", "--test-modality", "m2", "--regime", "strong",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_then_report_and_select() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "2");
    let plan = write_plan(dir.path(), r#", "algorithms": ["Concat", "ERM"], "trials": 2, "steps": 8, "loo": true"#);
    let store = dir.path().join("r.jsonl");
    let summary: serde_json::Value =
        serde_json::from_str(&ok(&["sweep", "--plan", p(&plan), "--workers", "4", "--store", p(&store)])).unwrap();
    assert_eq!((summary["total"].as_u64(), summary["ok"].as_u64()), (Some(8), Some(8)));

    let text = ok(&["report", "--store", p(&store), "--out", p(&dir.path().join("report"))]);
    assert!(text.contains("ERM") && text.contains("Concat") && text.contains('\u{b1}'), "{text}");
    assert!(text.contains("Leave-one-modality-out"), "{text}");
    for f in ["report.txt", "report.csv", "report.json"] {
        assert!(dir.path().join("report").join(f).exists(), "{f}");
    }
    let csv = ok(&["report", "--store", p(&store), "--format", "csv"]);
    assert!(csv.starts_with("dataset,selection,perceptor,family,algorithm,m2_mean,m2_std"), "{csv}");

    let chosen: serde_json::Value = serde_json::from_str(&ok(&["select", "--store", p(&store), "--method", "loo"])).unwrap();
    let groups = chosen.as_array().unwrap();
    assert_eq!(groups.len(), 2);
    assert!(groups.iter().all(|g| g["choices"].as_array().unwrap().len() == 2 && g["retrain"].as_array().unwrap().len() == 2));

    // A second sweep over the same store resumes and finds nothing to do.
    let again: serde_json::Value = serde_json::from_str(&ok(&["sweep", "--plan", p(&plan), "--store", p(&store)])).unwrap();
    assert_eq!(again["skipped"].as_u64(), Some(8));
}

#[test]
fn killed_sweep_leaves_a_readable_store_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "4");
    let plan = write_plan(dir.path(), r#", "algorithms": ["ERM", "IRM", "Mixup"], "trials": 3, "steps": 40"#);
    let store = dir.path().join("r.jsonl");
    let mut child = Command::new(env!("CARGO_BIN_EXE_modalbench"))
        .args(["sweep", "--plan", p(&plan), "--store", p(&store), "--workers", "2"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(120);
    while std::fs::metadata(&store).map_or(0, |m| m.len()) == 0 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }
    assert!(child.try_wait().unwrap().is_none(), "sweep ended before it was killed");
    child.kill().unwrap();
    child.wait().unwrap();

    let partial = StoreContents::read(&store).unwrap();
    assert!(partial.trials.len() < 18, "killed before finishing");
    // Simulate a write cut mid-line as well.
    let mut bytes = std::fs::read(&store).unwrap();
    bytes.extend_from_slice(br#"{"type":"trial","schema_versi"#);
    std::fs::write(&store, bytes).unwrap();
    assert!(StoreContents::read(&store).unwrap().torn_tail > 0);

    let summary: serde_json::Value =
        serde_json::from_str(&ok(&["sweep", "--plan", p(&plan), "--store", p(&store)])).unwrap();
    assert_eq!(summary["skipped"].as_u64(), Some(partial.trials.len() as u64));
    let done = StoreContents::read(&store).unwrap();
    assert_eq!((done.trials.len(), done.torn_tail), (18, 0));
    assert!(done.trials.iter().all(|r| r.is_ok()));
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--seed", "5"]);
    assert_eq!(out.lines().count(), 7, "{out}");
    assert!(out.lines().all(|l| l.starts_with("pass ")), "{out}");
}

#[test]
fn interrupt_drains_running_jobs() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "5");
    let plan = write_plan(dir.path(), r#", "algorithms": ["ERM", "IRM"], "trials": 3, "steps": 40"#);
    let store = dir.path().join("r.jsonl");
    let child = Command::new(env!("CARGO_BIN_EXE_modalbench"))
        .args(["sweep", "--plan", p(&plan), "--store", p(&store), "--workers", "2"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(120);
    while std::fs::metadata(&store).map_or(0, |m| m.len()) == 0 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }
    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let out = child.wait_with_output().unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(1), "{stderr}");
    assert!(stderr.contains("interrupt: finishing running jobs") && stderr.contains("rerun to resume"), "{stderr}");
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let contents = StoreContents::read(&store).unwrap();
    assert_eq!(contents.torn_tail, 0);
    assert_eq!(contents.trials.len() as u64, summary["ok"].as_u64().unwrap());
    assert!(summary["cancelled"].as_u64().unwrap() > 0);
}

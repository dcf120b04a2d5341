use std::path::Path;
use std::process::{Command, Output};

use pixcond::pipeline::Manifest;

fn pixcond(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixcond")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    let o = pixcond(&["pipeline", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));

    let o = pixcond(&["pipeline"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--manifest"));
    assert!(stderr(&o).contains("Usage"));

    assert_eq!(pixcond(&[]).status.code(), Some(1));
    assert_eq!(pixcond(&["train", "--data", "x", "--out", "y", "--steps", "ten"]).status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    let o = pixcond(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in [
        "gen-data",
        "train",
        "pseudo-label",
        "distill",
        "finetune",
        "eval",
        "pipeline",
        "report",
        "oracle-check",
        "render-normals",
    ] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cdds");
    let out = dir.path().join("m.cdmf");
    let o = pixcond(&["train", "--data", path(&missing), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = pixcond(&["--out-dir", path(dir.path()), "report", "--run", "deadbeef"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_step_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let ok = |args: &[&str]| {
        let o = pixcond(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        o
    };
    let small = ["--steps", "5", "--batch-images", "2", "--pixels-per-image", "16"];
    ok(&["--seed", "3", "gen-data", "--count", "4", "--size", "16x16", "--out", path(&p("x1"))]);
    ok(&["--seed", "3", "gen-data", "--count", "4", "--size", "16x16", "--out", path(&p("x1b"))]);
    assert_eq!(std::fs::read(p("x1")).unwrap(), std::fs::read(p("x1b")).unwrap());
    ok(&["gen-data", "--dist", "diverse", "--count", "4", "--size", "16x16", "--unlabeled", "--out", path(&p("x2"))]);
    assert!(p("x2.gt").exists());

    ok(&[&["train", "--data", path(&p("x1")), "--out", path(&p("f"))][..], &small].concat());
    ok(&["pseudo-label", "--teacher", path(&p("f")), "--data", path(&p("x2")), "--out", path(&p("pseudo"))]);
    ok(&[&["distill", "--teacher", path(&p("f")), "--data", path(&p("x2")), "--out", path(&p("g"))][..], &small].concat());
    ok(&[&["finetune", "--model", path(&p("g")), "--data", path(&p("x1")), "--out", path(&p("gft"))][..], &small].concat());
    ok(&[&["finetune", "--segmentation", "--model", path(&p("g")), "--data", path(&p("x1")), "--out", path(&p("seg"))][..], &small].concat());

    let o = ok(&["eval", "--model", path(&p("gft")), "--data", path(&p("x1"))]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["overall"]["mean_deg"].as_f64().unwrap() >= 0.0);
    let o = ok(&["eval", "--model", path(&p("seg")), "--data", path(&p("x1"))]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["mean_iou"].is_number());

    ok(&["render-normals", "--data", path(&p("x1")), "--out", path(&p("gt.ppm"))]);
    ok(&["render-normals", "--data", path(&p("x1")), "--model", path(&p("gft")), "--index", "1", "--out", path(&p("pred.ppm"))]);
    let ppm = std::fs::read(p("gt.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n16 16\n255\n"));
    assert_eq!(ppm.len(), 13 + 3 * 256);
    assert_eq!(pixcond(&["render-normals", "--data", path(&p("x1")), "--index", "9", "--out", path(&p("x.ppm"))]).status.code(), Some(1));
}

#[test]
fn oracle_check_passes() {
    let o = pixcond(&["--seed", "5", "oracle-check", "--instances", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("10 full-rank instances"));
}

#[test]
fn pipeline_and_report_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    std::fs::write(&manifest, Manifest::minimal().to_json()).unwrap();
    let runs = dir.path().join("runs");
    let args = ["--manifest", path(&manifest), "--out-dir", path(&runs), "pipeline"];
    let first = pixcond(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let id = String::from_utf8(first.stdout).unwrap().trim().to_string();
    let run = runs.join(&id);
    let files = ["run_record.json", "report.md", "report.csv", "report.json"];
    let before: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(run.join(f)).unwrap()).collect();

    let second = pixcond(&args);
    assert_eq!(second.status.code(), Some(0));
    let after: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(run.join(f)).unwrap()).collect();
    assert_eq!(before, after);

    let o = pixcond(&["--out-dir", path(&runs), "report", "--run", &id, "--format", "md"]);
    assert_eq!(o.status.code(), Some(0));
    let md = String::from_utf8(o.stdout).unwrap();
    assert!(md.contains("| Model | Mean | Median | RMSE | 11.25 | 22.5 | 30 |"));
    assert_eq!(md.as_bytes(), &before[1][..]);

    // Overrides change the run id and are recorded.
    let o = pixcond(&["--manifest", path(&manifest), "--out-dir", path(&runs), "--override", "stages=[\"train_f\"]", "--seed", "9", "pipeline"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let id2 = String::from_utf8(o.stdout).unwrap().trim().to_string();
    assert_ne!(id2, id);
    let rec: serde_json::Value = serde_json::from_slice(&std::fs::read(runs.join(&id2).join("run_record.json")).unwrap()).unwrap();
    assert_eq!(rec["manifest"]["seed"], 9);
    assert_eq!(rec["overrides"][0], "stages=[\"train_f\"]");
}

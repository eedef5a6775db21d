use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mosbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mosbench")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mosbench(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const TOY: &str = r#"
schema_version = 1
output_dir = "out"
seeds = [0, 1]

[datasets]
synthetic = "synthetic.csv"

[training]
patience_epochs = 2
max_epochs = 3
batch_size = 8

[evaluation]
test_set = "synthetic"
validation_set = "synthetic"

[[models]]
id = "ConvMaxPool"
architecture = "CONVMAXPOOL"
train_set = "synthetic"
size = "tiny"

[[models]]
id = "NISQA"
architecture = "NISQA"
train_set = "synthetic"
size = "tiny"
"#;

fn toy(dir: &Path) -> PathBuf {
    let d = dir.to_str().unwrap();
    ok(&["synth", "--dir", d, "--utterances", "72"]);
    let path = dir.join("toy.toml");
    fs::write(&path, TOY).unwrap();
    path
}

#[test]
fn train_evaluate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path());
    let cfg = cfg.to_str().unwrap();
    let summary: serde_json::Value = serde_json::from_str(&ok(&["--config", cfg, "train"])).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 4);

    let run = dir.path().join("out/runs/ConvMaxPool/seed_1");
    assert!(run.join("checkpoint/metadata.json").exists());
    assert!(run.join("run_log.json").exists());
    let first = fs::read(run.join("predictions.csv")).unwrap();

    ok(&["--config", cfg, "--no-cache", "train", "--model", "ConvMaxPool"]);
    assert_eq!(fs::read(run.join("predictions.csv")).unwrap(), first);

    let table = ok(&["--config", cfg, "evaluate"]);
    assert!(table.contains("ConvMaxPool") && table.contains("NISQA"));
    ok(&["--config", cfg, "compare"]);
    ok(&["--config", cfg, "analyze"]);
    ok(&["--config", cfg, "report"]);
    let reports = dir.path().join("out/reports");
    for f in ["evaluation.json", "comparison.json", "analysis.json", "summary.md"] {
        assert!(reports.join(f).exists(), "{f}");
    }

    ok(&["--config", cfg, "--subset", "vcc", "--level", "system", "evaluate", "--model", "ConvMaxPool"]);
    let vcc: serde_json::Value = serde_json::from_slice(&fs::read(reports.join("evaluation_vcc.json")).unwrap()).unwrap();
    assert_eq!(vcc["reports"].as_array().unwrap().len(), 1);

    let preds = dir.path().join("scored.csv");
    ok(&[
        "predict",
        "--checkpoint",
        run.join("checkpoint").to_str().unwrap(),
        "--manifest",
        dir.path().join("synthetic.csv").to_str().unwrap(),
        "--split",
        "test",
        "--output",
        preds.to_str().unwrap(),
    ]);
    let rows = fs::read_to_string(&preds).unwrap();
    assert!(rows.lines().count() > 1);
}

#[test]
fn missing_manifest_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    fs::write(&cfg, TOY).unwrap();
    let out = mosbench(&["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "MISSING_PATH");
    assert!(err["path"].as_str().unwrap().ends_with("synthetic.csv"));
    assert!(!dir.path().join("out/runs").exists());
}

#[test]
fn bad_arguments_are_user_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = mosbench(&["--config", cfg, "train", "--model", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mosbench(&["--config", cfg, "--seed-list", "1,1", "train"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mosbench(&["--config", cfg, "--subset", "robots", "evaluate"]);
    assert_eq!(out.status.code(), Some(2));
}

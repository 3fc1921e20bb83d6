use std::path::Path;
use std::process::{Command, Output};

fn mulann(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mulann")).args(args).env("MULANN_OUT", out).output().expect("spawn mulann")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"
[experiment]
name = "small"
seeds = 1

[data]
classes = 4
per_class = 20

[split]
labeled_per_class = 4

[train]
steps = 30
batch_size = 8

[bounds]
instances = 25
"#;

#[test]
fn config_command_prints_parseable_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = mulann(&["config"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = mulann::harness::ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, mulann::harness::ExperimentConfig::default());
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = mulann(&["config", "--seed", "42"], dir.path());
    let cfg = mulann::harness::ExperimentConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.experiment.seed, 42);
}

#[test]
fn bad_config_value_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sweep]\np = [1.5]\n");
    let out = mulann(&["sweep-p", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("mulann sweep-p") && err.contains("sweep.p[0]"), "{err}");
}

#[test]
fn unknown_key_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nepochs = 3\n");
    let out = mulann(&["train", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mulann(&["train", "--config", "/nonexistent/exp.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_before_train_exits_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = mulann(&["evaluate", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("missing checkpoint"));
}

#[test]
fn train_then_evaluate_writes_under_mulann_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = mulann(&["train", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = dir.path().join("small");
    assert!(root.join("train.csv").exists());
    assert!(root.join("checkpoints/mulann-seed0.ckpt").exists());
    let out = mulann(&["evaluate", "--config", &cfg], dir.path());
    assert!(out.status.success());
    let train = std::fs::read_to_string(root.join("train.csv")).unwrap();
    let eval = std::fs::read_to_string(root.join("evaluate.csv")).unwrap();
    assert_eq!(train.lines().skip(1).collect::<Vec<_>>(), eval.lines().skip(1).collect::<Vec<_>>());
}

#[test]
fn out_flag_takes_precedence_over_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let other = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = mulann(&["bounds", "--config", &cfg, "--out", &other.path().display().to_string()], dir.path());
    assert!(out.status.success());
    assert!(other.path().join("small/bounds.csv").exists());
    assert!(!dir.path().join("small").exists());
}

#[test]
fn bounds_run_is_clean_and_repeatable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = write_config(a.path(), SMALL);
    for dir in [&a, &b] {
        let out = mulann(&["bounds", "--config", &cfg], dir.path());
        assert_eq!(out.status.code(), Some(0));
        assert!(String::from_utf8(out.stdout).unwrap().contains("0 violations"));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("small/bounds.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

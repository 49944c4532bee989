use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lifeclust"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_dataset(dir: &Path) -> PathBuf {
    let out = run(
        dir,
        &["synth", "--clusters", "C1,C3", "--n", "40", "--seed", "5", "--out", "d.csv"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("d.csv")
}

const FAST: [&str; 6] = ["--set", "epochs=3", "--set", "hidden_units=8", "--set", "batch_size=32"];

fn train_model(dir: &Path, run_dir: &str) -> PathBuf {
    small_dataset(dir);
    let mut args = vec!["train", "--data", "d.csv", "--run-dir", run_dir];
    args.extend(FAST);
    let out = run(dir, &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join(run_dir).join("model.ckpt")
}

fn kv(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn kuiper_test_identical_samples() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("a.csv"), "lifetime,event\n3,1\n5,0\n9,1\n12,1\n").unwrap();
    let out = run(tmp.path(), &["kuiper-test", "--a", "a.csv", "--b", "a.csv"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(kv(&text, "v"), 0.0);
    assert_eq!(kv(&text, "p_upper"), 1.0);
}

#[test]
fn kuiper_test_separated_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let a: String = (1..=40).map(|t| format!("{t}\n")).collect();
    let b: String = (100..=140).map(|t| format!("{t}\n")).collect();
    std::fs::write(tmp.path().join("a.csv"), format!("lifetime\n{a}")).unwrap();
    std::fs::write(tmp.path().join("b.csv"), format!("lifetime\n{b}")).unwrap();
    let out = run(tmp.path(), &["kuiper-test", "--a", "a.csv", "--b", "b.csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(kv(&text, "p_upper") < 1e-6, "{text}");
    assert!(kv(&text, "p_lower") <= kv(&text, "p_reference"));
    assert!(kv(&text, "p_reference") <= kv(&text, "p_upper"));
}

#[test]
fn assign_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let model = train_model(tmp.path(), "r");
    let model = model.to_str().unwrap();
    for out in ["l1.csv", "l2.csv"] {
        let o = run(tmp.path(), &["assign", "--model", model, "--data", "d.csv", "--out", out]);
        assert_eq!(code(&o), 0);
    }
    let l1 = std::fs::read(tmp.path().join("l1.csv")).unwrap();
    assert_eq!(l1, std::fs::read(tmp.path().join("l2.csv")).unwrap());
    assert_eq!(String::from_utf8(l1).unwrap().lines().count(), 81);
}

#[test]
fn echoed_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    train_model(tmp.path(), "r");
    let echoed = std::fs::read_to_string(tmp.path().join("r/config.txt")).unwrap();
    assert!(echoed.contains("hidden_units=8\n"));
    let out = run(
        tmp.path(),
        &["train", "--data", "d.csv", "--config", "r/config.txt", "--run-dir", "r2"],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(echoed, std::fs::read_to_string(tmp.path().join("r2/config.txt")).unwrap());
    assert_eq!(
        std::fs::read(tmp.path().join("r/model.ckpt")).unwrap(),
        std::fs::read(tmp.path().join("r2/model.ckpt")).unwrap()
    );
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    std::fs::write(tmp.path().join("c.txt"), "seed=1\nepochs=2\nhidden_units=8\n").unwrap();
    let out = run(
        tmp.path(),
        &["train", "--data", "d.csv", "--config", "c.txt", "--seed", "9", "--run-dir", "r"],
    );
    assert_eq!(code(&out), 0);
    let echoed = std::fs::read_to_string(tmp.path().join("r/config.txt")).unwrap();
    assert!(echoed.contains("seed=9\n") && echoed.contains("epochs=2\n"));
}

#[test]
fn eval_writes_report_and_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let model = train_model(tmp.path(), "r");
    let out = run(
        tmp.path(),
        &[
            "eval", "--model", model.to_str().unwrap(), "--data", "d.csv",
            "--truth", "d.labels.csv", "--run-dir", "e",
        ],
    );
    assert_eq!(code(&out), 0);
    let report = std::fs::read_to_string(tmp.path().join("e/report.txt")).unwrap();
    for key in ["c_index", "ibs", "logrank", "ari"] {
        assert!(kv(&report, key).is_finite());
    }
    let curves = std::fs::read_to_string(tmp.path().join("e/curves.csv")).unwrap();
    assert!(curves.starts_with("t,cluster_0,cluster_1\n0,1.0,1.0\n"));
}

#[test]
fn timestamped_run_dirs_do_not_collide() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let mut args = vec!["train", "--data", "d.csv", "--out-dir", "runs"];
    args.extend(FAST);
    assert_eq!(code(&run(tmp.path(), &args)), 0);
    assert_eq!(code(&run(tmp.path(), &args)), 0);
    let dirs: Vec<_> = std::fs::read_dir(tmp.path().join("runs")).unwrap().collect();
    assert_eq!(dirs.len(), 2);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&run(dir, &["--help"])), 0);
    assert_eq!(code(&run(dir, &["frobnicate"])), 1);
    assert_eq!(code(&run(dir, &["train"])), 1);

    small_dataset(dir);
    let unknown = run(dir, &["train", "--data", "d.csv", "--set", "bogus=1", "--run-dir", "x"]);
    assert_eq!(code(&unknown), 1);
    assert_eq!(String::from_utf8_lossy(&unknown.stderr).lines().count(), 1);
    assert_eq!(code(&run(dir, &["synth", "--clusters", "C4", "--out", "y.csv"])), 1);

    assert_eq!(code(&run(dir, &["train", "--data", "missing.csv", "--run-dir", "x"])), 2);
    std::fs::write(dir.join("bad.csv"), "id,joining_time\nzz,abc\n").unwrap();
    assert_eq!(code(&run(dir, &["train", "--data", "bad.csv", "--run-dir", "x"])), 2);
    assert!(!dir.join("x").exists(), "failed run left output behind");
}

#[test]
fn failed_run_removes_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    // 80 subjects cannot fill 100 folds; config.txt is written before the failure
    let out = run(
        tmp.path(),
        &["cv", "--data", "d.csv", "--set", "folds=100", "--run-dir", "nested/cv"],
    );
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("nested").exists());
}

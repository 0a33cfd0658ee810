use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "dt = 0.01\nnodes = 128\nnested = false\nspde_tolerance = 0.02\n";

fn fwdc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fwdc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn reruns_are_byte_identical_and_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    for out in ["a", "b"] {
        let run = fwdc(&["all", "--config", &cfg, "--out", out], tmp.path());
        assert!(run.status.success(), "{}", stderr(&run));
    }
    for name in ["verification.csv", "summary.txt", "path_0.csv", "wealth_0.csv", "field_terminal.csv"] {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let first = fwdc(&["verify", "--config", &cfg, "--out", "a", "--seed", "7"], tmp.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let echoed = tmp.path().join("a/effective_config.toml");
    let echoed = echoed.to_string_lossy();
    let second = fwdc(&["verify", "--config", &echoed, "--out", "b"], tmp.path());
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(
        fs::read(tmp.path().join("a/verification.csv")).unwrap(),
        fs::read(tmp.path().join("b/verification.csv")).unwrap()
    );
}

#[test]
fn verification_csv_has_the_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let run = fwdc(&["verify", "--config", &cfg, "--out", "o"], tmp.path());
    assert!(run.status.success(), "{}", stderr(&run));
    let text = fs::read_to_string(tmp.path().join("o/verification.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("test,arm,estimate,stderr,target,tol,pass"));
    let summary = fs::read_to_string(tmp.path().join("o/summary.txt")).unwrap();
    assert!(summary.contains("deviation_test: control="), "{summary}");
    assert!(summary.trim_end().ends_with("overall: pass"));
}

#[test]
fn failing_verification_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let cfg_strict = tmp.path().join("strict.toml");
    fs::write(&cfg_strict, fs::read_to_string(&cfg).unwrap().replace("0.02", "1e-6")).unwrap();
    let run = fwdc(&["verify", "--config", &cfg_strict.to_string_lossy(), "--out", "o"], tmp.path());
    assert_eq!(run.status.code(), Some(1), "{}", stderr(&run));
    let summary = fs::read_to_string(tmp.path().join("o/summary.txt")).unwrap();
    assert!(summary.trim_end().ends_with("overall: FAIL"));
}

#[test]
fn gamma_outside_domain_is_rejected_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "gamma = 1.0\n");
    let run = fwdc(&["all", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("gamma in (-inf,0)U(0,1)"), "{}", stderr(&run));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn unknown_key_is_named_with_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "volatility = 0.2\n");
    let run = fwdc(&["simulate", "--config", &cfg], tmp.path());
    assert_eq!(run.status.code(), Some(2));
    let err = stderr(&run);
    assert!(err.contains("volatility"), "{err}");
    assert!(err.contains("line 5"), "{err}");
}

#[test]
fn non_empty_output_requires_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("o");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "mine").unwrap();
    let run = fwdc(&["bs-closed-form", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("--force-overwrite"), "{}", stderr(&run));
    assert!(!out.join("contract.toml").exists());

    let run = fwdc(&["bs-closed-form", "--config", &cfg, "--out", "o", "--force-overwrite"], tmp.path());
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(out.join("contract.toml").exists());
    assert_eq!(fs::read_to_string(out.join("keep.txt")).unwrap(), "mine");
}

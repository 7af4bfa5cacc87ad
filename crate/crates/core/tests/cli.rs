use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn ekp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ekp")).args(args).env_remove("EKP_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn identity_kernel_estimate_is_one_over_root_m() {
    let k = fixture("identity100.csv");
    let o = ekp(&["rademacher", "--kernel", k.to_str().unwrap(), "--samples", "2000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("estimate")).unwrap();
    assert!(line.contains("0.100000"), "{line}");
}

#[test]
fn verify_passes_on_the_fixtures() {
    let cls = fixture("synthetic_cls.csv");
    let o = ekp(&["verify", "--data", cls.to_str().unwrap(), "--gamma-min", "-2", "--gamma-max", "1"]);
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("all checks passed"));
    let reg = fixture("small_reg.svm");
    let o = ekp(&["verify", "--data", reg.to_str().unwrap(), "--format", "svmlight", "--task", "regression"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn cv_writes_a_table_and_a_result_file() {
    let cls = fixture("synthetic_cls.csv");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cv.json");
    let o = ekp(&[
        "cv",
        "--data",
        cls.to_str().unwrap(),
        "--methods",
        "unif,l1-ens",
        "--gamma-min",
        "-1",
        "--gamma-max",
        "1",
        "--cap-grid",
        "1",
        "--ratio-grid",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("unif")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("l1-ens")), "{text}");
    let again = ekp(&["report", out.to_str().unwrap()]);
    assert!(again.status.success());
    assert!(stdout(&again).contains("l1-ens"));
}

#[test]
fn svmlight_regression_data_loads() {
    let reg = fixture("small_reg.svm");
    let o = ekp(&[
        "cv",
        "--data",
        reg.to_str().unwrap(),
        "--format",
        "svmlight",
        "--task",
        "regression",
        "--methods",
        "unif",
        "--gamma-min",
        "0",
        "--gamma-max",
        "0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("N=40"));
}

#[test]
fn usage_errors_exit_two_and_domain_errors_exit_one() {
    assert_eq!(ekp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ekp(&["cv", "--no-such-flag"]).status.code(), Some(2));
    let k = fixture("identity100.csv");
    let o = ekp(&["rademacher", "--kernel", k.to_str().unwrap(), "--q", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert_eq!(ekp(&["report", "/nonexistent/result.json"]).status.code(), Some(1));
}

#[test]
fn seed_environment_variable_overrides_the_flag() {
    let k = fixture("identity100.csv");
    let k = k.to_str().unwrap();
    let flag = ekp(&["rademacher", "--kernel", k, "--samples", "50", "--seed", "13"]);
    let env = Command::new(env!("CARGO_BIN_EXE_ekp"))
        .args(["rademacher", "--kernel", k, "--samples", "50", "--seed", "2"])
        .env("EKP_SEED", "13")
        .output()
        .unwrap();
    assert!(flag.status.success() && env.status.success());
    assert_eq!(flag.stdout, env.stdout);
    let bad = Command::new(env!("CARGO_BIN_EXE_ekp"))
        .args(["rademacher", "--kernel", k, "--samples", "50"])
        .env("EKP_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

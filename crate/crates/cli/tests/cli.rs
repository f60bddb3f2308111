use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fsolink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsolink")).args(args).output().unwrap()
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_twice_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenario("low.json");
    let mut reports = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = fsolink(&["run", "--config", config.to_str().unwrap(), "--seed", "42", "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        reports.push(std::fs::read(out_dir.join("report.jsonl")).unwrap());
        assert_eq!(std::fs::read_dir(out_dir.join("frames")).unwrap().count(), 600);
    }
    assert_eq!(reports[0], reports[1]);
    assert!(!reports[0].is_empty());
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("small.json");
    let mut config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scenario("high.json")).unwrap()).unwrap();
    config["duration"] = 2.0.into();
    config["source"]["frames"] = 10.into();
    std::fs::write(&config_path, config.to_string()).unwrap();

    let mut reports = Vec::new();
    for seed in ["1", "2"] {
        let out_dir = dir.path().join(seed);
        let out = fsolink(&["run", "--config", config_path.to_str().unwrap(), "--seed", seed, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        reports.push(std::fs::read_to_string(out_dir.join("report.jsonl")).unwrap());
    }
    assert_ne!(reports[0], reports[1]);
}

#[test]
fn scenarios_lists_both_wind_speeds() {
    let out = fsolink(&["scenarios"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[0][2]), ("low", "1"));
    assert_eq!((rows[1][0], rows[1][2]), ("high", "6"));
}

#[test]
fn shipped_scenarios_match_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let out = fsolink(&["scenarios", "--write", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    for name in ["low.json", "high.json"] {
        assert_eq!(
            std::fs::read_to_string(dir.path().join(name)).unwrap(),
            std::fs::read_to_string(scenario(name)).unwrap()
        );
    }
}

#[test]
fn missing_config_is_an_io_error() {
    let out = fsolink(&["run", "--config", "/nonexistent/low.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/low.json"));
}

#[test]
fn invalid_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scenario("low.json")).unwrap()).unwrap();
    config["channel"]["cn2"] = (-1.0).into();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, config.to_string()).unwrap();
    let out = fsolink(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cn2"));

    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(fsolink(&["run", "--config", path.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn usage_errors() {
    let out = fsolink(&["run", "--config", "x.json", "--turbo"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(fsolink(&[]).status.code(), Some(1));
    assert_eq!(fsolink(&["--help"]).status.code(), Some(0));
}

#[test]
fn serve_rejects_a_taken_port() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = fsolink(&["serve", "--config", scenario("low.json").to_str().unwrap(), "--listen", &addr]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(&addr));
}

use std::path::Path;
use std::process::{Command, Output};

fn kglab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kglab"))
        .args(args)
        .arg("--set")
        .arg(format!("output.dir=\"{}\"", out.display()))
        .output()
        .expect("binary runs")
}

#[test]
fn solve_writes_report_with_config_echo_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = kglab(&["solve", "--set", "grid.counts=[128]", "--set", "time.t_final=0.5"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("relative energy drift"));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("solve_report.json")).unwrap()).unwrap();
    let hash = report["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(stdout.contains(hash));
    assert_eq!(report["config"]["grid"]["counts"][0], 128);
    assert_eq!(report["command"], "solve");

    let echo = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(echo.starts_with(&format!("# config_hash = {hash}")));
    for f in ["solve_energy.csv", "solve_u_final.csv", "solve_ratio_prop31.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn config_hash_tracks_content_not_formatting() {
    let base = kglab::runner::load(None, &[]).unwrap();
    let again = kglab::runner::load(None, &[]).unwrap();
    assert_eq!(base.hash, again.hash);
    let spaced = kglab::runner::load(None, &["time.t_final = 1.0".to_string()]).unwrap();
    assert_eq!(base.hash, spaced.hash);
    let changed = kglab::runner::load(None, &["time.t_final=2.0".to_string()]).unwrap();
    assert_ne!(base.hash, changed.hash);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["sweep", "--set", "net.n=3"],
        vec!["solve", "--set", "nosuch.key=1"],
        vec!["solve", "--set", "operator.s=-1"],
        vec!["solve", "--set", "operator.estimate=\"prop32\""],
        vec!["frobnicate"],
        vec!["solve", "--threads", "0"],
    ] {
        let out = kglab(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn prop32_rejection_quotes_the_condition() {
    let dir = tempfile::tempdir().unwrap();
    let out = kglab(&["solve", "--set", "operator.estimate=\"prop32\""], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Q > nu s"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = kglab(&["solve", "--config", "/nonexistent/kglab.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let loaded = kglab::runner::load(Some(&path), &[]);
        assert!(loaded.is_ok(), "{}: {:?}", path.display(), loaded.err());
        loaded.unwrap().config.validate().unwrap();
    }
}

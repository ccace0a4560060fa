use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_carnot-cap"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn empty_exponent_list_writes_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let cfg = write_config(
        dir.path(),
        &format!(r#"{{"set": {{"kept_digits": [0, 15], "depth": 2}}, "exponents": [], "output": {:?}}}"#, out),
    );
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("res.csv")).unwrap();
    assert_eq!(
        csv,
        "set_id,depth,exponent_kind,exponent,s,content,mu_mass,seminorm,lower,upper,ratio_lo,ratio_up,seed\n"
    );
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("res.json")).unwrap()).unwrap();
    assert_eq!(json["results"].as_array().unwrap().len(), 0);
}

#[test]
fn rerun_is_byte_identical_and_seed_flag_applies() {
    let dir = tempfile::tempdir().unwrap();
    let body = |name: &str| {
        format!(
            r#"{{"set": {{"kept_digits": [0, 5, 10, 15], "depth": 2}},
                "exponents": [{{"rho": 3}}, {{"delta": 0.5}}],
                "budgets": {{"balls": 32, "pairs": 128}}, "seed": 11, "output": {:?}}}"#,
            dir.path().join(name)
        )
    };
    let a = dir.path().join("cfg_a.json");
    let b = dir.path().join("cfg_b.json");
    fs::write(&a, body("a")).unwrap();
    fs::write(&b, body("b")).unwrap();
    assert!(run(&["run", a.to_str().unwrap()]).status.success());
    assert!(run(&["run", b.to_str().unwrap()]).status.success());
    let ca = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(ca, fs::read(dir.path().join("b.csv")).unwrap());
    let text = String::from_utf8(ca).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",11")));

    assert!(run(&["--seed", "12", "run", b.to_str().unwrap()]).status.success());
    let reseeded = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert!(reseeded.lines().skip(1).all(|l| l.ends_with(",12")));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        r#"{"set": {"kept_digits": [], "depth": 2}, "output": "x"}"#,
        r#"{"set": {"kept_digits": [0], "depth": 2}, "exponents": [{"rho": 7}], "output": "x"}"#,
        r#"{"set": {"kept_digits": [0], "depth": 2}, "output": "x", "extra": 1}"#,
        "not json",
    ] {
        let cfg = write_config(dir.path(), body);
        let o = run(&["run", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{body}");
        let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
        assert_eq!(err["error"], "config");
    }
    let missing = run(&["run", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn sidecar_may_not_overwrite_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("same.json");
    fs::write(&cfg, format!(r#"{{"set": {{"kept_digits": [0], "depth": 1}}, "output": {:?}}}"#, dir.path().join("same"))).unwrap();
    assert_eq!(run(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn group_file_must_be_heisenberg() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("h1.json"), r#"{"layers": [2, 1], "brackets": [{"i": 1, "j": 2, "out": [{"k": 3, "c": "1"}]}]}"#).unwrap();
    fs::write(
        dir.path().join("engel.json"),
        r#"{"layers": [2, 1, 1], "brackets": [{"i": 1, "j": 2, "out": [{"k": 3, "c": "1"}]}, {"i": 1, "j": 3, "out": [{"k": 4, "c": "1"}]}]}"#,
    )
    .unwrap();
    let cfg = |g: &str| {
        write_config(
            dir.path(),
            &format!(r#"{{"group": "{g}", "set": {{"kept_digits": [0], "depth": 1}}, "output": {:?}}}"#, dir.path().join("o")),
        )
    };
    assert!(run(&["run", cfg("h1.json").to_str().unwrap()]).status.success());
    assert_eq!(run(&["run", cfg("engel.json").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn tiles_export_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    for (level, rows) in [(0usize, 1usize), (1, 16), (2, 256)] {
        let out = dir.path().join(format!("tiles{level}.csv"));
        let o = run(&["tiles", "--level", &level.to_string(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), rows + 1);
        assert!(text.starts_with("word,"));
    }
    let o = run(&["tiles", "--level", "9", "--out", dir.path().join("x.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_identities_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = run(&["verify", "--suite", "identities", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["suite"], "identities");
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().len() > 20);
}

#[test]
fn unknown_suite_is_rejected() {
    let o = run(&["verify", "--suite", "everything"]);
    assert!(!o.status.success());
}

use rdp_harness::config::save_config;
use rdp_harness::{load_config, ExperimentConfig, HarnessError};

fn dirs() -> tempfile::TempDir {
    let t = tempfile::tempdir().unwrap();
    std::fs::create_dir(t.path().join("train")).unwrap();
    std::fs::create_dir(t.path().join("eval")).unwrap();
    t
}

fn write(t: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
    let p = t.path().join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn minimal(t: &tempfile::TempDir, extra: &str) -> String {
    format!(
        r#"{{"schema_version": 1, "lambdas": [0.01], {extra} "dataset": {{"train_dir": "{}", "eval_dir": "{}"}}}}"#,
        t.path().join("train").display(),
        t.path().join("eval").display()
    )
}

fn path_of(e: HarnessError) -> String {
    match e {
        HarnessError::Config { path, .. } => path,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn minimal_config_gets_defaults() {
    let t = dirs();
    let cfg = load_config(&write(&t, &minimal(&t, ""))).unwrap();
    let want = ExperimentConfig {
        lambdas: vec![0.01],
        ..ExperimentConfig::new(t.path().join("train"), t.path().join("eval"))
    };
    assert_eq!(cfg, want);
    assert_eq!(cfg.sweep.gammas, vec![650.25, 65.025, 32.5125, 6.5025, 3.25125, 0.0]);
    assert_eq!(cfg.train.patch_size, 64);
    assert_eq!(cfg.train.batch_size, 8);
}

#[test]
fn saved_config_loads_back() {
    let t = dirs();
    let cfg = ExperimentConfig::new(t.path().join("train"), t.path().join("eval"));
    let p = t.path().join("saved.json");
    save_config(&p, &cfg).unwrap();
    assert_eq!(load_config(&p).unwrap(), cfg);
}

#[test]
fn empty_lambdas_name_the_field() {
    let t = dirs();
    let body = minimal(&t, "").replace("[0.01]", "[]");
    let e = load_config(&write(&t, &body)).unwrap_err();
    assert!(e.is_validation());
    assert_eq!(path_of(e), "lambdas");
}

#[test]
fn unordered_lambdas_are_rejected() {
    let t = dirs();
    let body = minimal(&t, "").replace("[0.01]", "[0.01, 0.05, 0.02]");
    assert_eq!(path_of(load_config(&write(&t, &body)).unwrap_err()), "lambdas");
    let body = minimal(&t, "").replace("[0.01]", "[0.05, 0.02, 0.01]");
    assert!(load_config(&write(&t, &body)).is_ok());
}

#[test]
fn negative_learning_rate_is_rejected() {
    let t = dirs();
    let body = minimal(&t, r#""train": {"learning_rate": -0.001},"#);
    assert_eq!(path_of(load_config(&write(&t, &body)).unwrap_err()), "train.learning_rate");
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let t = dirs();
    let body = minimal(&t, r#""sweep": {"gamas": [1.0]},"#);
    let e = load_config(&write(&t, &body)).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("gamas"), "{msg}");
    assert_eq!(path_of(e), "sweep.gamas");
}

#[test]
fn bad_values_and_missing_dirs() {
    let t = dirs();
    let body = minimal(&t, r#""sweep": {"gammas": [1.0, 1.0]},"#);
    assert_eq!(path_of(load_config(&write(&t, &body)).unwrap_err()), "sweep.gammas[1]");
    let body = minimal(&t, r#""train": {"patch_size": 60},"#);
    assert_eq!(path_of(load_config(&write(&t, &body)).unwrap_err()), "train.patch_size");
    let body = minimal(&t, r#""schema_version": 2,"#).replacen(r#""schema_version": 1, "#, "", 1);
    assert_eq!(path_of(load_config(&write(&t, &body)).unwrap_err()), "schema_version");
    std::fs::remove_dir(t.path().join("eval")).unwrap();
    assert_eq!(path_of(load_config(&write(&t, &minimal(&t, ""))).unwrap_err()), "dataset.eval_dir");
    let e = load_config(&t.path().join("missing.json")).unwrap_err();
    assert_eq!(e.exit_code(), 1);
}

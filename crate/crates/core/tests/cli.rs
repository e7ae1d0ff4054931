use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn triage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triage"))
        .args(args)
        .env_remove("TRIAGE_SEED")
        .env_remove("TRIAGE_THREADS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(dir: &Path, seed: &str) -> Vec<u8> {
    let out = dir.display().to_string();
    let o = triage(&["generate", "--seed", seed, "--format", "csv", "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    fs::read(dir.join("cohort.csv")).unwrap()
}

#[test]
fn same_seed_same_bytes() {
    let t = tempfile::tempdir().unwrap();
    let a = generate(&t.path().join("a"), "7");
    let b = generate(&t.path().join("b"), "7");
    let c = generate(&t.path().join("c"), "8");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn seed_from_environment() {
    let t = tempfile::tempdir().unwrap();
    let a = generate(&t.path().join("a"), "11");
    let out = t.path().join("b").display().to_string();
    let o = Command::new(env!("CARGO_BIN_EXE_triage"))
        .args(["generate", "--format", "csv", "--out", &out])
        .env("TRIAGE_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(a, fs::read(t.path().join("b/cohort.csv")).unwrap());
}

#[test]
fn unknown_flag_is_a_config_error() {
    let o = triage(&["generate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kind=config"), "{}", stderr(&o));
}

#[test]
fn bad_value_names_the_field() {
    let t = tempfile::tempdir().unwrap();
    let cohort = t.path().join("gen/cohort.csv");
    generate(&t.path().join("gen"), "3");
    let out = t.path().join("cf").display().to_string();
    let o = triage(&["counterfactual", "--input", &cohort.display().to_string(), "--rule", "psychic", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("field=rule"), "{}", stderr(&o));
}

#[test]
fn wrong_schema_is_a_data_error() {
    let t = tempfile::tempdir().unwrap();
    let bad = t.path().join("bad.csv");
    fs::write(&bad, "#schema: something-else/9\nchild_id\n1\n").unwrap();
    let out = t.path().join("an").display().to_string();
    let o = triage(&["analyze", "--input", &bad.display().to_string(), "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("kind=data"), "{}", stderr(&o));
}

#[test]
fn missing_input_is_reported() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("an").display().to_string();
    let o = triage(&["analyze", "--input", "/nonexistent/cohort.csv", "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn model_verify_passes_at_defaults() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().display().to_string();
    let o = triage(&["model-verify", "--n-per-arm", "20000", "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(t.path().join("proposition_report.json")).unwrap()).unwrap();
    assert!(report.is_object());
    assert!(t.path().join("manifest_model-verify.json").exists());
}

#[test]
fn config_file_overrides_defaults() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.toml");
    fs::write(&cfg, "[cohort]\nn_children = 1200\nseed = 5\n").unwrap();
    let out = t.path().join("gen").display().to_string();
    let o = triage(&["--config", &cfg.display().to_string(), "generate", "--format", "csv", "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(t.path().join("gen/cohort.csv")).unwrap();
    // schema line, header, one row per child
    assert_eq!(text.lines().count(), 1202);

    fs::write(&cfg, "[cohort]\nn_kids = 5\n").unwrap();
    let o = triage(&["--config", &cfg.display().to_string(), "generate", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("field=n_kids"), "{}", stderr(&o));
}

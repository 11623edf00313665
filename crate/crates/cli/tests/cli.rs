use std::fs;
use std::process::Command;

fn aad() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_aad"));
    c.env_remove("AAD_CACHE_DIR").env("RUST_LOG", "warn");
    c
}

#[test]
fn missing_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let status = aad()
        .current_dir(tmp.path())
        .args(["--config", "nope.json", "evaluate"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.json"), r#"{"train": {"epochz": 3}}"#).unwrap();
    let status = aad()
        .current_dir(tmp.path())
        .args(["--config", "cfg.json", "evaluate"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn empty_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir_all(tmp.path().join("data/slider/train")).unwrap();
    let status = aad()
        .current_dir(tmp.path())
        .args(["--dataset", "data", "ingest"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn synth_then_ingest_writes_manifest_and_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = aad().current_dir(tmp.path()).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["--dataset", "data", "--seed", "4", "synth-corpus"]);
    let resolved: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("out/config.resolved.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(resolved["dataset_root"], "data");
    assert_eq!(resolved["train"]["seed"], 4);

    run(&["--dataset", "data", "ingest"]);
    let manifest = fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("section_01_target_test_anomaly"));
}

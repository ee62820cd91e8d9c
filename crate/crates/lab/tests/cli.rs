use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_unlearnlab"))
}

#[test]
fn config_subcommand_prints_a_loadable_config() {
    let out = bin().args(["--preset", "paper", "--seed", "4", "config"]).output().unwrap();
    assert!(out.status.success());
    let cfg = unlearnlab::ExperimentConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.seed, 4);
    assert_eq!(cfg.preset, unlearnlab::Preset::Paper);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "unknown_key = 1\n").unwrap();
    let out = bin()
        .args(["--config", path.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap(), "run"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown"));

    let out = bin().args(["--config", "/nonexistent.toml", "pretrain"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plot_without_a_report_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["--out", dir.path().to_str().unwrap(), "plot"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

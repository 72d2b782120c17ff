use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn nagumo(out: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nagumo"));
    cmd.env("RUST_LOG", "warn").env_remove("NAGUMO_OUT_DIR");
    if let Some(dir) = out {
        cmd.arg("--out").arg(dir);
    }
    cmd.args(args).output().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn balanced_wave_stands_still() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("wave.toml");
    let out = nagumo(
        Some(dir.path()),
        &["wave", "-c", cfg.to_str().unwrap(), "--set", "params.a=0.5", "--set", "sigmas=[]"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(dir.path().join("wave.json"));
    assert_eq!(report["schema"], "nagumo.wave-report/1");
    assert!(report["c0"].as_f64().unwrap().abs() <= 1e-8);
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("wave.toml");
    let bad = nagumo(Some(dir.path()), &["wave", "-c", cfg.to_str().unwrap(), "--set", "params.a=1.5"]);
    assert_eq!(bad.status.code(), Some(2));
    let typo = nagumo(Some(dir.path()), &["wave", "-c", cfg.to_str().unwrap(), "--set", "grid.pionts=3"]);
    assert_eq!(typo.status.code(), Some(2));
    let missing = nagumo(Some(dir.path()), &["wave"]);
    assert_eq!(missing.status.code(), Some(2));
    let wrong = nagumo(Some(dir.path()), &["simulate", "-c", "/nonexistent/config.toml"]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn noiseless_ensemble_never_exits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("exit.toml");
    let out = nagumo(
        Some(dir.path()),
        &[
            "exit",
            "-c",
            cfg.to_str().unwrap(),
            "--set",
            "sigma_list=[0.0]",
            "--set",
            "n_paths=8",
            "--set",
            "t_horizon=2",
            "--set",
            "sim.grid.points=256",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = json(dir.path().join("exit.json"));
    for row in res["per_sigma"].as_array().unwrap() {
        assert_eq!(row["p_hat"].as_f64(), Some(0.0));
        assert_eq!(row["exit_count"].as_u64(), Some(0));
    }
    let fit = json(dir.path().join("fit.json"));
    assert!(fit["error"].is_string());
}

#[test]
fn noisy_path_has_phase_diffusion_and_replays() {
    let root = tempfile::tempdir().unwrap();
    let (first, second) = (root.path().join("a"), root.path().join("b"));
    let cfg = preset("simulate.toml");
    let out = nagumo(Some(&first), &["simulate", "-c", cfg.to_str().unwrap(), "--set", "sim.t_end=2", "--seed", "99"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(first.join("simulate.json"));
    assert!(report["gamma_quadratic_variation"].as_f64().unwrap() > 0.0);

    let manifest_path = first.join("manifest.toml");
    let manifest: toml::Table = std::fs::read_to_string(&manifest_path).unwrap().parse().unwrap();
    assert_eq!(manifest["seed"].as_integer(), Some(99));
    let out = nagumo(Some(&second), &["--threads", "2", "simulate", "-c", manifest_path.to_str().unwrap()]);
    assert!(out.status.success());
    let replay: toml::Table = std::fs::read_to_string(second.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["outputs"], replay["outputs"]);

    let out = nagumo(Some(&second), &["exit", "-c", manifest_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("chaining-ou.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_nagumo"))
        .env("RUST_LOG", "warn")
        .env("NAGUMO_OUT_DIR", dir.path())
        .args(["chaining", "-c", cfg.to_str().unwrap()])
        .args(["--set", "n_paths=100", "--set", "horizons=[10.0, 20.0, 40.0]", "--set", "metric_horizons=[]"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("growth.dat").exists());
    assert!(dir.path().join("manifest.toml").exists());
    assert!(!dir.path().join("metric.json").exists());
}

#[test]
fn failed_paths_make_the_ensemble_partial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("exit.toml");
    let out = nagumo(
        Some(dir.path()),
        &[
            "exit",
            "-c",
            cfg.to_str().unwrap(),
            "--set",
            "sigma_list=[0.0]",
            "--set",
            "n_paths=2",
            "--set",
            "eta=0.4",
            "--set",
            "t_horizon=40",
            "--set",
            "sim.grid.half_length=10",
            "--set",
            "sim.grid.points=128",
            "--set",
            "sim.dt=0.02",
        ],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let res = json(dir.path().join("exit.json"));
    assert_eq!(res["per_sigma"][0]["failed_count"].as_u64(), Some(2));
}

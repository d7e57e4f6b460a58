//! End-to-end runs of the `mgl` binary: formats and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgl::harness::{ExperimentConfig, LearnerSpec};
use mgl::kernels::KernelSpec;
use mgl::measures::AdversarialSpec;

fn mgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgl")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> PathBuf {
    let mut spec = AdversarialSpec::new(6, 0.05, 0.7);
    spec.lambda3 = 0.1;
    let mut cfg = ExperimentConfig::new(spec, LearnerSpec::Kernel { kernel: KernelSpec::sss(), c: 5.0 }, 150, 1000);
    cfg.n_seeds = 2;
    cfg.band.n_mc = 128;
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("train.csv");
    let model = dir.path().join("model.json");
    let out = mgl(&["gen", "--config", s(&cfg), "--n", "40", "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("x0,x1,x2,x3,x4,x5,y\n"));
    assert_eq!(text.lines().count(), 41);

    let out = mgl(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = mgl(&["eval", "--model", s(&model), "--data", s(&data), "--gamma", "0.05"]);
    assert!(out.status.success());
    let ev: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let err01 = ev["err01"].as_f64().unwrap();
    assert!(err01 <= ev["err_surrogate"].as_f64().unwrap());

    let out = mgl(&["eval", "--model", s(&model), "--config", s(&cfg), "--format", "csv"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("err01,err_margin,err_surrogate\n"));
}

#[test]
fn gap_and_integrality_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = mgl(&["gap", "--config", s(&cfg), "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let seeds = report["seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 2);
    assert_eq!((seeds[0]["seed"].as_u64(), seeds[1]["seed"].as_u64()), (Some(7), Some(8)));
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);

    let out = mgl(&["integrality", "--config", s(&cfg), "--format", "csv"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("seed,surrogate_optimum,"));
}

#[test]
fn sweep_env_threads_and_single_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_mgl"))
        .args(["sweep", "--config", s(&cfg)])
        .env("MGL_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.ends_with(',')), "{text}");
    assert!(text.starts_with("config_id,seed,gamma,d,kernel,C,loss,lambda2,lambda3,lambdaN,n_train,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mgl(&["gap"]).status.code(), Some(1));
    assert_eq!(mgl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mgl(&["--help"]).status.code(), Some(0));

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    assert_eq!(mgl(&["sweep", "--config", s(&empty)]).status.code(), Some(1));

    let cfg = small_config(dir.path());
    let mut value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    value["solver"]["max_iters"] = 3.into();
    value["solver"]["eps_opt"] = 1e-9.into();
    let tight = dir.path().join("tight.json");
    std::fs::write(&tight, value.to_string()).unwrap();
    let out = mgl(&["gap", "--config", s(&tight)]);
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["seeds"][0]["error"].as_str().unwrap().contains("gap"));

    let out = mgl(&["verify", "orthopoly"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
}

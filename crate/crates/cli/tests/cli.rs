use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use atpinn::analytic::{bs_price, MarketParams, OptionKind};
use atpinn::io;

const TINY: &str = r#"{
  "network": {"hidden_layers": 2, "hidden_width": 8},
  "sampler": {"interior": 24, "terminal": 12, "boundary": 12},
  "training": {"stage1_epochs": 300, "stage2_epochs": 30, "members": 2, "seed": 4},
  "fd": {"n_s": 240, "n_t": 100}
}"#;

fn write_config(dir: &Path, kind: &str, body: &str) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_str(body).unwrap();
    v["market"] = serde_json::json!({"rate": 0.05, "volatility": 0.2, "strike": 45.0, "maturity": 0.5, "kind": kind});
    v["output_dir"] = serde_json::json!(dir.join("out"));
    let p = dir.join(format!("{kind}.json"));
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn atpinn(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atpinn"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("ATPINN_OUTPUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn oracle_grids() {
    let dir = tempfile::tempdir().unwrap();
    let euro_cfg = write_config(dir.path(), "euro_put", "{}");
    ok(&atpinn(&euro_cfg, &["oracle"]));
    let euro = io::read_grid(dir.path().join("out/oracle.csv")).unwrap();
    assert_eq!(euro.len(), 201 * 3);
    let m = MarketParams::benchmark(OptionKind::EuroPut);
    for &(s, t, v) in &euro {
        assert_eq!(v, bs_price(&m, s, t).unwrap());
    }
    assert!(dir.path().join("out/manifest_oracle.json").exists());

    let amer_cfg = write_config(dir.path(), "amer_put", r#"{"fd": {"n_s": 600, "n_t": 300}}"#);
    ok(&atpinn(&amer_cfg, &["oracle"]));
    let amer = io::read_grid(dir.path().join("out/oracle.csv")).unwrap();
    assert_eq!(amer[0], (0.0, 0.0, 45.0));
    for (a, e) in amer.iter().zip(&euro) {
        assert!(a.2 >= e.2 - 1e-2, "{a:?} vs {e:?}");
    }
}

#[test]
fn train_ensemble_evaluate_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "euro_put", TINY);
    let out = dir.path().join("out");

    ok(&atpinn(&cfg, &["train"]));
    let first = std::fs::read(out.join("stage1.bspn")).unwrap();
    ok(&atpinn(&cfg, &["train"]));
    assert_eq!(std::fs::read(out.join("stage1.bspn")).unwrap(), first);
    let log = io::read_training_log(out.join("stage1_log.csv")).unwrap();
    assert_eq!(log.len(), 300);
    let avg = |r: &[atpinn::losses::LossBreakdown]| r.iter().map(|b| b.total).sum::<f64>() / r.len() as f64;
    assert!(avg(&log[280..]) < avg(&log[..20]));

    ok(&atpinn(&cfg, &["ensemble"]));
    let ens = io::read_ensemble(out.join("ensemble.csv")).unwrap();
    let m0 = io::read_grid(out.join("member_0.csv")).unwrap();
    let m1 = io::read_grid(out.join("member_1.csv")).unwrap();
    for ((e, a), b) in ens.iter().zip(&m0).zip(&m1) {
        assert!(e.sigma >= 0.0);
        assert!((e.mu - 0.5 * (a.2 + b.2)).abs() <= 1e-12 * (1.0 + e.mu.abs()));
        assert!(e.lower <= e.mu && e.mu <= e.upper);
    }
    assert!(out.join("member_1.bspn").exists());
    assert!(out.join("manifest_ensemble.json").exists());

    ok(&atpinn(&cfg, &["oracle"]));
    ok(&atpinn(&cfg, &["evaluate", "--prediction", out.join("ensemble.csv").to_str().unwrap(), "--reference", out.join("oracle.csv").to_str().unwrap()]));
    let reports: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 4);
    assert_eq!(io::read_errors(out.join("errors.csv")).unwrap().len(), 603);
    assert!(out.join("results.csv").exists());

    let o = atpinn(&cfg, &["predict", "--spot", "45", "--time", "0"]);
    ok(&o);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["members"], 2);
    assert!(v["sigma"].as_f64().unwrap() >= 0.0);
}

#[test]
fn identical_prediction_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "euro_put", "{}");
    let out = dir.path().join("out");
    ok(&atpinn(&cfg, &["oracle"]));
    let oracle = out.join("oracle.csv");
    ok(&atpinn(&cfg, &["evaluate", "--prediction", oracle.to_str().unwrap(), "--reference", oracle.to_str().unwrap()]));
    assert!(io::read_errors(out.join("errors.csv")).unwrap().iter().all(|r| r[2] == 0.0));
    let reports: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(reports.iter().all(|r| r["ev"] == 1.0));
    let zeros = io::read_grid(&oracle).unwrap().iter().filter(|r| r.2 == 0.0).count();
    assert!(zeros > 0);
    assert_eq!(reports.last().unwrap()["relative_excluded"], zeros);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "euro_put", r#"{"training": {"members": 1}}"#);
    let o = atpinn(&bad, &["oracle"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("training.members"));

    let cfg = write_config(dir.path(), "euro_put", "{}");
    let out = dir.path().join("out");
    ok(&atpinn(&cfg, &["oracle"]));
    io::write_grid(out.join("short.csv"), &[(0.0, 0.0, 1.0), (1.0, 0.0, 2.0)]).unwrap();
    let o = atpinn(&cfg, &["evaluate", "--prediction", out.join("short.csv").to_str().unwrap(), "--reference", out.join("oracle.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let stuck = write_config(dir.path(), "amer_put", r#"{"fd": {"n_s": 300, "n_t": 50, "psor": {"max_iter": 1}}}"#);
    assert_eq!(atpinn(&stuck, &["fd"]).status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_atpinn")).arg("no-such-command").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_dir_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "euro_put", "{}");
    let elsewhere = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_atpinn"))
        .arg("--config")
        .arg(&cfg)
        .arg("oracle")
        .env("ATPINN_OUTPUT_DIR", &elsewhere)
        .output()
        .unwrap();
    ok(&o);
    assert!(elsewhere.join("oracle.csv").exists());
    assert!(!dir.path().join("out/oracle.csv").exists());
}

//! Command-line driver.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atpinn::analytic::bs_price;
use atpinn::config::RunConfig;
use atpinn::fd::{crank_nicolson, psor_american_put, FdGrid};
use atpinn::io::{self, Manifest};
use atpinn::metrics::{bands, ensemble_stats, metrics_for, MetricReport, Slice};
use atpinn::network::checkpoint;
use atpinn::network::Surrogate;
use atpinn::trainer::{collocation_for, ensemble_predict, predict_projected, run_ensemble, train_stage1};
use atpinn::{Error, OptionKind, Result};
use clap::{Parser, Subcommand};

/// Overrides `output_dir` from the config file.
const OUT_DIR_ENV: &str = "ATPINN_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "atpinn", version, about = "Physics-informed Black-Scholes pricer with ensemble bands")]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reference prices on the evaluation grid (closed form, or PSOR for American puts).
    Oracle,
    /// Finite-difference prices on the evaluation grid (Crank-Nicolson or PSOR).
    Fd,
    /// Stage 1: fit the plain PINN.
    Train,
    /// Stage 2: anchored ensemble around a stage-1 checkpoint.
    Ensemble {
        /// Stage-1 checkpoint; defaults to `<output_dir>/stage1.bspn`.
        #[arg(long)]
        stage1: Option<PathBuf>,
    },
    /// Compare a prediction CSV against a reference CSV.
    Evaluate {
        #[arg(long)]
        prediction: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Price one point with the trained ensemble in the output directory.
    Predict {
        #[arg(long)]
        spot: f64,
        #[arg(long, default_value_t = 0.0)]
        time: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
        cfg.output_dir = PathBuf::from(dir);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    match cli.command {
        Command::Oracle => cmd_oracle(&cfg),
        Command::Fd => cmd_fd(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Ensemble { stage1 } => cmd_ensemble(&cfg, stage1),
        Command::Evaluate { prediction, reference } => cmd_evaluate(&cfg, &prediction, &reference),
        Command::Predict { spot, time } => cmd_predict(&cfg, spot, time),
    }
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn fd_solution(cfg: &RunConfig) -> Result<FdGrid> {
    match cfg.market.kind {
        OptionKind::AmerPut => psor_american_put(&cfg.market, &cfg.fd_grid(), cfg.fd.psor),
        _ => crank_nicolson(&cfg.market, &cfg.fd_grid()),
    }
}

fn sample_grid(grid: &FdGrid, points: &[(f64, f64)]) -> Result<Vec<(f64, f64, f64)>> {
    points.iter().map(|&(s, t)| Ok((s, t, grid.interpolate(s, t)?))).collect()
}

fn cmd_oracle(cfg: &RunConfig) -> Result<()> {
    let points = cfg.eval_points();
    let rows = if cfg.market.kind.is_american() {
        sample_grid(&fd_solution(cfg)?, &points)?
    } else {
        points
            .iter()
            .map(|&(s, t)| Ok((s, t, bs_price(&cfg.market, s, t)?)))
            .collect::<Result<Vec<_>>>()?
    };
    finish_grid(cfg, "oracle", rows)
}

fn cmd_fd(cfg: &RunConfig) -> Result<()> {
    let rows = sample_grid(&fd_solution(cfg)?, &cfg.eval_points())?;
    finish_grid(cfg, "fd", rows)
}

fn finish_grid(cfg: &RunConfig, name: &str, rows: Vec<(f64, f64, f64)>) -> Result<()> {
    let file = format!("{name}.csv");
    io::write_grid(out(cfg, &file), &rows)?;
    let mut m = Manifest::new(name, cfg, vec![]);
    m.artifacts.push(file.clone());
    m.save(out(cfg, &format!("manifest_{name}.json")))?;
    println!("{}", out(cfg, &file).display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let plan = cfg.plan();
    log::info!("stage 1: {} epochs, {} parameters", plan.stage1_epochs, plan.network.param_count());
    let res = train_stage1(&plan)?;
    checkpoint::save(res.net.mlp(), out(cfg, "stage1.bspn"))?;
    io::write_training_log(out(cfg, "stage1_log.csv"), &res.log)?;
    let pts = cfg.eval_points();
    let pred = predict_projected(&res.net, &pts, plan.project)?;
    let rows: Vec<_> = pts.iter().zip(&pred).map(|(&(s, t), &v)| (s, t, v)).collect();
    io::write_grid(out(cfg, "stage1.csv"), &rows)?;
    io::write_collocation(out(cfg, "stage1_collocation.csv"), &collocation_for(&plan, plan.seed, 0)?)?;
    let mut m = Manifest::new("train", cfg, vec![plan.seed]);
    m.artifacts = ["stage1.bspn", "stage1_log.csv", "stage1.csv", "stage1_collocation.csv"].map(String::from).to_vec();
    m.notes.push(format!("final total loss {:e}", res.final_loss.total));
    m.save(out(cfg, "manifest_train.json"))?;
    log::info!("stage 1 done, final loss {:.4e}", res.final_loss.total);
    Ok(())
}

fn cmd_ensemble(cfg: &RunConfig, stage1: Option<PathBuf>) -> Result<()> {
    let plan = cfg.plan();
    let path = stage1.unwrap_or_else(|| out(cfg, "stage1.bspn"));
    let theta1 = checkpoint::load(&path)
        .map_err(|e| Error::Precondition(format!("stage-1 checkpoint {}: {e}", path.display())))?;
    log::info!("stage 2: {} members x {} epochs", plan.members, plan.stage2_epochs);
    let members = run_ensemble(&plan, &theta1)?;
    let pts = cfg.eval_points();
    let mut m = Manifest::new("ensemble", cfg, members.iter().map(|o| o.seed).collect());
    let mut rows = Vec::with_capacity(members.len());
    for o in &members {
        let ck = format!("member_{}.bspn", o.index);
        let csv = format!("member_{}.csv", o.index);
        let logf = format!("member_{}_log.csv", o.index);
        checkpoint::save(o.stage.net.mlp(), out(cfg, &ck))?;
        io::write_training_log(out(cfg, &logf), &o.stage.log)?;
        let pred = predict_projected(&o.stage.net, &pts, plan.project)?;
        io::write_grid(out(cfg, &csv), &pts.iter().zip(&pred).map(|(&(s, t), &v)| (s, t, v)).collect::<Vec<_>>())?;
        m.notes.push(format!("member {} anchor distance {:e}", o.index, o.anchor_distance));
        m.artifacts.extend([ck, csv, logf]);
        rows.push(pred);
    }
    let stats = ensemble_stats(&pts, &rows)?;
    let b = bands(&stats, cfg.evaluation.band_k, &cfg.market);
    io::write_ensemble(out(cfg, "ensemble.csv"), &stats, &b)?;
    m.artifacts.push("ensemble.csv".into());
    m.save(out(cfg, "manifest_ensemble.json"))?;
    println!("{}", out(cfg, "ensemble.csv").display());
    Ok(())
}

/// Prediction values and spreads from either a grid or an ensemble CSV.
fn read_prediction(path: &Path) -> Result<(Vec<(f64, f64)>, Vec<f64>, Vec<f64>)> {
    match io::read_ensemble(path) {
        Ok(rows) => Ok((
            rows.iter().map(|r| (r.s, r.t)).collect(),
            rows.iter().map(|r| r.mu).collect(),
            rows.iter().map(|r| r.sigma).collect(),
        )),
        Err(Error::Format(_)) => {
            let rows = io::read_grid(path)?;
            Ok((rows.iter().map(|r| (r.0, r.1)).collect(), rows.iter().map(|r| r.2).collect(), vec![0.0; rows.len()]))
        }
        Err(e) => Err(e),
    }
}

fn same_point(a: (f64, f64), b: (f64, f64)) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()));
    close(a.0, b.0) && close(a.1, b.1)
}

fn cmd_evaluate(cfg: &RunConfig, prediction: &Path, reference: &Path) -> Result<()> {
    let (pts, yhat, sigma) = read_prediction(prediction)?;
    let reference = io::read_grid(reference)?;
    if reference.len() != pts.len() || !reference.iter().zip(&pts).all(|(r, &p)| same_point((r.0, r.1), p)) {
        return Err(Error::Shape(format!(
            "prediction grid ({} points) does not match reference grid ({} points)",
            pts.len(),
            reference.len()
        )));
    }
    let y: Vec<f64> = reference.iter().map(|r| r.2).collect();
    let err: Vec<f64> = yhat.iter().zip(&y).map(|(p, t)| p - t).collect();
    io::write_errors(out(cfg, "errors.csv"), &pts, &err, &sigma)?;

    let mut times: Vec<f64> = Vec::new();
    for &(_, t) in &pts {
        if !times.iter().any(|&u| (u - t).abs() <= 1e-12) {
            times.push(t);
        }
    }
    let mut reports: Vec<MetricReport> = Vec::new();
    for t in times {
        let idx: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i].1 - t).abs() <= 1e-12).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let ps: Vec<f64> = idx.iter().map(|&i| yhat[i]).collect();
        reports.push(metrics_for(&ys, &ps, Slice::Time(t))?);
    }
    reports.push(metrics_for(&y, &yhat, Slice::Full)?);
    io::write_json(out(cfg, "metrics.json"), &reports)?;
    let run_id: String = io::config_hash(cfg).chars().take(12).collect();
    io::append_results(out(cfg, "results.csv"), &run_id, cfg.market.kind.name(), &reports)?;
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, spot: f64, time: f64) -> Result<()> {
    let mut nets = Vec::new();
    for m in 0.. {
        let p = out(cfg, &format!("member_{m}.bspn"));
        if !p.exists() {
            break;
        }
        nets.push(Surrogate::new(checkpoint::load(p)?, cfg.market));
    }
    let pt = [(spot, time)];
    for n in &nets {
        n.check_input(spot, time)?;
    }
    let value = if nets.len() >= 2 {
        let (_, e) = ensemble_predict(&nets, &pt, cfg.training.project)?;
        let b = bands(&e, cfg.evaluation.band_k, &cfg.market);
        serde_json::json!({
            "S": spot, "t": time, "mu": e.mean[0], "sigma": e.std[0],
            "lower": b.lower[0], "upper": b.upper[0], "members": nets.len(),
        })
    } else {
        let p = out(cfg, "stage1.bspn");
        if !p.exists() {
            return Err(Error::Precondition(format!(
                "no member or stage-1 checkpoints in {}",
                cfg.output_dir.display()
            )));
        }
        let net = Surrogate::new(checkpoint::load(p)?, cfg.market);
        net.check_input(spot, time)?;
        let v = predict_projected(&net, &pt, cfg.training.project)?[0];
        serde_json::json!({ "S": spot, "t": time, "mu": v, "sigma": null, "members": 0 })
    };
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

//! Run configuration: one JSON document with every default filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytic::{MarketParams, OptionKind};
use crate::error::{Error, Result};
use crate::fd::{GridSpec, PsorSettings};
use crate::losses::LossWeights;
use crate::network::{InputTransform, MlpConfig};
use crate::sampler::{Domain, SamplerConfig};
use crate::trainer::{AdamConfig, AnchorMode, TrainPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub members: usize,
    pub resample_every: usize,
    pub seed: u64,
    pub anchor_mode: AnchorMode,
    pub project: bool,
    pub adam: AdamConfig,
    pub stage2_adam: Option<AdamConfig>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 50_000,
            stage2_epochs: 5_000,
            members: 30,
            resample_every: 0,
            seed: 0,
            anchor_mode: AnchorMode::Shared,
            project: true,
            adam: AdamConfig::default(),
            stage2_adam: None,
        }
    }
}

/// Uniform spot grid crossed with time slices `t = f * T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalGrid {
    pub points: usize,
    /// Upper spot; `3K` when absent.
    pub s_max: Option<f64>,
    pub time_fractions: Vec<f64>,
    /// Band half-width in standard deviations.
    pub band_k: f64,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self { points: 201, s_max: None, time_fractions: vec![0.0, 0.5, 1.0], band_k: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdConfig {
    pub n_s: usize,
    pub n_t: usize,
    /// Upper spot; `3K` when absent.
    pub s_max: Option<f64>,
    pub psor: PsorSettings,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { n_s: 1200, n_t: 1000, s_max: None, psor: PsorSettings::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketParams,
    /// `[0, 3K] x [0, T]` when absent.
    pub domain: Option<Domain>,
    pub network: MlpConfig,
    pub sampler: SamplerConfig,
    pub weights: LossWeights,
    pub training: TrainingConfig,
    pub evaluation: EvalGrid,
    pub fd: FdConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            market: MarketParams::benchmark(OptionKind::EuroPut),
            domain: None,
            network: MlpConfig::default(),
            sampler: SamplerConfig::default(),
            weights: LossWeights::default(),
            training: TrainingConfig::default(),
            evaluation: EvalGrid::default(),
            fd: FdConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn at(path: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) if msg.starts_with(path) => Error::Config(msg),
        Error::Config(msg) => Error::Config(format!("{path}: {msg}")),
        other => other,
    }
}

fn check(ok: bool, path: &str, msg: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{path}: {msg}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn domain(&self) -> Domain {
        self.domain.unwrap_or_else(|| Domain::for_market(&self.market))
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate().map_err(|e| at("market", e))?;
        let d = self.domain();
        d.validate().map_err(|e| at("domain", e))?;
        check(
            (d.maturity - self.market.maturity).abs() <= 1e-12 * self.market.maturity,
            "domain.maturity",
            "must equal market.maturity",
        )?;
        self.network.validate().map_err(|e| at("network", e))?;
        if self.network.input_transform == InputTransform::LogS {
            check(d.s_min > 0.0, "domain.s_min", "log_s input transform needs s_min > 0")?;
        }
        self.sampler.validate().map_err(|e| at("sampler", e))?;
        self.weights.validate().map_err(|e| at("weights", e))?;
        let t = &self.training;
        check(t.stage1_epochs >= 1, "training.stage1_epochs", "must be >= 1")?;
        check(t.stage2_epochs >= 1, "training.stage2_epochs", "must be >= 1")?;
        check(t.members >= 2, "training.members", "bands need at least 2 members")?;
        t.adam.validate().map_err(|e| at("training.adam", e))?;
        if let Some(a) = &t.stage2_adam {
            a.validate().map_err(|e| at("training.stage2_adam", e))?;
        }
        if let AnchorMode::Perturbed { scale } = t.anchor_mode {
            check(scale >= 0.0 && scale.is_finite(), "training.anchor_mode.scale", "must be >= 0")?;
        }
        let e = &self.evaluation;
        check(e.points >= 2, "evaluation.points", "must be >= 2")?;
        if let Some(s) = e.s_max {
            check(s > 0.0 && s.is_finite(), "evaluation.s_max", "must be > 0")?;
        }
        check(!e.time_fractions.is_empty(), "evaluation.time_fractions", "must not be empty")?;
        check(
            e.time_fractions.iter().all(|f| (0.0..=1.0).contains(f)),
            "evaluation.time_fractions",
            "entries must lie in [0, 1]",
        )?;
        check(e.band_k > 0.0 && e.band_k.is_finite(), "evaluation.band_k", "must be > 0")?;
        self.fd_grid().validate().map_err(|e| at("fd", e))?;
        let p = &self.fd.psor;
        check(p.omega > 0.0 && p.omega < 2.0, "fd.psor.omega", "must lie in (0, 2)")?;
        check(p.tol > 0.0, "fd.psor.tol", "must be > 0")?;
        check(p.max_iter >= 1, "fd.psor.max_iter", "must be >= 1")?;
        Ok(())
    }

    pub fn plan(&self) -> TrainPlan {
        let t = &self.training;
        TrainPlan {
            market: self.market,
            domain: self.domain(),
            network: self.network,
            sampler: self.sampler,
            weights: self.weights,
            adam: t.adam,
            stage2_adam: t.stage2_adam,
            stage1_epochs: t.stage1_epochs,
            stage2_epochs: t.stage2_epochs,
            members: t.members,
            resample_every: t.resample_every,
            seed: t.seed,
            anchor_mode: t.anchor_mode,
            project: t.project,
        }
    }

    pub fn fd_grid(&self) -> GridSpec {
        GridSpec::new(self.fd.n_s, self.fd.n_t, self.fd.s_max.unwrap_or(3.0 * self.market.strike))
    }

    /// Time slices of the evaluation grid.
    pub fn eval_times(&self) -> Vec<f64> {
        self.evaluation.time_fractions.iter().map(|f| f * self.market.maturity).collect()
    }

    /// Evaluation points, time-major: every spot at the first slice, then the next.
    pub fn eval_points(&self) -> Vec<(f64, f64)> {
        let n = self.evaluation.points;
        let hi = self.evaluation.s_max.unwrap_or(3.0 * self.market.strike);
        let mut pts = Vec::with_capacity(n * self.evaluation.time_fractions.len());
        for t in self.eval_times() {
            for i in 0..n {
                pts.push((hi * i as f64 / (n - 1) as f64, t));
            }
        }
        pts
    }
}

//! Two-stage training: a plain PINN fit followed by anchored fine-tuning of
//! an ensemble of members that all start from the stage-1 weights.

mod adam;

pub use adam::{AdamConfig, AdamState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{payoff, MarketParams};
use crate::error::{Error, Result};
use crate::losses::{at_pinn_loss, at_pinn_loss_grad, pinn_loss, pinn_loss_grad, LossBreakdown, LossWeights};
use crate::metrics::{ensemble_stats, EnsemblePrediction};
use crate::network::batch::predict;
use crate::network::{Mlp, MlpConfig, Surrogate};
use crate::sampler::{sample, CollocationSet, Domain, SamplerConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AnchorMode {
    /// Every member is pulled toward the stage-1 weights.
    #[default]
    Shared,
    /// Member anchors are the stage-1 weights plus Gaussian noise with
    /// standard deviation `scale * RMS(theta_1)`.
    Perturbed { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub market: MarketParams,
    pub domain: Domain,
    pub network: MlpConfig,
    pub sampler: SamplerConfig,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Optimizer used for the members. When absent the members continue the
    /// stage-1 decay: same settings, starting at the rate reached after `E1` steps.
    pub stage2_adam: Option<AdamConfig>,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub members: usize,
    /// Draw a fresh collocation set every this many epochs; 0 keeps one set.
    pub resample_every: usize,
    pub seed: u64,
    pub anchor_mode: AnchorMode,
    /// Apply `max(V, payoff)` to American predictions.
    pub project: bool,
}

impl TrainPlan {
    pub fn new(market: MarketParams) -> Self {
        Self {
            market,
            domain: Domain::for_market(&market),
            network: MlpConfig::default(),
            sampler: SamplerConfig::default(),
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            stage2_adam: None,
            stage1_epochs: 50_000,
            stage2_epochs: 5_000,
            members: 30,
            resample_every: 0,
            seed: 0,
            anchor_mode: AnchorMode::Shared,
            project: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.domain.validate()?;
        self.network.validate()?;
        self.sampler.validate()?;
        self.weights.validate()?;
        self.adam.validate()?;
        if let Some(a) = &self.stage2_adam {
            a.validate()?;
        }
        if self.stage1_epochs == 0 || self.stage2_epochs == 0 || self.members == 0 {
            return Err(Error::Config("stage1_epochs, stage2_epochs and members must be >= 1".into()));
        }
        if let AnchorMode::Perturbed { scale } = self.anchor_mode {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Error::Config(format!("anchor scale {scale} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn stage2_optimizer(&self) -> AdamConfig {
        self.stage2_adam.unwrap_or(AdamConfig {
            learning_rate: self.adam.rate_at(self.stage1_epochs as u64),
            ..self.adam
        })
    }
}

/// Deterministic, well-mixed child seed (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const COLLOCATION_STREAM: u64 = 1;
const MEMBER_STREAM: u64 = 1 << 32;

/// Seed of ensemble member `m` under `plan.seed`.
pub fn member_seed(plan_seed: u64, m: usize) -> u64 {
    derive_seed(plan_seed, MEMBER_STREAM + m as u64)
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub net: Surrogate,
    /// Loss at the start of every epoch, before that epoch's update.
    pub log: Vec<LossBreakdown>,
    /// Loss after the last update, on the last collocation set.
    pub final_loss: LossBreakdown,
}

fn divergence(epoch: usize, b: &LossBreakdown, what: &str) -> Error {
    Error::Divergence {
        epoch,
        detail: format!(
            "{what}: residual={:e} terminal={:e} boundary={:e} obstacle={:e} anchor={:e} total={:e}",
            b.residual, b.terminal, b.boundary, b.obstacle, b.anchor, b.total
        ),
    }
}

/// The `k`-th collocation set drawn during a stage seeded with `seed`.
pub fn collocation_for(plan: &TrainPlan, seed: u64, k: u64) -> Result<CollocationSet> {
    sample(&plan.market, &plan.domain, &plan.sampler, derive_seed(seed, COLLOCATION_STREAM + k))
}

fn optimise(
    mut net: Surrogate,
    plan: &TrainPlan,
    adam: AdamConfig,
    epochs: usize,
    seed: u64,
    anchor: Option<&[f64]>,
) -> Result<StageOutcome> {
    let draw = |k: u64| collocation_for(plan, seed, k);
    let mut coll: CollocationSet = draw(0)?;
    let mut state = AdamState::new(net.mlp().param_count(), adam);
    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        if plan.resample_every > 0 && epoch > 0 && epoch % plan.resample_every == 0 {
            coll = draw((epoch / plan.resample_every) as u64)?;
        }
        let (b, g) = match anchor {
            Some(a) => at_pinn_loss_grad(&net, &coll, &plan.weights, a)?,
            None => pinn_loss_grad(&net, &coll, &plan.weights)?,
        };
        if !b.is_finite() {
            return Err(divergence(epoch + 1, &b, "non-finite loss"));
        }
        if let Err(Error::Numerical(msg)) = state.update(net.mlp_mut().params_mut(), &g) {
            return Err(divergence(epoch + 1, &b, &msg));
        }
        log.push(b);
        if epoch % 1000 == 0 {
            log::debug!("epoch {epoch}: total {:.6e}", b.total);
        }
    }
    let final_loss = match anchor {
        Some(a) => at_pinn_loss(&net, &coll, &plan.weights, a)?,
        None => pinn_loss(&net, &coll, &plan.weights)?,
    };
    if !final_loss.is_finite() {
        return Err(divergence(epochs, &final_loss, "non-finite loss"));
    }
    Ok(StageOutcome { net, log, final_loss })
}

/// Stage 1: `E1` full-batch Adam steps on the plain PINN loss from a
/// Glorot initialisation seeded by `plan.seed`.
pub fn train_stage1(plan: &TrainPlan) -> Result<StageOutcome> {
    plan.validate()?;
    let net = Surrogate::init(plan.network, plan.market, plan.seed)?;
    optimise(net, plan, plan.adam, plan.stage1_epochs, plan.seed, None)
}

#[derive(Clone, Debug)]
pub struct MemberOutcome {
    pub index: usize,
    pub seed: u64,
    pub stage: StageOutcome,
    pub anchor_distance: f64,
}

/// Stage 2 for one member: start at `theta1`, minimise the anchored loss on a
/// collocation set drawn from `seed`.
pub fn train_stage2_member(theta1: &Mlp, anchor: &[f64], plan: &TrainPlan, seed: u64) -> Result<StageOutcome> {
    plan.validate()?;
    if theta1.config() != &plan.network {
        return Err(Error::Shape("stage-1 network does not match the plan's architecture".into()));
    }
    let net = Surrogate::new(theta1.clone(), plan.market);
    optimise(net, plan, plan.stage2_optimizer(), plan.stage2_epochs, seed, Some(anchor))
}

/// Anchor for member `m`.
pub fn member_anchor(theta1: &[f64], mode: AnchorMode, seed: u64) -> Result<Vec<f64>> {
    match mode {
        AnchorMode::Shared => Ok(theta1.to_vec()),
        AnchorMode::Perturbed { scale } => {
            let rms = (theta1.iter().map(|x| x * x).sum::<f64>() / theta1.len().max(1) as f64).sqrt();
            let normal = Normal::new(0.0, scale * rms).map_err(|e| Error::Config(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
            Ok(theta1.iter().map(|x| x + normal.sample(&mut rng)).collect())
        }
    }
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Trains `plan.members` members with seeds derived from `plan.seed`.
pub fn run_ensemble(plan: &TrainPlan, theta1: &Mlp) -> Result<Vec<MemberOutcome>> {
    let seeds: Vec<u64> = (0..plan.members).map(|m| member_seed(plan.seed, m)).collect();
    run_ensemble_with_seeds(plan, theta1, &seeds)
}

/// Trains one member per seed in parallel. Any member failure fails the run.
pub fn run_ensemble_with_seeds(plan: &TrainPlan, theta1: &Mlp, seeds: &[u64]) -> Result<Vec<MemberOutcome>> {
    plan.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("ensemble needs at least one member seed".into()));
    }
    let results: Vec<Result<MemberOutcome>> = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| {
            let anchor = member_anchor(theta1.params(), plan.anchor_mode, seed)?;
            let stage = train_stage2_member(theta1, &anchor, plan, seed)?;
            let anchor_distance = l2_distance(stage.net.mlp().params(), &anchor);
            Ok(MemberOutcome { index, seed, stage, anchor_distance })
        })
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for (m, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => out.push(o),
            Err(e) => {
                log::error!("ensemble member {m} failed: {e}");
                return Err(e);
            }
        }
    }
    Ok(out)
}

/// Predictions of one net, projected onto `V >= payoff` for American options
/// when `project` is set.
pub fn predict_projected(net: &Surrogate, points: &[(f64, f64)], project: bool) -> Result<Vec<f64>> {
    let mut v = predict(net, points)?;
    let m: &MarketParams = net.market();
    if project && m.kind.is_american() {
        for (y, &(s, _)) in v.iter_mut().zip(points) {
            *y = y.max(payoff(m.kind, s, m.strike));
        }
    }
    Ok(v)
}

/// Per-member predictions and their pointwise mean and spread.
pub fn ensemble_predict(
    members: &[Surrogate],
    points: &[(f64, f64)],
    project: bool,
) -> Result<(Vec<Vec<f64>>, EnsemblePrediction)> {
    let rows = members
        .iter()
        .map(|n| predict_projected(n, points, project))
        .collect::<Result<Vec<_>>>()?;
    let stats = ensemble_stats(points, &rows)?;
    Ok((rows, stats))
}

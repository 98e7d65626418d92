//! Residual operator and training objectives.
//!
//! ```text
//! R[V](S, t)  = V_t + 1/2 sigma^2 S^2 V_SS + r S V_S - r V
//! L_PINN      = l_r mean(R^2) + l_i mean((V(S,T) - payoff)^2) + l_b mean((V - h)^2)
//!               [+ l_obs mean(max(payoff - V, 0)^2) for the American put]
//! L_AT-PINN   = L_PINN + l_anc / N_theta * |theta - theta_anc|^2
//! ```

use serde::{Deserialize, Serialize};

use crate::analytic::{payoff, MarketParams};
use crate::autodiff::{input_derivatives, DualOfDual, GraphBuilder, InputDerivatives, Scalar};
use crate::error::{Error, Result};
use crate::network::batch::JetBatch;
use crate::network::Surrogate;
use crate::sampler::CollocationSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub residual: f64,
    pub terminal: f64,
    pub boundary: f64,
    pub anchor: f64,
    pub obstacle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            residual: 1.0,
            terminal: 10.0,
            boundary: 10.0,
            anchor: 1e-3,
            obstacle: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("residual", self.residual),
            ("terminal", self.terminal),
            ("boundary", self.boundary),
        ] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("weights.{name} = {w} must be > 0")));
            }
        }
        for (name, w) in [("anchor", self.anchor), ("obstacle", self.obstacle)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("weights.{name} = {w} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss components and the weighted total.
///
/// `anchor` already includes its `l_anc / N_theta` factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub residual: f64,
    pub terminal: f64,
    pub boundary: f64,
    pub obstacle: f64,
    pub anchor: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.residual, self.terminal, self.boundary, self.obstacle, self.anchor, self.total]
            .iter()
            .all(|x| x.is_finite())
    }
}

fn residual_of(market: &MarketParams, s: f64, d: &InputDerivatives) -> f64 {
    let sig2 = market.volatility * market.volatility;
    d.dt + 0.5 * sig2 * s * s * d.dss + market.rate * s * d.ds - market.rate * d.v
}

/// Black-Scholes residual of the surrogate at one point.
pub fn bs_residual(net: &Surrogate, s: f64, t: f64) -> Result<f64> {
    let d = input_derivatives(net, s, t)?;
    Ok(residual_of(net.market(), s, &d))
}

/// Mean squared obstacle violation `max(payoff - V, 0)^2` over `points`.
pub fn obstacle_penalty(net: &Surrogate, points: &[(f64, f64)]) -> Result<f64> {
    if points.is_empty() {
        return Ok(0.0);
    }
    let m = net.market();
    let mut acc = 0.0;
    for &(s, t) in points {
        let gap = (payoff(m.kind, s, m.strike) - net.forward(s, t)?).max(0.0);
        acc += gap * gap;
    }
    Ok(acc / points.len() as f64)
}

/// `l_anc / N * |theta - anchor|^2`.
pub fn anchor_penalty(theta: &[f64], anchor: &[f64], lambda: f64) -> Result<f64> {
    if theta.len() != anchor.len() {
        return Err(Error::Shape(format!(
            "anchor has {} entries, parameters have {}",
            anchor.len(),
            theta.len()
        )));
    }
    if theta.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = theta.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(lambda / theta.len() as f64 * sq)
}

fn check_nonempty(c: &CollocationSet) -> Result<()> {
    if c.interior.is_empty() || c.terminal.is_empty() || c.boundary.is_empty() {
        return Err(Error::Precondition("collocation sets must be non-empty".into()));
    }
    if c.terminal.len() != c.terminal_targets.len() || c.boundary.len() != c.boundary_targets.len() {
        return Err(Error::Shape("collocation targets do not match their points".into()));
    }
    Ok(())
}

fn evaluate(
    net: &Surrogate,
    coll: &CollocationSet,
    weights: &LossWeights,
    anchor: Option<&[f64]>,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    check_nonempty(coll)?;
    let m = net.market();
    let american = m.kind.is_american();
    let value_pts: Vec<(f64, f64)> = coll.terminal.iter().chain(&coll.boundary).copied().collect();
    let batch = JetBatch::forward(net, &value_pts, &coll.interior)?;

    let (nr, ni, nb) = (coll.interior.len(), coll.terminal.len(), coll.boundary.len());
    let sig2 = m.volatility * m.volatility;
    let mut out = LossBreakdown::default();
    let mut jet_adj = vec![InputDerivatives::default(); nr];
    let mut value_adj = vec![0.0; ni + nb];

    for (k, (&(s, t), d)) in coll.interior.iter().zip(&batch.jets).enumerate() {
        let _ = t;
        let r = residual_of(m, s, d);
        out.residual += r * r;
        let g = 2.0 * weights.residual * r / nr as f64;
        let a = &mut jet_adj[k];
        a.v = -m.rate * g;
        a.ds = m.rate * s * g;
        a.dss = 0.5 * sig2 * s * s * g;
        a.dt = g;
        if american {
            let gap = payoff(m.kind, s, m.strike) - d.v;
            if gap > 0.0 {
                out.obstacle += gap * gap;
                a.v -= 2.0 * weights.obstacle * gap / nr as f64;
            }
        }
    }
    out.residual /= nr as f64;
    out.obstacle /= nr as f64;

    for (i, (&v, &y)) in batch.values[..ni].iter().zip(&coll.terminal_targets).enumerate() {
        let e = v - y;
        out.terminal += e * e;
        value_adj[i] = 2.0 * weights.terminal * e / ni as f64;
    }
    out.terminal /= ni as f64;
    for (i, (&v, &h)) in batch.values[ni..].iter().zip(&coll.boundary_targets).enumerate() {
        let e = v - h;
        out.boundary += e * e;
        value_adj[ni + i] = 2.0 * weights.boundary * e / nb as f64;
    }
    out.boundary /= nb as f64;

    out.total = weights.residual * out.residual + weights.terminal * out.terminal + weights.boundary * out.boundary;
    if american {
        out.total += weights.obstacle * out.obstacle;
    }
    if let Some(anc) = anchor {
        out.anchor = anchor_penalty(net.mlp().params(), anc, weights.anchor)?;
        out.total += out.anchor;
    }

    if !with_grad {
        return Ok((out, None));
    }
    let mut grad = batch.backward(net, &value_adj, &jet_adj)?;
    if let Some(anc) = anchor {
        let c = 2.0 * weights.anchor / anc.len() as f64;
        for ((g, th), a) in grad.iter_mut().zip(net.mlp().params()).zip(anc) {
            *g += c * (th - a);
        }
    }
    Ok((out, Some(grad)))
}

/// Composite PINN loss.
pub fn pinn_loss(net: &Surrogate, coll: &CollocationSet, weights: &LossWeights) -> Result<LossBreakdown> {
    Ok(evaluate(net, coll, weights, None, false)?.0)
}

/// Composite PINN loss and its parameter gradient.
pub fn pinn_loss_grad(net: &Surrogate, coll: &CollocationSet, weights: &LossWeights) -> Result<(LossBreakdown, Vec<f64>)> {
    let (b, g) = evaluate(net, coll, weights, None, true)?;
    Ok((b, g.expect("gradient requested")))
}

/// Anchored loss.
pub fn at_pinn_loss(net: &Surrogate, coll: &CollocationSet, weights: &LossWeights, anchor: &[f64]) -> Result<LossBreakdown> {
    Ok(evaluate(net, coll, weights, Some(anchor), false)?.0)
}

/// Anchored loss and its parameter gradient.
pub fn at_pinn_loss_grad(
    net: &Surrogate,
    coll: &CollocationSet,
    weights: &LossWeights,
    anchor: &[f64],
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (b, g) = evaluate(net, coll, weights, Some(anchor), true)?;
    Ok((b, g.expect("gradient requested")))
}

/// The same objective recorded point by point on the scalar tape.
///
/// Independent of the batched engine and far slower; meant for cross-checks
/// on small networks.
pub fn reference_loss_grad(
    net: &Surrogate,
    coll: &CollocationSet,
    weights: &LossWeights,
    anchor: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    check_nonempty(coll)?;
    let m = *net.market();
    let b = GraphBuilder::new();
    let theta: Vec<_> = net.mlp().params().iter().map(|&p| b.leaf(p)).collect();
    let zero = b.constant(0.0);
    let sig2 = m.volatility * m.volatility;

    let mut res = zero;
    let mut obs = zero;
    for &(s, t) in &coll.interior {
        net.check_input(s, t)?;
        let param = |i: usize| DualOfDual::constant(theta[i]);
        let along_s = net.price_generic(param, DualOfDual::seed(b.constant(s)), DualOfDual::constant(b.constant(t)));
        let along_t = net.price_generic(param, DualOfDual::constant(b.constant(s)), DualOfDual::seed(b.constant(t)));
        let v = along_s.v;
        let r = along_t.d1 + along_s.d2.scale(0.5 * sig2 * s * s) + along_s.d1.scale(m.rate * s) - v.scale(m.rate);
        res = res + r * r;
        if m.kind.is_american() {
            let gap = (-v).shift(payoff(m.kind, s, m.strike)).max_by_primal(zero);
            obs = obs + gap * gap;
        }
    }
    let mut term = zero;
    for (&(s, t), &y) in coll.terminal.iter().zip(&coll.terminal_targets) {
        let e = net.price_generic(|i| theta[i], b.constant(s), b.constant(t)).shift(-y);
        term = term + e * e;
    }
    let mut bound = zero;
    for (&(s, t), &h) in coll.boundary.iter().zip(&coll.boundary_targets) {
        let e = net.price_generic(|i| theta[i], b.constant(s), b.constant(t)).shift(-h);
        bound = bound + e * e;
    }
    let nr = coll.interior.len() as f64;
    let mut total = res.scale(weights.residual / nr)
        + term.scale(weights.terminal / coll.terminal.len() as f64)
        + bound.scale(weights.boundary / coll.boundary.len() as f64);
    if m.kind.is_american() {
        total = total + obs.scale(weights.obstacle / nr);
    }
    if let Some(anc) = anchor {
        if anc.len() != theta.len() {
            return Err(Error::Shape("anchor length mismatch".into()));
        }
        let mut sq = zero;
        for (th, &a) in theta.iter().zip(anc) {
            let d = th.shift(-a);
            sq = sq + d * d;
        }
        total = total + sq.scale(weights.anchor / anc.len() as f64);
    }
    let out = total.index();
    let graph = b.finish(out)?;
    Ok((graph.value(), graph.gradient()))
}

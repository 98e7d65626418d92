//! Error metrics and ensemble statistics.

use serde::{Deserialize, Serialize};

use crate::analytic::{payoff, MarketParams};
use crate::error::{Error, Result};

/// Which part of the evaluation grid a report covers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "t", rename_all = "snake_case")]
pub enum Slice {
    Time(f64),
    Full,
}

impl Slice {
    pub fn label(&self) -> String {
        match self {
            Slice::Time(t) => format!("t={t}"),
            Slice::Full => "full".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    /// NaN when the targets have zero variance; see `diagnostic`.
    pub ev: f64,
    /// Mean of `|y - y_hat| / |y|` in percent over points with `y != 0`.
    pub relative_error_percent: f64,
    /// Largest pointwise relative error in percent over the same points.
    pub max_relative_error_percent: f64,
    /// Points skipped by the relative-error terms because `y == 0`.
    pub relative_excluded: usize,
    pub max_abs_error: f64,
    pub n: usize,
    pub slice: Slice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

fn sample_variance(x: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    let mean = x.clone().sum::<f64>() / n as f64;
    x.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

/// Metrics of `pred` against `target`, reported for the whole input.
pub fn metrics(target: &[f64], pred: &[f64]) -> Result<MetricReport> {
    metrics_for(target, pred, Slice::Full)
}

pub fn metrics_for(target: &[f64], pred: &[f64], slice: Slice) -> Result<MetricReport> {
    if target.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} targets but {} predictions",
            target.len(),
            pred.len()
        )));
    }
    let n = target.len();
    if n < 2 {
        return Err(Error::Precondition(format!("metrics need at least 2 points, got {n}")));
    }
    if target.iter().chain(pred).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in metric input".into()));
    }
    let err = || target.iter().zip(pred).map(|(y, p)| p - y);
    let mae = err().map(f64::abs).sum::<f64>() / n as f64;
    let rmse = (err().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let max_abs_error = err().map(f64::abs).fold(0.0, f64::max);

    let var_y = sample_variance(target.iter().copied(), n);
    let (ev, diagnostic) = if var_y > 0.0 {
        (1.0 - sample_variance(err(), n) / var_y, None)
    } else {
        (f64::NAN, Some("explained variance undefined: targets are constant".to_string()))
    };

    let mut rel_sum = 0.0;
    let mut rel_max = 0.0f64;
    let mut used = 0usize;
    for (y, p) in target.iter().zip(pred) {
        if *y != 0.0 {
            let r = (p - y).abs() / y.abs();
            rel_sum += r;
            rel_max = rel_max.max(r);
            used += 1;
        }
    }
    let (rel_mean, rel_max) = if used > 0 {
        (100.0 * rel_sum / used as f64, 100.0 * rel_max)
    } else {
        (f64::NAN, f64::NAN)
    };

    Ok(MetricReport {
        mae,
        rmse,
        ev,
        relative_error_percent: rel_mean,
        max_relative_error_percent: rel_max,
        relative_excluded: n - used,
        max_abs_error,
        n,
        slice,
        diagnostic,
    })
}

/// Pointwise ensemble mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub points: Vec<(f64, f64)>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub members: usize,
}

/// `members[m][i]` is member `m`'s prediction at `points[i]`.
pub fn ensemble_stats(points: &[(f64, f64)], members: &[Vec<f64>]) -> Result<EnsemblePrediction> {
    let m = members.len();
    if m < 2 {
        return Err(Error::Precondition(format!("ensemble statistics need M >= 2, got {m}")));
    }
    if let Some((k, row)) = members.iter().enumerate().find(|(_, r)| r.len() != points.len()) {
        return Err(Error::Shape(format!(
            "member {k} has {} predictions for {} points",
            row.len(),
            points.len()
        )));
    }
    let mut mean = Vec::with_capacity(points.len());
    let mut std = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let col = members.iter().map(|r| r[i]);
        let (lo, hi) = col.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo == hi {
            mean.push(lo);
            std.push(0.0);
            continue;
        }
        // Summing in sorted order makes the result independent of member order.
        let mut sorted: Vec<f64> = col.collect();
        sorted.sort_by(f64::total_cmp);
        let mu = (sorted.iter().sum::<f64>() / m as f64).clamp(lo, hi);
        let var = sorted.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m - 1) as f64;
        mean.push(mu);
        std.push(var.sqrt());
    }
    Ok(EnsemblePrediction { points: points.to_vec(), mean, std, members: m })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bands {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// `mu -/+ k * std`; for the American put the lower curve is floored at the payoff.
pub fn bands(pred: &EnsemblePrediction, k: f64, market: &MarketParams) -> Bands {
    let mut lower = Vec::with_capacity(pred.mean.len());
    let mut upper = Vec::with_capacity(pred.mean.len());
    for ((&(s, _), &mu), &sd) in pred.points.iter().zip(&pred.mean).zip(&pred.std) {
        let mut lo = mu - k * sd;
        if market.kind.is_american() {
            lo = lo.max(payoff(market.kind, s, market.strike));
        }
        lower.push(lo);
        upper.push((mu + k * sd).max(lo));
    }
    Bands { lower, upper }
}

/// Fraction of points where `|pred - target| <= k * std`.
pub fn band_coverage(target: &[f64], pred: &EnsemblePrediction, k: f64) -> Result<f64> {
    if target.len() != pred.mean.len() {
        return Err(Error::Shape("target and prediction lengths differ".into()));
    }
    if target.is_empty() {
        return Err(Error::Precondition("coverage of an empty grid".into()));
    }
    let hit = target
        .iter()
        .zip(pred.mean.iter().zip(&pred.std))
        .filter(|(y, (mu, sd))| (*mu - *y).abs() <= k * *sd)
        .count();
    Ok(hit as f64 / target.len() as f64)
}

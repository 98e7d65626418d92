//! Closed-form Black-Scholes prices for European options (no dividends).

use serde::{Deserialize, Serialize};
use libm::erfc;
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    EuroCall,
    EuroPut,
    AmerPut,
}

impl OptionKind {
    pub fn is_put(self) -> bool {
        matches!(self, OptionKind::EuroPut | OptionKind::AmerPut)
    }

    pub fn is_american(self) -> bool {
        matches!(self, OptionKind::AmerPut)
    }

    pub fn name(self) -> &'static str {
        match self {
            OptionKind::EuroCall => "euro_call",
            OptionKind::EuroPut => "euro_put",
            OptionKind::AmerPut => "amer_put",
        }
    }
}

/// Market and contract parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Continuously compounded risk-free rate per year.
    pub rate: f64,
    /// Volatility per square-root year.
    pub volatility: f64,
    pub strike: f64,
    /// Maturity in years.
    pub maturity: f64,
    pub kind: OptionKind,
}

impl MarketParams {
    pub fn new(rate: f64, volatility: f64, strike: f64, maturity: f64, kind: OptionKind) -> Self {
        Self {
            rate,
            volatility,
            strike,
            maturity,
            kind,
        }
    }

    /// The benchmark contract: K=45, sigma=0.2, r=0.05, T=0.5.
    pub fn benchmark(kind: OptionKind) -> Self {
        Self::new(0.05, 0.2, 45.0, 0.5, kind)
    }

    pub fn with_kind(self, kind: OptionKind) -> Self {
        Self { kind, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, v: f64| Error::Config(format!("market.{field} = {v} is invalid"));
        if !(self.volatility > 0.0 && self.volatility.is_finite()) {
            return Err(bad("volatility", self.volatility));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(bad("strike", self.strike));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(bad("maturity", self.maturity));
        }
        if !self.rate.is_finite() {
            return Err(bad("rate", self.rate));
        }
        Ok(())
    }

    /// Discount factor `e^{-r tau}` over the remaining life at time `t`.
    pub fn discount(&self, t: f64) -> f64 {
        (-self.rate * (self.maturity - t)).exp()
    }
}

/// Standard normal CDF via the complementary error function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn payoff(kind: OptionKind, s: f64, strike: f64) -> f64 {
    match kind {
        OptionKind::EuroCall => (s - strike).max(0.0),
        OptionKind::EuroPut | OptionKind::AmerPut => (strike - s).max(0.0),
    }
}

/// Black-Scholes value of a European option at spot `s` and calendar time `t`.
pub fn bs_price(params: &MarketParams, s: f64, t: f64) -> Result<f64> {
    if params.kind.is_american() {
        return Err(Error::Precondition(
            "closed form exists only for European options".into(),
        ));
    }
    if !(s >= 0.0) {
        return Err(Error::Precondition(format!("spot must be >= 0, got {s}")));
    }
    if t > params.maturity {
        return Err(Error::Precondition(format!(
            "t = {t} lies beyond maturity {}",
            params.maturity
        )));
    }
    let k = params.strike;
    let tau = params.maturity - t;
    if tau <= 0.0 {
        return Ok(payoff(params.kind, s, k));
    }
    let df = (-params.rate * tau).exp();
    if s == 0.0 {
        return Ok(match params.kind {
            OptionKind::EuroCall => 0.0,
            _ => k * df,
        });
    }
    let vol_sqrt = params.volatility * tau.sqrt();
    let d1 = ((s / k).ln() + (params.rate + 0.5 * params.volatility * params.volatility) * tau)
        / vol_sqrt;
    let d2 = d1 - vol_sqrt;
    Ok(match params.kind {
        OptionKind::EuroCall => s * norm_cdf(d1) - k * df * norm_cdf(d2),
        _ => k * df * norm_cdf(-d2) - s * norm_cdf(-d1),
    })
}

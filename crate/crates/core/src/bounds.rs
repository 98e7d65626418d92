//! No-arbitrage price bounds and the bounded logit mapping.
//!
//! Bounds per instrument (no dividends), with `tau` the time to expiry:
//!
//! | kind      | lower `L`                  | upper `U`       |
//! |-----------|----------------------------|-----------------|
//! | AmerPut   | `max(K - S, 0)`            | `K`             |
//! | EuroCall  | `max(S - K e^{-r tau}, 0)` | `S`             |
//! | EuroPut   | `max(K e^{-r tau} - S, 0)` | `K e^{-r tau}`  |
//!
//! Prices map to `z = logit((y - L) / (U - L))` and back through
//! `y = L + (U - L) sigmoid(z)`.

use crate::analytic::{MarketParams, OptionKind};
use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Relative clipping margin applied before taking the logit.
pub const CLIP_MARGIN: f64 = 1e-6;

/// Below `DEGENERATE_WIDTH * K` the mapping is unusable and callers fall back to identity.
pub const DEGENERATE_WIDTH: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriceBounds {
    pub lower: f64,
    pub upper: f64,
    pub kind: OptionKind,
}

impl PriceBounds {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lower && y <= self.upper
    }
}

/// Generic bounds so that derivatives with respect to `S` and `tau` flow through.
pub fn bounds_generic<T: Scalar>(kind: OptionKind, s: T, strike: f64, rate: f64, tau: T) -> (T, T) {
    let zero = s.lift(0.0);
    match kind {
        OptionKind::AmerPut => ((-s).shift(strike).max_by_primal(zero), s.lift(strike)),
        OptionKind::EuroCall => {
            let pv = tau.scale(-rate).exp().scale(strike);
            ((s - pv).max_by_primal(zero), s)
        }
        OptionKind::EuroPut => {
            let pv = tau.scale(-rate).exp().scale(strike);
            ((pv - s).max_by_primal(zero), pv)
        }
    }
}

pub fn bounds_for(kind: OptionKind, s: f64, strike: f64, rate: f64, tau: f64) -> Result<PriceBounds> {
    if !(s >= 0.0) || !(tau >= 0.0) {
        return Err(Error::Precondition(format!(
            "bounds need S >= 0 and tau >= 0, got S = {s}, tau = {tau}"
        )));
    }
    let (lower, upper) = bounds_generic(kind, s, strike, rate, tau);
    if !(upper > lower) {
        return Err(Error::Domain(format!(
            "degenerate bounds L = {lower}, U = {upper} for {} at S = {s}",
            kind.name()
        )));
    }
    Ok(PriceBounds { lower, upper, kind })
}

/// Bounds of a contract at spot `s` and calendar time `t`.
pub fn bounds_at(market: &MarketParams, s: f64, t: f64) -> Result<PriceBounds> {
    bounds_for(market.kind, s, market.strike, market.rate, market.maturity - t)
}

/// Result of mapping a price into logit space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Logit {
    pub z: f64,
    /// The input lay outside `[L, U]` and was clipped.
    pub clipped: bool,
}

pub fn to_logit(y: f64, bounds: &PriceBounds) -> Logit {
    let w = bounds.width();
    let eps = CLIP_MARGIN * w;
    let clipped = !bounds.contains(y);
    let y = y.clamp(bounds.lower + eps, bounds.upper - eps);
    let f = (y - bounds.lower) / w;
    Logit {
        z: (f / (1.0 - f)).ln(),
        clipped,
    }
}

pub fn from_logit(z: f64, bounds: &PriceBounds) -> f64 {
    let y = bounds.lower + bounds.width() * z.sigmoid();
    // keep the result strictly inside even when the sigmoid saturates
    y.clamp(bounds.lower.next_up(), bounds.upper.next_down())
}

/// Clips labels into their bounds, returning the clipped labels and how many moved.
pub fn clip_labels(labels: &[f64], bounds: &[PriceBounds]) -> Result<(Vec<f64>, usize)> {
    if labels.len() != bounds.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} bounds",
            labels.len(),
            bounds.len()
        )));
    }
    let mut moved = 0;
    let out = labels
        .iter()
        .zip(bounds)
        .map(|(&y, b)| {
            if b.contains(y) {
                y
            } else {
                moved += 1;
                y.clamp(b.lower, b.upper)
            }
        })
        .collect();
    Ok((out, moved))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn american_put_bounds() {
        let b = bounds_for(OptionKind::AmerPut, 40.0, 45.0, 0.05, 0.5).unwrap();
        assert_eq!((b.lower, b.upper), (5.0, 45.0));
        let b = bounds_for(OptionKind::AmerPut, 90.0, 45.0, 0.05, 0.5).unwrap();
        assert_eq!((b.lower, b.upper), (0.0, 45.0));
    }

    #[test]
    fn european_call_bounds() {
        let b = bounds_for(OptionKind::EuroCall, 100.0, 45.0, 0.05, 0.5).unwrap();
        assert_eq!(b.lower, 100.0 - 45.0 * (-0.025f64).exp());
        assert_eq!(b.upper, 100.0);
    }

    #[test]
    fn european_put_bounds() {
        let b = bounds_for(OptionKind::EuroPut, 30.0, 45.0, 0.05, 0.5).unwrap();
        let pv = 45.0 * (-0.025f64).exp();
        assert_eq!((b.lower, b.upper), (pv - 30.0, pv));
    }

    #[test]
    fn degenerate_call_at_zero_spot() {
        assert!(matches!(
            bounds_for(OptionKind::EuroCall, 0.0, 45.0, 0.05, 0.5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn midpoint_maps_to_zero() {
        let b = bounds_for(OptionKind::AmerPut, 40.0, 45.0, 0.05, 0.5).unwrap();
        let mid = 0.5 * (b.lower + b.upper);
        let l = to_logit(mid, &b);
        assert!(l.z.abs() < 1e-12);
        assert!(!l.clipped);
        assert_eq!(from_logit(0.0, &b), mid);
    }

    #[test]
    fn round_trip_ninety_percent() {
        let b = bounds_for(OptionKind::EuroCall, 100.0, 45.0, 0.05, 0.5).unwrap();
        let y = b.lower + 0.9 * b.width();
        let back = from_logit(to_logit(y, &b).z, &b);
        assert!((back - y).abs() < 1e-10);
    }

    #[test]
    fn out_of_range_labels_are_flagged() {
        let b = bounds_for(OptionKind::AmerPut, 40.0, 45.0, 0.05, 0.5).unwrap();
        assert!(to_logit(4.0, &b).clipped);
        assert!(to_logit(50.0, &b).clipped);
        let (c, n) = clip_labels(&[4.0, 10.0, 50.0], &[b, b, b]).unwrap();
        assert_eq!(c, vec![5.0, 10.0, 45.0]);
        assert_eq!(n, 2);
    }

    #[test]
    fn saturated_logit_stays_inside() {
        let b = bounds_for(OptionKind::AmerPut, 40.0, 45.0, 0.05, 0.5).unwrap();
        let hi = from_logit(1e3, &b);
        let lo = from_logit(-1e3, &b);
        assert!(hi < b.upper && hi > b.lower);
        assert!(lo > b.lower && lo < b.upper);
    }
}

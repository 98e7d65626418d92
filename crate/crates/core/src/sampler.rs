//! Collocation sets: interior residual points, terminal payoff points and
//! boundary points with Dirichlet targets.
//!
//! Boundary targets (`tau = T - t`) at the lower edge `S_min` and upper edge
//! `S_max`:
//!
//! | kind     | `h(S_min, t)`               | `h(S_max, t)`             |
//! |----------|-----------------------------|---------------------------|
//! | EuroCall | 0                           | `S_max - K e^{-r tau}`    |
//! | EuroPut  | `K e^{-r tau} - S_min`      | 0                         |
//! | AmerPut  | `K - S_min`                 | 0                         |
//!
//! With `S_min = 0` these are exactly the finite-difference boundaries.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analytic::{payoff, MarketParams, OptionKind};
use crate::error::{Error, Result};

/// Spread of the kink-focused spot distribution, relative to the strike.
pub const KINK_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub s_min: f64,
    pub s_max: f64,
    pub maturity: f64,
}

impl Domain {
    /// `[0, 3K] x [0, T]`.
    pub fn for_market(market: &MarketParams) -> Self {
        Self {
            s_min: 0.0,
            s_max: 3.0 * market.strike,
            maturity: market.maturity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_min >= 0.0 && self.s_max > self.s_min && self.s_max.is_finite()) {
            return Err(Error::Config(format!(
                "domain [{}, {}] in S is empty or invalid",
                self.s_min, self.s_max
            )));
        }
        if !(self.maturity > 0.0) {
            return Err(Error::Config(format!("domain maturity {} must be > 0", self.maturity)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteriorSampling {
    #[default]
    Uniform,
    LatinHypercube,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub interior: usize,
    pub terminal: usize,
    pub boundary: usize,
    pub kink_fraction: f64,
    pub interior_sampling: InteriorSampling,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            interior: 150,
            terminal: 128,
            boundary: 128,
            kink_fraction: 0.3,
            interior_sampling: InteriorSampling::Uniform,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("interior", self.interior),
            ("terminal", self.terminal),
            ("boundary", self.boundary),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("sampler.{name} must be >= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.kink_fraction) {
            return Err(Error::Config(format!(
                "sampler.kink_fraction = {} must lie in [0, 1]",
                self.kink_fraction
            )));
        }
        Ok(())
    }

    pub fn kink_count(&self) -> usize {
        (self.kink_fraction * self.interior as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    /// Interior `(S, t)` points, strictly inside the domain.
    pub interior: Vec<(f64, f64)>,
    /// Terminal points `(S, T)`.
    pub terminal: Vec<(f64, f64)>,
    pub terminal_targets: Vec<f64>,
    /// Boundary points with `S` in `{S_min, S_max}`.
    pub boundary: Vec<(f64, f64)>,
    pub boundary_targets: Vec<f64>,
    pub seed: u64,
}

/// Uniform draw from the open interval `(lo, hi)`.
fn open_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let x = lo + rng.random::<f64>() * (hi - lo);
        if x > lo && x < hi {
            return x;
        }
    }
}

pub fn sample(market: &MarketParams, domain: &Domain, cfg: &SamplerConfig, seed: u64) -> Result<CollocationSet> {
    domain.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi, mat) = (domain.s_min, domain.s_max, domain.maturity);

    let n_kink = cfg.kink_count();
    let n_bulk = cfg.interior - n_kink;
    let mut interior = Vec::with_capacity(cfg.interior);
    match cfg.interior_sampling {
        InteriorSampling::Uniform => {
            for _ in 0..n_bulk {
                let s = open_uniform(&mut rng, lo, hi);
                let t = open_uniform(&mut rng, 0.0, mat);
                interior.push((s, t));
            }
        }
        InteriorSampling::LatinHypercube => {
            let mut perm: Vec<usize> = (0..n_bulk).collect();
            perm.shuffle(&mut rng);
            let n = n_bulk as f64;
            for (i, &p) in perm.iter().enumerate() {
                let s_lo = lo + (hi - lo) * i as f64 / n;
                let s_hi = lo + (hi - lo) * (i + 1) as f64 / n;
                let t_lo = mat * p as f64 / n;
                let t_hi = mat * (p + 1) as f64 / n;
                interior.push((open_uniform(&mut rng, s_lo, s_hi), open_uniform(&mut rng, t_lo, t_hi)));
            }
        }
    }
    let kink = Normal::new(market.strike, KINK_SCALE * market.strike)
        .map_err(|e| Error::Config(format!("kink distribution: {e}")))?;
    for _ in 0..n_kink {
        // truncated normal by rejection
        let s = loop {
            let s = kink.sample(&mut rng);
            if s > lo && s < hi {
                break s;
            }
        };
        let t = open_uniform(&mut rng, 0.0, mat);
        interior.push((s, t));
    }

    let n_i = cfg.terminal as f64;
    let terminal: Vec<(f64, f64)> = (0..cfg.terminal)
        .map(|i| {
            let u: f64 = rng.random();
            (lo + (hi - lo) * (i as f64 + u) / n_i, mat)
        })
        .collect();
    let terminal_targets = terminal
        .iter()
        .map(|&(s, _)| payoff(market.kind, s, market.strike))
        .collect();

    let n_low = cfg.boundary.div_ceil(2);
    let boundary: Vec<(f64, f64)> = (0..cfg.boundary)
        .map(|i| {
            let s = if i < n_low { lo } else { hi };
            (s, rng.random::<f64>() * mat)
        })
        .collect();
    let boundary_targets = boundary_targets(market, domain, &boundary)?;

    Ok(CollocationSet {
        interior,
        terminal,
        terminal_targets,
        boundary,
        boundary_targets,
        seed,
    })
}

/// Dirichlet targets `h(S_b, t_b)`; every point must lie exactly on an `S` edge.
pub fn boundary_targets(market: &MarketParams, domain: &Domain, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    let k = market.strike;
    points
        .iter()
        .map(|&(s, t)| {
            let df = (-market.rate * (market.maturity - t)).exp();
            if s == domain.s_min {
                Ok(match market.kind {
                    OptionKind::EuroCall => 0.0,
                    OptionKind::EuroPut => k * df - s,
                    OptionKind::AmerPut => k - s,
                })
            } else if s == domain.s_max {
                Ok(match market.kind {
                    OptionKind::EuroCall => s - k * df,
                    _ => 0.0,
                })
            } else {
                Err(Error::Precondition(format!(
                    "boundary point S = {s} is not on an edge ({} or {})",
                    domain.s_min, domain.s_max
                )))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (MarketParams, Domain) {
        let m = MarketParams::benchmark(OptionKind::EuroPut);
        (m, Domain::for_market(&m))
    }

    #[test]
    fn paper_counts() {
        let (m, d) = setup();
        let c = sample(&m, &d, &SamplerConfig::default(), 1).unwrap();
        assert_eq!(c.interior.len(), 150);
        assert_eq!(c.terminal.len(), 128);
        assert_eq!(c.boundary.len(), 128);
        assert_eq!(c.terminal_targets.len(), 128);
        assert_eq!(c.boundary_targets.len(), 128);
    }

    #[test]
    fn roles_are_disjoint_and_exact() {
        let (m, d) = setup();
        for sampling in [InteriorSampling::Uniform, InteriorSampling::LatinHypercube] {
            let cfg = SamplerConfig { interior_sampling: sampling, ..SamplerConfig::default() };
            let c = sample(&m, &d, &cfg, 5).unwrap();
            for &(s, t) in &c.interior {
                assert!(s > d.s_min && s < d.s_max && t > 0.0 && t < d.maturity);
            }
            for (&(s, t), &y) in c.terminal.iter().zip(&c.terminal_targets) {
                assert_eq!(t, d.maturity);
                assert_eq!(y, payoff(m.kind, s, m.strike));
            }
            let low = c.boundary.iter().filter(|p| p.0 == d.s_min).count();
            let high = c.boundary.iter().filter(|p| p.0 == d.s_max).count();
            assert_eq!((low, high), (64, 64));
        }
    }

    #[test]
    fn same_seed_same_set() {
        let (m, d) = setup();
        let a = sample(&m, &d, &SamplerConfig::default(), 9).unwrap();
        let b = sample(&m, &d, &SamplerConfig::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = sample(&m, &d, &SamplerConfig::default(), 10).unwrap();
        assert_ne!(a.interior, c.interior);
    }

    #[test]
    fn boundary_target_table() {
        let m = MarketParams::benchmark(OptionKind::AmerPut);
        let d = Domain::for_market(&m);
        assert_eq!(boundary_targets(&m, &d, &[(0.0, 0.2)]).unwrap(), vec![45.0]);
        let e = m.with_kind(OptionKind::EuroPut);
        assert_eq!(boundary_targets(&e, &d, &[(135.0, 0.2)]).unwrap(), vec![0.0]);
        let c = m.with_kind(OptionKind::EuroCall);
        let h = boundary_targets(&c, &d, &[(135.0, 0.0)]).unwrap()[0];
        assert_eq!(h, 135.0 - 45.0 * (-0.025f64).exp());
        assert!(matches!(
            boundary_targets(&c, &d, &[(50.0, 0.0)]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn invalid_configurations() {
        let (m, d) = setup();
        let bad = SamplerConfig { interior: 0, ..SamplerConfig::default() };
        assert!(sample(&m, &d, &bad, 0).is_err());
        let bad = SamplerConfig { kink_fraction: 1.5, ..SamplerConfig::default() };
        assert!(sample(&m, &d, &bad, 0).is_err());
        let empty = Domain { s_min: 10.0, s_max: 10.0, maturity: 0.5 };
        assert!(sample(&m, &empty, &SamplerConfig::default(), 0).is_err());
    }

    #[test]
    fn uniform_histogram_passes_chi_square() {
        let (m, d) = setup();
        let cfg = SamplerConfig { interior: 4000, kink_fraction: 0.0, ..SamplerConfig::default() };
        let c = sample(&m, &d, &cfg, 21).unwrap();
        let bins = 20;
        let mut counts = vec![0usize; bins];
        for &(s, _) in &c.interior {
            counts[((s / d.s_max) * bins as f64) as usize] += 1;
        }
        let expected = 4000.0 / bins as f64;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with 19 degrees of freedom
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }

    #[test]
    fn kink_points_stay_inside_and_concentrate() {
        let (m, d) = setup();
        let cfg = SamplerConfig { interior: 1000, kink_fraction: 1.0, ..SamplerConfig::default() };
        let c = sample(&m, &d, &cfg, 3).unwrap();
        let near = c.interior.iter().filter(|p| (p.0 - 45.0).abs() < 9.0).count();
        assert!(c.interior.iter().all(|p| p.0 > 0.0 && p.0 < 135.0));
        // two standard deviations hold ~95% of the mass
        assert!(near > 930, "{near}");
    }
}

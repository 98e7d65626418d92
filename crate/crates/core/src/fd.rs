//! Finite-difference and lattice reference solvers.
//!
//! The grid is uniform in `S` on `[0, S_max]` and in `t` on `[0, T]`. The
//! solver marches backward from the payoff at `T` with a theta scheme:
//! the first step is replaced by two implicit-Euler half steps (Rannacher
//! start-up), every later step is Crank-Nicolson. European contracts use a
//! tridiagonal solve per step; the American put solves the linear
//! complementarity problem `V >= payoff` by projected SOR.
//!
//! Dirichlet boundaries, `tau = T - t`:
//!
//! | kind     | `V(0, t)`       | `V(S_max, t)`            |
//! |----------|-----------------|--------------------------|
//! | EuroCall | 0               | `S_max - K e^{-r tau}`   |
//! | EuroPut  | `K e^{-r tau}`  | 0                        |
//! | AmerPut  | `K`             | 0                        |

use serde::{Deserialize, Serialize};

use crate::analytic::{payoff, MarketParams, OptionKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_s: usize,
    pub n_t: usize,
    pub s_max: f64,
}

impl GridSpec {
    pub fn new(n_s: usize, n_t: usize, s_max: f64) -> Self {
        Self { n_s, n_t, s_max }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s < 4 || self.n_t < 4 {
            return Err(Error::Config(format!(
                "fd grid needs n_s >= 4 and n_t >= 4, got ({}, {})",
                self.n_s, self.n_t
            )));
        }
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return Err(Error::Config(format!("fd.s_max = {} is invalid", self.s_max)));
        }
        Ok(())
    }
}

/// Relaxation settings for projected SOR.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsorSettings {
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PsorSettings {
    fn default() -> Self {
        Self {
            omega: 1.5,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// Solution values on a uniform `(t, S)` grid.
#[derive(Clone, Debug)]
pub struct FdGrid {
    pub spec: GridSpec,
    pub maturity: f64,
    /// Row `i` holds time `t_i = i dt`; column `j` holds `S_j = j dS`.
    values: Vec<f64>,
    /// PSOR sweeps used per time step (empty for European solves).
    pub iterations: Vec<usize>,
}

impl FdGrid {
    pub fn ds(&self) -> f64 {
        self.spec.s_max / self.spec.n_s as f64
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.spec.n_t as f64
    }

    pub fn s_at(&self, j: usize) -> f64 {
        j as f64 * self.ds()
    }

    pub fn t_at(&self, i: usize) -> f64 {
        if i == self.spec.n_t {
            self.maturity
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.spec.n_s + 1) + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.spec.n_s + 1;
        &self.values[i * w..(i + 1) * w]
    }

    /// Bilinear interpolation at `(s, t)`.
    pub fn interpolate(&self, s: f64, t: f64) -> Result<f64> {
        if !(0.0..=self.spec.s_max).contains(&s) || !(0.0..=self.maturity).contains(&t) {
            return Err(Error::Precondition(format!(
                "({s}, {t}) outside the fd grid [0, {}] x [0, {}]",
                self.spec.s_max, self.maturity
            )));
        }
        let locate = |x: f64, h: f64, n: usize| {
            let u = x / h;
            let i = (u.floor() as usize).min(n - 1);
            (i, (u - i as f64).clamp(0.0, 1.0))
        };
        let (j, ws) = locate(s, self.ds(), self.spec.n_s);
        let (i, wt) = locate(t, self.dt(), self.spec.n_t);
        let at_row = |i: usize| (1.0 - ws) * self.value(i, j) + ws * self.value(i, j + 1);
        Ok((1.0 - wt) * at_row(i) + wt * at_row(i + 1))
    }

    /// `(S, t, value)` triples, row-major over `t` then `S`.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..=self.spec.n_t).flat_map(move |i| {
            (0..=self.spec.n_s).map(move |j| (self.s_at(j), self.t_at(i), self.value(i, j)))
        })
    }
}

/// Dirichlet values `(V(0, t), V(S_max, t))`.
pub fn boundary_values(params: &MarketParams, s_max: f64, t: f64) -> (f64, f64) {
    let df = params.discount(t);
    let k = params.strike;
    match params.kind {
        OptionKind::EuroCall => (0.0, s_max - k * df),
        OptionKind::EuroPut => (k * df, 0.0),
        OptionKind::AmerPut => (k, 0.0),
    }
}

/// Coefficients of the spatial operator at node `j`: `L V_j = a V_{j-1} + b V_j + c V_{j+1}`.
fn operator(params: &MarketParams, j: usize) -> (f64, f64, f64) {
    let jf = j as f64;
    let s2 = params.volatility * params.volatility * jf * jf;
    let rj = params.rate * jf;
    (0.5 * (s2 - rj), -s2 - params.rate, 0.5 * (s2 + rj))
}

enum Solve<'a> {
    Linear,
    Projected { obstacle: &'a [f64], settings: PsorSettings },
}

/// One theta step from `next` (at `t + dt`) to the returned level at `t`.
fn theta_step(
    params: &MarketParams,
    spec: &GridSpec,
    next: &[f64],
    t: f64,
    dt: f64,
    theta: f64,
    solve: &Solve<'_>,
) -> Result<(Vec<f64>, usize)> {
    let n = spec.n_s;
    let (lo, hi) = boundary_values(params, spec.s_max, t);
    let m = n - 1;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for j in 1..n {
        let (a, b, c) = operator(params, j);
        let k = j - 1;
        lower[k] = -theta * dt * a;
        diag[k] = 1.0 - theta * dt * b;
        upper[k] = -theta * dt * c;
        let e = (1.0 - theta) * dt;
        rhs[k] = next[j] + e * (a * next[j - 1] + b * next[j] + c * next[j + 1]);
    }
    rhs[0] -= lower[0] * lo;
    rhs[m - 1] -= upper[m - 1] * hi;

    let mut out = vec![0.0; n + 1];
    out[0] = lo;
    out[n] = hi;
    let iterations = match solve {
        Solve::Linear => {
            let x = thomas(&lower, &diag, &upper, &rhs)?;
            out[1..n].copy_from_slice(&x);
            0
        }
        Solve::Projected { obstacle, settings } => {
            let mut x: Vec<f64> = (1..n).map(|j| next[j].max(obstacle[j])).collect();
            let it = psor(&lower, &diag, &upper, &rhs, &obstacle[1..n], &mut x, settings)?;
            out[1..n].copy_from_slice(&x);
            it
        }
    };
    Ok((out, iterations))
}

/// Thomas algorithm for a tridiagonal system.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    for i in 0..n {
        if i > 0 {
            denom = diag[i] - lower[i] * c[i - 1];
        }
        if denom.abs() < 1e-14 || !denom.is_finite() {
            return Err(Error::Numerical(format!("singular tridiagonal system at row {i}")));
        }
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - if i > 0 { lower[i] * d[i - 1] } else { 0.0 }) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// Projected SOR for `A x = b, x >= g`; returns the number of sweeps.
fn psor(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    obstacle: &[f64],
    x: &mut [f64],
    settings: &PsorSettings,
) -> Result<usize> {
    let n = x.len();
    let mut change = f64::INFINITY;
    for sweep in 1..=settings.max_iter {
        change = 0.0;
        for i in 0..n {
            let left = if i > 0 { lower[i] * x[i - 1] } else { 0.0 };
            let right = if i + 1 < n { upper[i] * x[i + 1] } else { 0.0 };
            let gs = (rhs[i] - left - right) / diag[i];
            let updated = (x[i] + settings.omega * (gs - x[i])).max(obstacle[i]);
            change = f64::max(change, (updated - x[i]).abs());
            x[i] = updated;
        }
        if change < settings.tol {
            return Ok(sweep);
        }
    }
    Err(Error::Convergence {
        iterations: settings.max_iter,
        residual: change,
    })
}

fn march(params: &MarketParams, spec: &GridSpec, american: Option<PsorSettings>) -> Result<FdGrid> {
    params.validate()?;
    spec.validate()?;
    let (n_s, n_t) = (spec.n_s, spec.n_t);
    let ds = spec.s_max / n_s as f64;
    let dt = params.maturity / n_t as f64;
    let obstacle: Vec<f64> = (0..=n_s)
        .map(|j| payoff(params.kind, j as f64 * ds, params.strike))
        .collect();
    let solve = match american {
        Some(settings) => Solve::Projected {
            obstacle: &obstacle,
            settings,
        },
        None => Solve::Linear,
    };

    let w = n_s + 1;
    let mut values = vec![0.0; (n_t + 1) * w];
    values[n_t * w..].copy_from_slice(&obstacle);
    let mut iterations = Vec::with_capacity(n_t);
    for i in (0..n_t).rev() {
        let t = i as f64 * dt;
        let next = values[(i + 1) * w..(i + 2) * w].to_vec();
        let (row, it) = if i == n_t - 1 {
            let half = 0.5 * dt;
            let (mid, it1) = theta_step(params, spec, &next, t + half, half, 1.0, &solve)?;
            let (row, it2) = theta_step(params, spec, &mid, t, half, 1.0, &solve)?;
            (row, it1 + it2)
        } else {
            theta_step(params, spec, &next, t, dt, 0.5, &solve)?
        };
        values[i * w..(i + 1) * w].copy_from_slice(&row);
        iterations.push(it);
    }
    iterations.reverse();
    if american.is_none() {
        iterations.clear();
    }
    Ok(FdGrid {
        spec: *spec,
        maturity: params.maturity,
        values,
        iterations,
    })
}

/// Crank-Nicolson (with Rannacher start-up) for European contracts.
pub fn crank_nicolson(params: &MarketParams, spec: &GridSpec) -> Result<FdGrid> {
    if params.kind.is_american() {
        return Err(Error::Precondition(
            "crank_nicolson handles European contracts; use psor_american_put".into(),
        ));
    }
    march(params, spec, None)
}

/// Crank-Nicolson with projected SOR for the American put.
pub fn psor_american_put(params: &MarketParams, spec: &GridSpec, settings: PsorSettings) -> Result<FdGrid> {
    if params.kind != OptionKind::AmerPut {
        return Err(Error::Precondition("psor_american_put needs an American put".into()));
    }
    if !(settings.omega > 1.0 && settings.omega < 2.0) {
        return Err(Error::Config(format!(
            "psor.omega = {} must lie in (1, 2)",
            settings.omega
        )));
    }
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(Error::Config("psor.tol must be > 0 and psor.max_iter >= 1".into()));
    }
    march(params, spec, Some(settings))
}

/// CRR binomial tree value at spot `s0` and `t = 0`.
pub fn binomial_tree(params: &MarketParams, s0: f64, steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::Precondition("binomial tree needs at least one step".into()));
    }
    params.validate()?;
    let dt = params.maturity / steps as f64;
    let up = (params.volatility * dt.sqrt()).exp();
    binomial_tree_with_factors(params, s0, steps, up, 1.0 / up)
}

/// Binomial tree with explicit up/down factors and risk-neutral probability
/// `p = (e^{r dt} - d) / (u - d)`.
pub fn binomial_tree_with_factors(params: &MarketParams, s0: f64, steps: usize, up: f64, down: f64) -> Result<f64> {
    if steps == 0 {
        return Err(Error::Precondition("binomial tree needs at least one step".into()));
    }
    let dt = params.maturity / steps as f64;
    let growth = (params.rate * dt).exp();
    let p = (growth - down) / (up - down);
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Precondition(format!(
            "factors u = {up}, d = {down} admit arbitrage (p = {p})"
        )));
    }
    let disc = 1.0 / growth;
    let k = params.strike;
    let american = params.kind.is_american();
    let mut v: Vec<f64> = (0..=steps)
        .map(|i| payoff(params.kind, s0 * up.powi(i as i32) * down.powi((steps - i) as i32), k))
        .collect();
    for n in (0..steps).rev() {
        for i in 0..=n {
            let cont = disc * (p * v[i + 1] + (1.0 - p) * v[i]);
            v[i] = if american {
                let s = s0 * up.powi(i as i32) * down.powi((n - i) as i32);
                cont.max(payoff(params.kind, s, k))
            } else {
                cont
            };
        }
    }
    Ok(v[0])
}

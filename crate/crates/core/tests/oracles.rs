//! Cross-checks between the closed form, the finite-difference solvers, the
//! binomial tree and Monte Carlo.

use atpinn::analytic::{bs_price, payoff, MarketParams, OptionKind};
use atpinn::fd::{binomial_tree, crank_nicolson, psor_american_put, FdGrid, GridSpec, PsorSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn put() -> MarketParams {
    MarketParams::benchmark(OptionKind::EuroPut)
}

/// Max |FD - closed form| over nodes strictly inside the S range with
/// `t <= T/2`. Rows closer to expiry carry the payoff-kink layer, whose error
/// decays much slower than second order on any fixed grid.
fn max_interior_error(g: &FdGrid, m: &MarketParams) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..=g.spec.n_t / 2 {
        for j in 1..g.spec.n_s {
            let e = (g.value(i, j) - bs_price(m, g.s_at(j), g.t_at(i)).unwrap()).abs();
            worst = worst.max(e);
        }
    }
    worst
}

#[test]
fn crank_nicolson_matches_closed_form() {
    let m = put();
    let g = crank_nicolson(&m, &GridSpec::new(800, 800, 135.0)).unwrap();
    let e = max_interior_error(&g, &m);
    assert!(e <= 1e-3, "max interior error {e:e}");
}

#[test]
fn kink_layer_dominates_the_error_near_expiry() {
    let m = put();
    let g = crank_nicolson(&m, &GridSpec::new(800, 800, 135.0)).unwrap();
    let last = g.spec.n_t - 1;
    let worst = (1..g.spec.n_s)
        .map(|j| (g.value(last, j) - bs_price(&m, g.s_at(j), g.t_at(last)).unwrap()).abs())
        .fold(0.0f64, f64::max);
    assert!(worst > 1e-3 && worst < 1e-2, "{worst:e}");
}

#[test]
fn crank_nicolson_is_second_order() {
    let m = put();
    let coarse = max_interior_error(&crank_nicolson(&m, &GridSpec::new(200, 200, 135.0)).unwrap(), &m);
    let fine = max_interior_error(&crank_nicolson(&m, &GridSpec::new(400, 400, 135.0)).unwrap(), &m);
    let ratio = coarse / fine;
    assert!((3.0..=5.0).contains(&ratio), "ratio {ratio} ({coarse:e} -> {fine:e})");
}

#[test]
fn psor_matches_binomial_tree() {
    let m = MarketParams::benchmark(OptionKind::AmerPut);
    let g = psor_american_put(&m, &GridSpec::new(1200, 1000, 135.0), PsorSettings::default()).unwrap();
    let mut worst = 0.0f64;
    for k in 0..21 {
        let s = 22.5 + 2.25 * k as f64;
        let tree = binomial_tree(&m, s, 2000).unwrap();
        worst = worst.max((g.interpolate(s, 0.0).unwrap() - tree).abs());
    }
    assert!(worst <= 5e-3, "max |PSOR - tree| = {worst:e}");
}

#[test]
fn american_dominates_european_and_respects_obstacle() {
    let a = MarketParams::benchmark(OptionKind::AmerPut);
    let spec = GridSpec::new(300, 200, 135.0);
    let settings = PsorSettings::default();
    let amer = psor_american_put(&a, &spec, settings).unwrap();
    let euro = crank_nicolson(&put(), &spec).unwrap();
    for i in 0..=spec.n_t {
        for j in 0..=spec.n_s {
            // Dominance holds up to the PSOR stopping tolerance.
            assert!(amer.value(i, j) >= euro.value(i, j) - settings.tol, "node ({i}, {j})");
            assert!(amer.value(i, j) >= payoff(a.kind, amer.s_at(j), a.strike));
        }
    }
    assert_eq!(amer.value(0, 0), 45.0);
}

#[test]
fn american_slice_is_monotone_and_convex() {
    let a = MarketParams::benchmark(OptionKind::AmerPut);
    let g = psor_american_put(&a, &GridSpec::new(600, 500, 135.0), PsorSettings::default()).unwrap();
    let row = g.row(0);
    for w in row.windows(2) {
        assert!(w[1] <= w[0] + 1e-6);
    }
    for w in row.windows(3) {
        assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-6);
    }
}

/// Stratified Monte Carlo: one uniform draw per stratum of `[0, 1)`, mapped
/// through the normal quantile by bisection on the closed-form CDF.
fn stratified_call(m: &MarketParams, s0: f64, strata: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drift = (m.rate - 0.5 * m.volatility * m.volatility) * m.maturity;
    let vol = m.volatility * m.maturity.sqrt();
    let mut acc = 0.0;
    for k in 0..strata {
        let u = (k as f64 + rng.random::<f64>()) / strata as f64;
        let z = normal_quantile(u);
        let st = s0 * (drift + vol * z).exp();
        acc += (st - m.strike).max(0.0);
    }
    (-m.rate * m.maturity).exp() * acc / strata as f64
}

fn normal_quantile(u: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if atpinn::analytic::norm_cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn at_the_money_call_fd_and_monte_carlo_agree() {
    let m = MarketParams::new(0.05, 0.2, 100.0, 1.0, OptionKind::EuroCall);
    let fd = crank_nicolson(&m, &GridSpec::new(1200, 1000, 300.0)).unwrap().interpolate(100.0, 0.0).unwrap();
    let mc = stratified_call(&m, 100.0, 200_000, 17);
    assert!((fd - mc).abs() <= 1e-3, "fd {fd} mc {mc}");
    // The value both oracles settle on.
    assert!((fd - 10.4506).abs() <= 1e-3, "fd {fd}");
    assert!((bs_price(&m, 100.0, 0.0).unwrap() - fd).abs() <= 1e-3);
}

#[test]
fn plain_monte_carlo_is_consistent_with_closed_form() {
    let m = put();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 200_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let st = 45.0 * ((m.rate - 0.02) * m.maturity + m.volatility * m.maturity.sqrt() * z).exp();
        let v = (-m.rate * m.maturity).exp() * (m.strike - st).max(0.0);
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    let exact = bs_price(&m, 45.0, 0.0).unwrap();
    assert!((mean - exact).abs() <= 4.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn closed_form_satisfies_the_pde() {
    let m = put();
    let (hs, ht) = (1e-3, 1e-5);
    for &(s, t) in &[(20.0, 0.1), (40.0, 0.2), (45.0, 0.3), (60.0, 0.05), (90.0, 0.4)] {
        let v = |s: f64, t: f64| bs_price(&m, s, t).unwrap();
        let vt = (v(s, t + ht) - v(s, t - ht)) / (2.0 * ht);
        let vs = (v(s + hs, t) - v(s - hs, t)) / (2.0 * hs);
        let vss = (v(s + hs, t) - 2.0 * v(s, t) + v(s - hs, t)) / (hs * hs);
        let r = vt + 0.5 * 0.04 * s * s * vss + 0.05 * s * vs - 0.05 * v(s, t);
        assert!(r.abs() <= 1e-4, "residual {r:e} at ({s}, {t})");
    }
}

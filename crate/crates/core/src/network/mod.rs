//! The fully connected tanh surrogate `V(S, t)`.
//!
//! [`Mlp`] is the raw network mapping normalised inputs `(x1, x2)` to a raw
//! output `z`. [`Surrogate`] pairs it with the contract and applies the input
//! normalisation and the output head:
//!
//! - input `identity`: `x1 = (S - K) / K`; `log_s`: `x1 = ln(S/K) / (sigma sqrt T)`
//! - always `x2 = t / T`
//! - output `identity`: `V = K z`; `bounded_logit`: `V = L + (U - L) sigmoid(z)`
//!
//! Parameters are stored flat in canonical order: layer by layer, each layer's
//! weights row-major as `(fan_out, fan_in)`, followed by that layer's biases.

pub mod batch;
pub mod checkpoint;

use std::sync::atomic::{AtomicBool, Ordering};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::MarketParams;
use crate::autodiff::Scalar;
use crate::bounds::{bounds_generic, DEGENERATE_WIDTH};
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputTransform {
    #[default]
    Identity,
    LogS,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTransform {
    #[default]
    Identity,
    BoundedLogit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub input_transform: InputTransform,
    pub output_transform: OutputTransform,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            hidden_width: 50,
            input_transform: InputTransform::Identity,
            output_transform: OutputTransform::Identity,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 {
            return Err(Error::Config("network.hidden_layers must be >= 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("network.hidden_width must be >= 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width;
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        shapes.push((INPUT_DIM, w));
        shapes.extend(std::iter::repeat_n((w, w), self.hidden_layers - 1));
        shapes.push((w, 1));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// A flat parameter vector together with the layer shapes it unflattens into.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub shapes: Vec<(usize, usize)>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerSlot {
    fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }
}

fn layer_slots(config: &MlpConfig) -> Vec<LayerSlot> {
    let mut offset = 0;
    config
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let slot = LayerSlot {
                fan_in,
                fan_out,
                offset,
            };
            offset += fan_in * fan_out + fan_out;
            slot
        })
        .collect()
}

/// Raw tanh network `(x1, x2) -> z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    params: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; config.param_count()];
        for slot in layer_slots(&config) {
            let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            for w in &mut params[slot.offset..slot.bias_offset()] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: vec![0.0; config.param_count()],
            config,
        })
    }

    pub fn from_params(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_count();
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn unflatten(config: MlpConfig, flat: &ParamVector) -> Result<Self> {
        if flat.shapes != config.layer_shapes() {
            return Err(Error::Shape(format!(
                "layer shapes {:?} do not match configuration {:?}",
                flat.shapes,
                config.layer_shapes()
            )));
        }
        Self::from_params(config, flat.values.clone())
    }

    pub fn flatten(&self) -> ParamVector {
        ParamVector {
            values: self.params.clone(),
            shapes: self.config.layer_shapes(),
        }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Weight `(row, col)` and bias views of layer `l`, used by tests to build exact nets.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let slot = layer_slots(&self.config)[l];
        let (w, rest) = self.params[slot.offset..].split_at_mut(slot.fan_in * slot.fan_out);
        (w, &mut rest[..slot.fan_out])
    }

    /// Generic forward pass; `param(i)` supplies parameter `i` in the caller's scalar type.
    pub fn forward_generic<T: Scalar>(&self, param: impl Fn(usize) -> T, x1: T, x2: T) -> T {
        let slots = layer_slots(&self.config);
        let last = slots.len() - 1;
        let mut h = vec![x1, x2];
        for (l, slot) in slots.iter().enumerate() {
            let mut next = Vec::with_capacity(slot.fan_out);
            for j in 0..slot.fan_out {
                let mut acc = param(slot.bias_offset() + j);
                let row = slot.offset + j * slot.fan_in;
                for (i, &hi) in h.iter().enumerate() {
                    acc = acc + param(row + i) * hi;
                }
                next.push(if l == last { acc } else { acc.tanh() });
            }
            h = next;
        }
        h[0]
    }

    pub fn forward_raw(&self, x1: f64, x2: f64) -> f64 {
        self.forward_generic(|i| self.params[i], x1, x2)
    }
}

static DEGENERATE_WARNED: AtomicBool = AtomicBool::new(false);

/// The pricing surrogate: raw network plus the contract that fixes its scalings.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    mlp: Mlp,
    market: MarketParams,
}

impl Surrogate {
    pub fn new(mlp: Mlp, market: MarketParams) -> Self {
        Self { mlp, market }
    }

    pub fn init(config: MlpConfig, market: MarketParams, seed: u64) -> Result<Self> {
        Ok(Self::new(Mlp::init(config, seed)?, market))
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn into_mlp(self) -> Mlp {
        self.mlp
    }

    pub fn market(&self) -> &MarketParams {
        &self.market
    }

    pub fn config(&self) -> &MlpConfig {
        &self.mlp.config
    }

    pub fn check_input(&self, s: f64, t: f64) -> Result<()> {
        if !s.is_finite() || !t.is_finite() {
            return Err(Error::Domain(format!("non-finite input (S = {s}, t = {t})")));
        }
        if self.mlp.config.input_transform == InputTransform::LogS && s <= 0.0 {
            return Err(Error::Domain(format!(
                "log-S input transform needs S > 0, got {s}"
            )));
        }
        Ok(())
    }

    /// Normalised network inputs as generic scalars.
    pub fn normalise<T: Scalar>(&self, s: T, t: T) -> (T, T) {
        let m = &self.market;
        let x1 = match self.mlp.config.input_transform {
            InputTransform::Identity => s.scale(1.0 / m.strike).shift(-1.0),
            InputTransform::LogS => s
                .scale(1.0 / m.strike)
                .ln()
                .scale(1.0 / (m.volatility * m.maturity.sqrt())),
        };
        (x1, t.scale(1.0 / m.maturity))
    }

    /// Maps the raw network output `z` to a price at `(s, t)`.
    pub fn head<T: Scalar>(&self, z: T, s: T, t: T) -> T {
        let m = &self.market;
        match self.mlp.config.output_transform {
            OutputTransform::Identity => z.scale(m.strike),
            OutputTransform::BoundedLogit => {
                let tau = (-t).shift(m.maturity);
                let (lower, upper) = bounds_generic(m.kind, s, m.strike, m.rate, tau);
                let width = upper - lower;
                if width.primal() < DEGENERATE_WIDTH * m.strike {
                    if !DEGENERATE_WARNED.swap(true, Ordering::Relaxed) {
                        log::warn!(
                            "price bounds pinch at S = {}; falling back to identity output",
                            s.primal()
                        );
                    }
                    z.scale(m.strike)
                } else {
                    lower + width * z.sigmoid()
                }
            }
        }
    }

    /// Generic price evaluation; no domain checks.
    pub fn price_generic<T: Scalar>(&self, param: impl Fn(usize) -> T, s: T, t: T) -> T {
        let (x1, x2) = self.normalise(s, t);
        let z = self.mlp.forward_generic(param, x1, x2);
        self.head(z, s, t)
    }

    /// `V(S, t)`.
    pub fn forward(&self, s: f64, t: f64) -> Result<f64> {
        self.check_input(s, t)?;
        let p = &self.mlp.params;
        Ok(self.price_generic(|i| p[i], s, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::OptionKind;

    fn market() -> MarketParams {
        MarketParams::benchmark(OptionKind::EuroPut)
    }

    #[test]
    fn default_parameter_count() {
        assert_eq!(MlpConfig::default().param_count(), 7851);
        let net = Mlp::init(MlpConfig::default(), 1).unwrap();
        assert_eq!(net.flatten().len(), 7851);
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = Mlp::init(MlpConfig::default(), 42).unwrap();
        let b = Mlp::init(MlpConfig::default(), 42).unwrap();
        assert_eq!(a, b);
        for slot in layer_slots(a.config()) {
            let biases = &a.params()[slot.bias_offset()..slot.bias_offset() + slot.fan_out];
            assert!(biases.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn different_seeds_differ_almost_everywhere() {
        let cfg = MlpConfig::default();
        let a = Mlp::init(cfg, 1).unwrap();
        let b = Mlp::init(cfg, 2).unwrap();
        let slots = layer_slots(&cfg);
        let mut weights = 0;
        let mut differ = 0;
        for s in &slots {
            for i in s.offset..s.bias_offset() {
                weights += 1;
                if a.params()[i] != b.params()[i] {
                    differ += 1;
                }
            }
        }
        assert!(differ as f64 >= 0.99 * weights as f64);
    }

    #[test]
    fn glorot_limits_respected() {
        let cfg = MlpConfig::default();
        let a = Mlp::init(cfg, 3).unwrap();
        for s in layer_slots(&cfg) {
            let limit = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
            assert!(a.params()[s.offset..s.bias_offset()]
                .iter()
                .all(|w| w.abs() <= limit));
        }
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Surrogate::new(Mlp::zeros(MlpConfig::default()).unwrap(), market());
        for &(s, t) in &[(0.0, 0.0), (45.0, 0.25), (135.0, 0.5)] {
            assert_eq!(net.forward(s, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let cfg = MlpConfig::default();
        let net = Mlp::init(cfg, 5).unwrap();
        let mut flat = net.flatten();
        assert_eq!(Mlp::unflatten(cfg, &flat).unwrap(), net);
        flat.values.pop();
        assert!(matches!(Mlp::unflatten(cfg, &flat), Err(Error::Shape(_))));
        assert!(matches!(
            Mlp::from_params(cfg, vec![0.0; 10]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn log_transform_rejects_non_positive_spot() {
        let cfg = MlpConfig {
            input_transform: InputTransform::LogS,
            ..MlpConfig::default()
        };
        let net = Surrogate::init(cfg, market(), 0).unwrap();
        assert!(matches!(net.forward(0.0, 0.1), Err(Error::Domain(_))));
        assert!(net.forward(10.0, 0.1).unwrap().is_finite());
    }

    #[test]
    fn lipschitz_probe() {
        let net = Surrogate::init(MlpConfig::default(), market(), 9).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..50 {
            let s = 1.0 + i as f64 * 2.6;
            let d = (net.forward(s + 1e-6, 0.2).unwrap() - net.forward(s, 0.2).unwrap()).abs();
            worst = worst.max(d / 1e-6);
        }
        // the identity head scales by K and x1 by 1/K, so slopes stay O(weights)
        assert!(worst.is_finite() && worst < 100.0, "slope {worst}");
    }

    #[test]
    fn bounded_head_stays_in_bounds() {
        let cfg = MlpConfig {
            output_transform: OutputTransform::BoundedLogit,
            ..MlpConfig::default()
        };
        let m = MarketParams::benchmark(OptionKind::AmerPut);
        let mut net = Surrogate::init(cfg, m, 11).unwrap();
        for p in net.mlp_mut().params_mut() {
            *p *= 5.0;
        }
        for i in 1..60 {
            let s = i as f64 * 2.2;
            let t = 0.4 * (i % 7) as f64 / 7.0;
            let v = net.forward(s, t).unwrap();
            let lower = (45.0 - s).max(0.0);
            assert!(v >= lower && v <= 45.0, "V({s}, {t}) = {v}");
        }
    }
}

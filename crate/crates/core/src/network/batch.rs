//! Batched forward/backward pass carrying second-order input jets.
//!
//! Every point contributes a value row; "jet" points additionally contribute
//! three tangent rows (`d/dS`, `d2/dS2`, `d/dt`). All rows are stacked into
//! one matrix per layer so each affine map is a single GEMM:
//!
//! ```text
//! rows [0, nv)            value rows of value-only points
//! rows [nv, nv+nj)        value rows of jet points
//! rows [nv+nj, nv+2nj)    d/dS rows
//! rows [nv+2nj, nv+3nj)   d2/dS2 rows
//! rows [nv+3nj, nv+4nj)   d/dt rows
//! ```
//!
//! Biases enter only the value rows. Through `y = tanh(a)` with
//! `p = 1 - y^2`, `q = -2 y p` the tangent rows propagate as
//! `h_s = p a_s`, `h_ss = p a_ss + q a_s^2`, `h_t = p a_t`. The backward
//! pass differentiates those expressions in reverse, giving the parameter
//! gradient of any loss built from values and input derivatives.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use super::{layer_slots, InputTransform, OutputTransform, Surrogate};
use crate::autodiff::{DualOfDual, InputDerivatives};
use crate::bounds::{bounds_generic, DEGENERATE_WIDTH};
use crate::error::{Error, Result};

/// Output-head data for one point.
#[derive(Clone, Copy, Debug)]
enum Head {
    /// `V = c z`.
    Linear(f64),
    /// `V = L + D sigmoid(z)` with `L`, `D` as jets `[v, s, ss, t]`.
    Logistic { lower: [f64; 4], width: [f64; 4] },
}

/// Cached forward state of one batch.
pub struct JetBatch {
    n_value: usize,
    n_jet: usize,
    inputs: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    z: Vec<f64>,
    heads: Vec<Head>,
    /// Prices at the value-only points.
    pub values: Vec<f64>,
    /// Prices and input derivatives at the jet points.
    pub jets: Vec<InputDerivatives>,
}

fn input_jet(net: &Surrogate, s: f64) -> [f64; 3] {
    let k = net.market().strike;
    match net.config().input_transform {
        InputTransform::Identity => [s / k - 1.0, 1.0 / k, 0.0],
        InputTransform::LogS => {
            let c = net.market().volatility * net.market().maturity.sqrt();
            [(s / k).ln() / c, 1.0 / (c * s), -1.0 / (c * s * s)]
        }
    }
}

fn head_for(net: &Surrogate, s: f64, t: f64) -> Head {
    let m = net.market();
    if net.config().output_transform == OutputTransform::Identity {
        return Head::Linear(m.strike);
    }
    let along_s = {
        let sd = DualOfDual::seed(s);
        let tau = DualOfDual::constant(m.maturity - t);
        bounds_generic(m.kind, sd, m.strike, m.rate, tau)
    };
    let along_t = {
        let sd = DualOfDual::constant(s);
        // tau = T - t, so d/dt = -d/dtau
        let tau = DualOfDual::seed(m.maturity - t);
        bounds_generic(m.kind, sd, m.strike, m.rate, tau)
    };
    let width_v = along_s.1.v - along_s.0.v;
    if width_v < DEGENERATE_WIDTH * m.strike {
        // identity fallback, matching `Surrogate::head`
        return Head::Linear(m.strike);
    }
    let lower = [along_s.0.v, along_s.0.d1, along_s.0.d2, -along_t.0.d1];
    let width = [
        width_v,
        along_s.1.d1 - along_s.0.d1,
        along_s.1.d2 - along_s.0.d2,
        -(along_t.1.d1 - along_t.0.d1),
    ];
    Head::Logistic { lower, width }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Head {
    /// Price channels from raw output channels `[z, z_s, z_ss, z_t]`.
    fn forward(&self, z: [f64; 4]) -> [f64; 4] {
        match *self {
            Head::Linear(c) => [c * z[0], c * z[1], c * z[2], c * z[3]],
            Head::Logistic { lower: l, width: d } => {
                let s = sigmoid(z[0]);
                let s1 = s * (1.0 - s);
                let s2 = s1 * (1.0 - 2.0 * s);
                let u = [s, s1 * z[1], s1 * z[2] + s2 * z[1] * z[1], s1 * z[3]];
                [
                    l[0] + d[0] * u[0],
                    l[1] + d[1] * u[0] + d[0] * u[1],
                    l[2] + d[2] * u[0] + 2.0 * d[1] * u[1] + d[0] * u[2],
                    l[3] + d[3] * u[0] + d[0] * u[3],
                ]
            }
        }
    }

    /// Pulls price-channel adjoints back to raw output channels.
    fn backward(&self, z: [f64; 4], vb: [f64; 4]) -> [f64; 4] {
        match *self {
            Head::Linear(c) => [c * vb[0], c * vb[1], c * vb[2], c * vb[3]],
            Head::Logistic { width: d, .. } => {
                let s = sigmoid(z[0]);
                let s1 = s * (1.0 - s);
                let s2 = s1 * (1.0 - 2.0 * s);
                let s3 = s1 * (1.0 - 6.0 * s + 6.0 * s * s);
                let ub = [
                    vb[0] * d[0] + vb[1] * d[1] + vb[2] * d[2] + vb[3] * d[3],
                    vb[1] * d[0] + 2.0 * vb[2] * d[1],
                    vb[2] * d[0],
                    vb[3] * d[0],
                ];
                [
                    ub[0] * s1 + (ub[1] * z[1] + ub[2] * z[2] + ub[3] * z[3]) * s2
                        + ub[2] * z[1] * z[1] * s3,
                    ub[1] * s1 + ub[2] * s2 * 2.0 * z[1],
                    ub[2] * s1,
                    ub[3] * s1,
                ]
            }
        }
    }
}

fn weights<'a>(params: &'a [f64], offset: usize, fan_in: usize, fan_out: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((fan_out, fan_in), &params[offset..offset + fan_in * fan_out])
        .expect("layer slice matches its shape")
}

impl JetBatch {
    /// Forward pass at `value_pts` (value only) and `jet_pts` (value and derivatives).
    pub fn forward(net: &Surrogate, value_pts: &[(f64, f64)], jet_pts: &[(f64, f64)]) -> Result<Self> {
        for &(s, t) in value_pts.iter().chain(jet_pts) {
            net.check_input(s, t)?;
        }
        let nv = value_pts.len();
        let nj = jet_pts.len();
        let n_val = nv + nj;
        let rows = n_val + 3 * nj;
        let inv_t = 1.0 / net.market().maturity;

        let mut inputs = Array2::<f64>::zeros((rows, 2));
        for (i, &(s, t)) in value_pts.iter().chain(jet_pts).enumerate() {
            inputs[[i, 0]] = input_jet(net, s)[0];
            inputs[[i, 1]] = t * inv_t;
        }
        for (k, &(s, _)) in jet_pts.iter().enumerate() {
            let x = input_jet(net, s);
            inputs[[n_val + k, 0]] = x[1];
            inputs[[n_val + nj + k, 0]] = x[2];
            inputs[[n_val + 2 * nj + k, 1]] = inv_t;
        }

        let params = net.mlp().params();
        let slots = layer_slots(net.config());
        let (hidden, out_slot) = slots.split_at(slots.len() - 1);
        let out_slot = out_slot[0];

        let mut pre = Vec::with_capacity(hidden.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(hidden.len());
        for slot in hidden {
            let w = weights(params, slot.offset, slot.fan_in, slot.fan_out);
            let bias = &params[slot.bias_offset()..slot.bias_offset() + slot.fan_out];
            let prev = post.last().unwrap_or(&inputs);
            let mut a = Array2::<f64>::zeros((rows, slot.fan_out));
            general_mat_mul(1.0, prev, &w.t(), 0.0, &mut a);
            let width = slot.fan_out;
            let mut h = Array2::<f64>::zeros((rows, width));
            {
                let a_s = a.as_slice_mut().expect("standard layout");
                let h_s = h.as_slice_mut().expect("standard layout");
                for r in 0..n_val {
                    let row = &mut a_s[r * width..(r + 1) * width];
                    for (x, b) in row.iter_mut().zip(bias) {
                        *x += b;
                    }
                    for (hv, &av) in h_s[r * width..(r + 1) * width].iter_mut().zip(row.iter()) {
                        *hv = av.tanh();
                    }
                }
                for k in 0..nj {
                    let rv = (nv + k) * width;
                    let rs = (n_val + k) * width;
                    let rss = (n_val + nj + k) * width;
                    let rt = (n_val + 2 * nj + k) * width;
                    for u in 0..width {
                        let y = h_s[rv + u];
                        let p = 1.0 - y * y;
                        let q = -2.0 * y * p;
                        let as_ = a_s[rs + u];
                        h_s[rs + u] = p * as_;
                        h_s[rss + u] = p * a_s[rss + u] + q * as_ * as_;
                        h_s[rt + u] = p * a_s[rt + u];
                    }
                }
            }
            pre.push(a);
            post.push(h);
        }

        let last = post.last().expect("at least one hidden layer");
        let w_out = &params[out_slot.offset..out_slot.offset + out_slot.fan_in];
        let b_out = params[out_slot.bias_offset()];
        let z: Vec<f64> = last
            .rows()
            .into_iter()
            .enumerate()
            .map(|(r, row)| {
                let dot: f64 = row.iter().zip(w_out).map(|(h, w)| h * w).sum();
                if r < n_val {
                    dot + b_out
                } else {
                    dot
                }
            })
            .collect();

        let heads: Vec<Head> = value_pts
            .iter()
            .chain(jet_pts)
            .map(|&(s, t)| head_for(net, s, t))
            .collect();
        let values = (0..nv)
            .map(|i| heads[i].forward([z[i], 0.0, 0.0, 0.0])[0])
            .collect();
        let jets = (0..nj)
            .map(|k| {
                let zc = [z[nv + k], z[n_val + k], z[n_val + nj + k], z[n_val + 2 * nj + k]];
                let v = heads[nv + k].forward(zc);
                InputDerivatives {
                    v: v[0],
                    ds: v[1],
                    dss: v[2],
                    dt: v[3],
                }
            })
            .collect();

        Ok(Self {
            n_value: nv,
            n_jet: nj,
            inputs,
            pre,
            post,
            z,
            heads,
            values,
            jets,
        })
    }

    /// Parameter gradient of `sum_i value_adj[i] V_i + sum_k <jet_adj[k], jet_k>`.
    pub fn backward(&self, net: &Surrogate, value_adj: &[f64], jet_adj: &[InputDerivatives]) -> Result<Vec<f64>> {
        let (nv, nj) = (self.n_value, self.n_jet);
        if value_adj.len() != nv || jet_adj.len() != nj {
            return Err(Error::Shape(format!(
                "adjoints ({}, {}) do not match batch ({nv}, {nj})",
                value_adj.len(),
                jet_adj.len()
            )));
        }
        let n_val = nv + nj;
        let rows = n_val + 3 * nj;
        let params = net.mlp().params();
        let slots = layer_slots(net.config());
        let (hidden, out_slot) = slots.split_at(slots.len() - 1);
        let out_slot = out_slot[0];
        let mut grad = vec![0.0; params.len()];

        // head -> raw output adjoints
        let mut zb = vec![0.0; rows];
        for i in 0..nv {
            zb[i] = self.heads[i].backward([self.z[i], 0.0, 0.0, 0.0], [value_adj[i], 0.0, 0.0, 0.0])[0];
        }
        for (k, a) in jet_adj.iter().enumerate() {
            let idx = [nv + k, n_val + k, n_val + nj + k, n_val + 2 * nj + k];
            let zc = idx.map(|r| self.z[r]);
            let g = self.heads[nv + k].backward(zc, [a.v, a.ds, a.dss, a.dt]);
            for (r, gv) in idx.into_iter().zip(g) {
                zb[r] = gv;
            }
        }

        // output layer
        let last = self.post.last().expect("hidden layer");
        let width = out_slot.fan_in;
        let w_out = &params[out_slot.offset..out_slot.offset + width];
        {
            let g_w = &mut grad[out_slot.offset..out_slot.offset + width];
            for (r, row) in last.rows().into_iter().enumerate() {
                let b = zb[r];
                if b != 0.0 {
                    for (g, h) in g_w.iter_mut().zip(row) {
                        *g += b * h;
                    }
                }
            }
        }
        grad[out_slot.bias_offset()] = zb[..n_val].iter().sum();

        let mut g_h = Array2::<f64>::zeros((rows, width));
        for (r, mut row) in g_h.rows_mut().into_iter().enumerate() {
            for (g, w) in row.iter_mut().zip(w_out) {
                *g = zb[r] * w;
            }
        }

        for (l, slot) in hidden.iter().enumerate().rev() {
            let width = slot.fan_out;
            let a = self.pre[l].as_slice().expect("standard layout");
            let h = self.post[l].as_slice().expect("standard layout");
            let mut a_bar = Array2::<f64>::zeros((rows, width));
            {
                let gb = g_h.as_slice().expect("standard layout");
                let ab = a_bar.as_slice_mut().expect("standard layout");
                for r in 0..nv {
                    for u in r * width..(r + 1) * width {
                        let y = h[u];
                        ab[u] = gb[u] * (1.0 - y * y);
                    }
                }
                for k in 0..nj {
                    let rv = (nv + k) * width;
                    let rs = (n_val + k) * width;
                    let rss = (n_val + nj + k) * width;
                    let rt = (n_val + 2 * nj + k) * width;
                    for u in 0..width {
                        let y = h[rv + u];
                        let p = 1.0 - y * y;
                        let q = -2.0 * y * p;
                        let dq = -2.0 * p * p + 4.0 * y * y * p;
                        let (as_, ass, at) = (a[rs + u], a[rss + u], a[rt + u]);
                        let (gv, gs, gss, gt) = (gb[rv + u], gb[rs + u], gb[rss + u], gb[rt + u]);
                        ab[rs + u] = gs * p + 2.0 * gss * q * as_;
                        ab[rss + u] = gss * p;
                        ab[rt + u] = gt * p;
                        let p_bar = gs * as_ + gss * ass + gt * at;
                        let q_bar = gss * as_ * as_;
                        ab[rv + u] = gv * p + p_bar * q + q_bar * dq;
                    }
                }
            }

            let prev = if l == 0 { &self.inputs } else { &self.post[l - 1] };
            {
                let g_w = &mut grad[slot.offset..slot.offset + slot.fan_in * width];
                let mut g_w = ArrayViewMut2::from_shape((width, slot.fan_in), g_w).expect("shape");
                general_mat_mul(1.0, &a_bar.t(), prev, 0.0, &mut g_w);
            }
            {
                let ab = a_bar.as_slice().expect("standard layout");
                let g_b = &mut grad[slot.bias_offset()..slot.bias_offset() + width];
                for r in 0..n_val {
                    for (g, x) in g_b.iter_mut().zip(&ab[r * width..(r + 1) * width]) {
                        *g += x;
                    }
                }
            }
            if l > 0 {
                let w = weights(params, slot.offset, slot.fan_in, width);
                let mut next = Array2::<f64>::zeros((rows, slot.fan_in));
                general_mat_mul(1.0, &a_bar, &w, 0.0, &mut next);
                g_h = next;
            }
        }
        Ok(grad)
    }
}

/// Prices at many points in one batched pass.
pub fn predict(net: &Surrogate, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    Ok(JetBatch::forward(net, points, &[])?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{MarketParams, OptionKind};
    use crate::autodiff::input_derivatives;
    use crate::network::MlpConfig;

    fn nets() -> Vec<Surrogate> {
        let mut out = Vec::new();
        for (kind, input, output) in [
            (OptionKind::EuroPut, InputTransform::Identity, OutputTransform::Identity),
            (OptionKind::AmerPut, InputTransform::LogS, OutputTransform::BoundedLogit),
            (OptionKind::EuroCall, InputTransform::Identity, OutputTransform::BoundedLogit),
        ] {
            let cfg = MlpConfig {
                hidden_layers: 3,
                hidden_width: 7,
                input_transform: input,
                output_transform: output,
            };
            let mut net = Surrogate::init(cfg, MarketParams::benchmark(kind), 17).unwrap();
            for (i, p) in net.mlp_mut().params_mut().iter_mut().enumerate() {
                *p += 0.05 * ((i as f64) * 0.37).sin();
            }
            out.push(net);
        }
        out
    }

    #[test]
    fn batch_matches_pointwise_duals() {
        let pts = [(12.0, 0.1), (44.0, 0.3), (47.5, 0.45), (90.0, 0.05)];
        for net in nets() {
            let batch = JetBatch::forward(&net, &pts[..2], &pts).unwrap();
            for (i, &(s, t)) in pts.iter().enumerate() {
                let d = input_derivatives(&net, s, t).unwrap();
                let j = batch.jets[i];
                for (x, y) in [(j.v, d.v), (j.ds, d.ds), (j.dss, d.dss), (j.dt, d.dt)] {
                    assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
                }
            }
            for (i, &(s, t)) in pts[..2].iter().enumerate() {
                let v = net.forward(s, t).unwrap();
                assert!((batch.values[i] - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let vpts = [(20.0, 0.2), (60.0, 0.5)];
        let jpts = [(40.0, 0.1), (50.0, 0.35)];
        let vadj = [0.7, -1.3];
        let jadj = [
            InputDerivatives { v: 0.3, ds: -0.8, dss: 2.0, dt: 0.4 },
            InputDerivatives { v: -0.5, ds: 1.1, dss: -1.5, dt: 0.9 },
        ];
        let objective = |net: &Surrogate| {
            let b = JetBatch::forward(net, &vpts, &jpts).unwrap();
            let mut acc = 0.0;
            for (v, a) in b.values.iter().zip(&vadj) {
                acc += v * a;
            }
            for (j, a) in b.jets.iter().zip(&jadj) {
                acc += j.v * a.v + j.ds * a.ds + j.dss * a.dss + j.dt * a.dt;
            }
            acc
        };
        for net in nets() {
            let b = JetBatch::forward(&net, &vpts, &jpts).unwrap();
            let g = b.backward(&net, &vadj, &jadj).unwrap();
            let h = 1e-6;
            for i in 0..g.len() {
                let mut plus = net.clone();
                plus.mlp_mut().params_mut()[i] += h;
                let mut minus = net.clone();
                minus.mlp_mut().params_mut()[i] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                assert!(err < 1e-5, "param {i}: fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn backward_rejects_mismatched_adjoints() {
        let net = &nets()[0];
        let b = JetBatch::forward(net, &[(10.0, 0.1)], &[]).unwrap();
        assert!(b.backward(net, &[], &[]).is_err());
    }
}

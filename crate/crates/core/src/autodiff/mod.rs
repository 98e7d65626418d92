//! Differentiation machinery.
//!
//! Two routes are provided. The [`graph`] tape plus [`DualOfDual`] carriers
//! form a general, slow reference; the batched jet engine in
//! [`crate::network::batch`] is the fast path used in training. Tests check
//! the two against each other and against finite differences.

mod dual;
pub mod graph;
mod scalar;

pub use dual::DualOfDual;
pub use graph::{evaluate, grad_params, Graph, GraphBuilder, Node, Op, Var};
pub use scalar::Scalar;

use crate::error::Result;
use crate::network::Surrogate;

/// Value and input derivatives of the surrogate at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InputDerivatives {
    pub v: f64,
    pub ds: f64,
    pub dss: f64,
    pub dt: f64,
}

/// `(V, dV/dS, d2V/dS2, dV/dt)` at `(s, t)` via forward-mode carriers.
pub fn input_derivatives(net: &Surrogate, s: f64, t: f64) -> Result<InputDerivatives> {
    net.check_input(s, t)?;
    let params = net.mlp().params();
    let along_s = net.price_generic(
        |i| DualOfDual::constant(params[i]),
        DualOfDual::seed(s),
        DualOfDual::constant(t),
    );
    let along_t = net.price_generic(
        |i| DualOfDual::constant(params[i]),
        DualOfDual::constant(s),
        DualOfDual::seed(t),
    );
    Ok(InputDerivatives {
        v: along_s.v,
        ds: along_s.d1,
        dss: along_s.d2,
        dt: along_t.d1,
    })
}

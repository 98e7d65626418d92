//! Mesh-free Black-Scholes pricing with a physics-informed neural surrogate.
//!
//! The surrogate `V(S, t)` is a small tanh MLP trained to minimise the
//! Black-Scholes residual plus terminal and boundary penalties. A second,
//! anchored fine-tuning stage produces an ensemble whose spread is reported
//! as an epistemic uncertainty band. Two independent oracles (closed form and
//! finite differences) are included for verification.
//!
//! Module map:
//!
//! - [`autodiff`]: scalar tape, second-order dual numbers, input derivatives
//! - [`network`]: the MLP surrogate, parameter flattening, checkpoints, batched jets
//! - [`analytic`]: closed-form European prices
//! - [`fd`]: Crank-Nicolson, projected SOR and a CRR binomial tree
//! - [`sampler`]: collocation sets
//! - [`losses`]: residual operator, composite loss, obstacle and anchor penalties
//! - [`trainer`]: Adam, the two training stages, ensemble orchestration
//! - [`metrics`]: error metrics and ensemble statistics
//! - [`bounds`]: no-arbitrage bounds and the logit output mapping
//! - [`config`], [`io`]: run configuration and file formats

pub mod analytic;
pub mod autodiff;
pub mod bounds;
pub mod config;
pub mod error;
pub mod fd;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod sampler;
pub mod trainer;

pub use analytic::{MarketParams, OptionKind};
pub use error::{Error, Result};

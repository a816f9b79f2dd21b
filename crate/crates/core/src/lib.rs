//! Mean-field models of FCFS load balancers with Coxian job sizes.
//!
//! - [`dist`]: Coxian and hyperexponential distributions, conversion, moments.
//! - [`order`]: the finite-buffer state space and the `<=_C` partial order.
//! - [`mfode`]: policy drifts, integration, fixed points and diagnostics.
//! - [`sim`]: finite-N stochastic simulation for comparison with fixed points.
//! - [`verify`]: randomized verification suites.

pub mod dist;
pub mod error;
pub mod mfode;
pub mod order;
pub mod sampling;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};

//! Stochastic maximum principle toolkit for controlled SDEs with dissipative
//! (one-sided Lipschitz) drift.
//!
//! The modules follow the pipeline: define a [`model::ControlProblem`],
//! simulate it ([`forward`]), perturb the control by spikes ([`variation`]),
//! solve the first- and second-order adjoint equations ([`adjoint`]) and check
//! the maximum condition ([`smp`]). For convex control domains [`convex`]
//! adds the Gateaux gradient, a projected-gradient optimizer and a
//! sufficient-condition check. [`bench`] holds reference problems with exact
//! oracles.

pub mod adjoint;
pub mod bench;
pub mod convex;
pub mod error;
pub mod forward;
pub mod model;
pub mod numerics;
pub mod smp;
pub mod variation;

pub use error::{Error, Result};

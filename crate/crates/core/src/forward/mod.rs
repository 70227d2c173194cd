//! Path-ensemble simulation of the controlled state equation.

mod brownian;
mod control;
pub mod export;
mod moments;
mod simulate;

pub use brownian::BrownianIncrements;
pub use control::{ControlProcess, FeedbackFn};
pub use moments::{moment_estimate, MomentProfile};
pub(crate) use simulate::advance;
pub use simulate::{
    implicit_drift_step, simulate, simulate_with_increments, ImplicitStep, PathEnsemble, Scheme,
};

//! Problem definitions: coefficients, control domains, time grids and the
//! sampled hypothesis checks.

mod domain;
mod grid;
mod problem;
mod validate;

pub use domain::ControlDomain;
pub use grid::TimeGrid;
pub use problem::{Coefficients, ControlProblem, GrowthExponents, Matrix, Vector};
pub use validate::{validate_problem, HypothesisCheck, ValidationOptions, ValidationReport};

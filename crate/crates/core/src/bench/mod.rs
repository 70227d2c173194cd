//! Reference problems with independent oracles: linear-quadratic problems
//! solved by Riccati equations, and odd-degree polynomial drifts.

mod lq;
mod poly;
pub mod registry;
mod scalar;

pub use lq::{make_lq_problem, riccati_solve, second_adjoint_oracle, LqSpec, RiccatiSolution};
pub use poly::{certified_alpha, make_poly_problem, AffineCoef, PolyDriftSpec};
pub use registry::{lookup, registered_problem, BenchSpec, REGISTERED};
pub use scalar::{ScalarFn, ScalarModel, TerminalFn};

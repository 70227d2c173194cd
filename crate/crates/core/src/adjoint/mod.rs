//! First- and second-order adjoint equations along a reference ensemble,
//! solved backward by least-squares regression with an implicit step in the
//! drift Jacobian.

mod basis;
mod duality;
mod solve;

pub use basis::RegressionBasis;
pub use duality::{duality_check_first, DualityIdentity, DualityReport};
pub use solve::{
    hamiltonian_hessian, solve_adjoints, solve_first_adjoint, solve_second_adjoint, AdjointOptions,
    AdjointSolution, FirstAdjoint, RegressionDiagnostics, SecondAdjoint,
};

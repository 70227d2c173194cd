//! Convex control domains: the linearized state, the directional derivative
//! of the cost, the variational inequality, projected-gradient optimization
//! and the sufficient-condition checks.

mod direction;
mod gateaux;
mod inequality;
mod linearized;
mod optimize;
mod sufficiency;

pub use direction::GateauxDirection;
pub use gateaux::{
    compare_gateaux_modes, finite_difference, gateaux_derivative, gradient_process, GateauxComparison, GateauxMode,
    GradientProcess,
};
pub use inequality::{variational_inequality_check, VariationalOptions, VariationalReport};
pub use linearized::simulate_linearized_state;
pub use optimize::{projected_gradient_descent, IterationRecord, OptimizerOptions, OptimizerResult};
pub use sufficiency::{sufficiency_check, ConditionCheck, ConvexityWitness, SufficiencyOptions, SufficiencyReport};

//! Hamiltonians along a reference pair and the checks of the maximum
//! condition: point-wise maximality over a control sample and the integrated
//! spike inequality.

mod check;
mod hamiltonian;
mod spike;

pub(crate) use check::{first_adjoint_error_scales, insert_witness};
pub use check::{smp_check, SmpOptions, SmpReport, Witness};
pub use hamiltonian::{hamiltonian, hamiltonian_at, script_h, HamiltonianContext};
pub use spike::{
    spike_inequality_check, spike_inequality_point, SpikeInequalityPoint, SpikeInequalityReport, SpikeValueVerdict,
};

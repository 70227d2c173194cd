//! Spike variations of a reference control: first and second variation
//! processes, their expansion orders in the spike width, and the matching
//! second-order expansion of the cost.

mod cost;
mod orders;
mod process;
mod spike;

pub use cost::{cost, cost_expansion_check, cost_expansion_point, CostExpansionPoint, CostExpansionReport};
pub use orders::{
    expansion_moments, expansion_orders, expansion_orders_on, ExpansionOptions, ExpansionReport,
    MomentPoint, Quantity, QuantityOrder,
};
pub use process::{
    simulate_first_variation, simulate_perturbed_state, simulate_second_variation,
    variation_processes, StatePaths, VariationProcesses,
};
pub(crate) use cost::path_costs;
pub(crate) use process::SpikeContext;
pub use spike::{spike_perturb, SpikeFamily, SpikeSpec};

use rayon::prelude::*;

use super::PathEnsemble;
use crate::error::{Error, Result};
use crate::numerics::Estimate;

/// Per-node `E|x(t_i)|^p` with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentProfile {
    pub power: f64,
    pub per_node: Vec<Estimate>,
    /// Node attaining the largest mean.
    pub sup_node: usize,
}

impl MomentProfile {
    pub fn sup(&self) -> Estimate {
        self.per_node[self.sup_node]
    }
}

/// Monte Carlo estimate of `E|x(t_i)|^p` at every grid node.
pub fn moment_estimate(paths: &PathEnsemble, p: f64) -> Result<MomentProfile> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("moment power must be >= 1, got {p}")));
    }
    if paths.states.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("ensemble contains non-finite states".into()));
    }
    let per_node: Vec<Estimate> = (0..=paths.grid.num_steps())
        .into_par_iter()
        .map(|node| {
            let samples: Vec<f64> = (0..paths.num_paths)
                .map(|m| {
                    let x = paths.state_slice(m, node);
                    x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p)
                })
                .collect();
            Estimate::from_samples(&samples)
        })
        .collect();
    let sup_node = per_node
        .iter()
        .enumerate()
        .fold(0, |best, (i, e)| if e.mean > per_node[best].mean { i } else { best });
    Ok(MomentProfile {
        power: p,
        per_node,
        sup_node,
    })
}

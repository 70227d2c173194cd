use std::fmt;

use nalgebra::DVector;
use rayon::prelude::*;

use super::FirstAdjoint;
use crate::error::{Error, Result};
use crate::forward::PathEnsemble;
use crate::model::{ControlProblem, Vector};
use crate::numerics::{ordered_sum, quadratic_forms, Estimate};
use crate::variation::{SpikeContext, SpikeSpec};

/// One pairing identity `E<p(T), v(T)> = E int (...) dt`, both sides by
/// Monte Carlo on common increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityIdentity {
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Path-wise `lhs - rhs`.
    pub residual: Estimate,
    /// `3 stderr + 2 h |lhs|`.
    pub tolerance: f64,
    pub passed: bool,
}

impl DualityIdentity {
    fn new(pairs: &[(f64, f64)], h: f64) -> Self {
        let lhs = Estimate::from_samples(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let rhs = Estimate::from_samples(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let residual = Estimate::from_samples(&pairs.iter().map(|p| p.0 - p.1).collect::<Vec<_>>());
        let tolerance = 3.0 * residual.stderr + 2.0 * h * lhs.mean.abs();
        Self {
            lhs,
            rhs,
            residual,
            tolerance,
            passed: residual.mean.abs() <= tolerance,
        }
    }

    /// `|residual| / stderr`; infinite when the residual is exact but nonzero.
    pub fn stderr_ratio(&self) -> f64 {
        if self.residual.stderr > 0.0 {
            self.residual.mean.abs() / self.residual.stderr
        } else if self.residual.mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    /// Pairing of `p` with the first variation.
    pub first_variation: DualityIdentity,
    /// Pairing of `p` with the second variation.
    pub second_variation: DualityIdentity,
}

impl DualityReport {
    pub fn passed(&self) -> bool {
        self.first_variation.passed && self.second_variation.passed
    }
}

impl fmt::Display for DualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, id) in [("y", &self.first_variation), ("z", &self.second_variation)] {
            writeln!(
                f,
                "{} <p,{name}>: lhs {:.6e} rhs {:.6e} residual {:.3e} +- {:.3e} (tol {:.3e})",
                if id.passed { "PASS" } else { "FAIL" },
                id.lhs.mean,
                id.rhs.mean,
                id.residual.mean,
                id.residual.stderr,
                id.tolerance
            )?;
        }
        Ok(())
    }
}

/// Check the pairings of the first adjoint with the spike variations `y` and
/// `z` along `base`.
pub fn duality_check_first(
    problem: &ControlProblem,
    base: &PathEnsemble,
    spike: &SpikeSpec,
    adjoint: &FirstAdjoint,
) -> Result<DualityReport> {
    let ctx = SpikeContext::new(problem, base, spike)?;
    let grid = base.grid;
    let steps = grid.num_steps();
    if adjoint.num_paths() != base.num_paths || adjoint.num_steps() != steps {
        return Err(Error::DimensionMismatch("adjoint does not match the ensemble".into()));
    }
    let n = problem.dim_state;
    let h = grid.step();
    let nodes = steps + 1;
    let rows: Vec<Result<[(f64, f64); 2]>> = (0..base.num_paths)
        .into_par_iter()
        .map_init(
            || (vec![0.0; nodes * n], vec![0.0; nodes * n]),
            |(y, z), m| {
                ctx.first_variation_path(m, y)?;
                ctx.second_variation_path(m, y, z)?;
                let at = |v: &[f64], i: usize| DVector::from_column_slice(&v[i * n..(i + 1) * n]);
                let p_t = adjoint.p(m, steps);
                let lhs_y = p_t.dot(&at(y, steps));
                let lhs_z = p_t.dot(&at(z, steps));

                let mut ry = Vec::with_capacity(steps);
                let mut rz = Vec::with_capacity(steps);
                for i in 0..steps {
                    let t = grid.node(i);
                    let x = base.state(m, i);
                    let u = base.control(m, i);
                    let (yi, zi) = (at(y, i), at(z, i));
                    let fx = problem.running_cost_dx(t, &x, &u);
                    let p = adjoint.p(m, i);
                    let q = adjoint.q(m, i);
                    let mut ty = fx.dot(&yi);
                    let mut tz = fx.dot(&zi) + 0.5 * p.dot(&quadratic_forms(&problem.drift_dxx(t, &x, &u), &yi));
                    for (j, sj) in problem.diffusion_dxx(t, &x, &u).iter().enumerate() {
                        tz += 0.5 * q.column(j).dot(&quadratic_forms(sj, &yi));
                    }
                    if ctx.window.contains(&i) {
                        let w: &Vector = &ctx.value;
                        let dsigma = problem.diffusion(t, &x, w) - problem.diffusion(t, &x, &u);
                        ty += (q.transpose() * dsigma).trace();
                        tz += p.dot(&(problem.drift(t, &x, w) - problem.drift(t, &x, &u)));
                        let cw = problem.diffusion_dx(t, &x, w);
                        let cu = problem.diffusion_dx(t, &x, &u);
                        for j in 0..cw.len() {
                            tz += q.column(j).dot(&((&cw[j] - &cu[j]) * &yi));
                        }
                    }
                    ry.push(ty);
                    rz.push(tz);
                }
                Ok([
                    (lhs_y, ordered_sum(ry.into_iter()) * h),
                    (lhs_z, ordered_sum(rz.into_iter()) * h),
                ])
            },
        )
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let ys: Vec<(f64, f64)> = rows.iter().map(|r| r[0]).collect();
    let zs: Vec<(f64, f64)> = rows.iter().map(|r| r[1]).collect();
    Ok(DualityReport {
        first_variation: DualityIdentity::new(&ys, h),
        second_variation: DualityIdentity::new(&zs, h),
    })
}

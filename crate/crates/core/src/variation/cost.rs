use rayon::prelude::*;

use super::process::SpikeContext;
use super::{SpikeFamily, SpikeSpec};
use crate::error::{Error, Result};
use crate::forward::PathEnsemble;
use crate::model::{ControlProblem, Vector};
use crate::numerics::{loglog_fit, ordered_sum, Estimate, SlopeFit};

/// Cost of one path: left-endpoint quadrature of the running cost plus the
/// terminal cost. `states` holds all nodes, `control(i)` the control on step `i`.
fn path_cost(
    problem: &ControlProblem,
    base: &PathEnsemble,
    states: &[f64],
    control: impl Fn(usize) -> Vector,
) -> f64 {
    let n = problem.dim_state;
    let grid = &base.grid;
    let steps = grid.num_steps();
    let state = |i: usize| Vector::from_column_slice(&states[i * n..(i + 1) * n]);
    let running = ordered_sum((0..steps).map(|i| problem.running_cost(grid.node(i), &state(i), &control(i))));
    running * grid.step() + problem.terminal_cost(&state(steps))
}

/// Monte Carlo estimate of the cost of the control realized by `ensemble`.
pub fn cost(problem: &ControlProblem, ensemble: &PathEnsemble) -> Estimate {
    Estimate::from_samples(&path_costs(problem, ensemble))
}

/// Per-path costs of `ensemble`, in path order.
pub(crate) fn path_costs(problem: &ControlProblem, ensemble: &PathEnsemble) -> Vec<f64> {
    (0..ensemble.num_paths)
        .into_par_iter()
        .map(|m| path_cost(problem, ensemble, ensemble.path_states(m), |i| ensemble.control(m, i)))
        .collect()
}

/// Both sides of the second-order cost expansion for one spike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostExpansionPoint {
    pub eps: f64,
    /// `J(u^eps) - J(u)` on common increments.
    pub lhs: Estimate,
    /// The expansion evaluated with the simulated `y` and `z`.
    pub rhs: Estimate,
    /// Path-wise `lhs - rhs`.
    pub residual: Estimate,
}

pub fn cost_expansion_point(
    problem: &ControlProblem,
    base: &PathEnsemble,
    spike: &SpikeSpec,
) -> Result<CostExpansionPoint> {
    let ctx = SpikeContext::new(problem, base, spike)?;
    let n = problem.dim_state;
    let grid = base.grid;
    let nodes = grid.num_steps() + 1;
    let h = grid.step();
    let pairs: Vec<Result<(f64, f64)>> = (0..base.num_paths)
        .into_par_iter()
        .map_init(
            || (vec![0.0; nodes * n], vec![0.0; nodes * n], vec![0.0; nodes * n]),
            |(y, z, x), m| {
                ctx.first_variation_path(m, y)?;
                ctx.second_variation_path(m, y, z)?;
                ctx.perturbed_path(m, x)?;
                let xbar = base.path_states(m);
                let j_base = path_cost(problem, base, xbar, |i| base.control(m, i));
                let j_eps = path_cost(problem, base, x, |i| {
                    if ctx.window.contains(&i) {
                        ctx.value.clone()
                    } else {
                        base.control(m, i)
                    }
                });

                let vec_at = |v: &[f64], i: usize| Vector::from_column_slice(&v[i * n..(i + 1) * n]);
                let running = ordered_sum((0..grid.num_steps()).map(|i| {
                    let t = grid.node(i);
                    let (xb, u) = (vec_at(xbar, i), base.control(m, i));
                    let (yi, zi) = (vec_at(y, i), vec_at(z, i));
                    let mut term = problem.running_cost_dx(t, &xb, &u).dot(&(&yi + &zi))
                        + 0.5 * (problem.running_cost_dxx(t, &xb, &u) * &yi).dot(&yi);
                    if ctx.window.contains(&i) {
                        term += problem.running_cost(t, &xb, &ctx.value) - problem.running_cost(t, &xb, &u);
                    }
                    term
                }));
                let last = nodes - 1;
                let (xt, yt, zt) = (vec_at(xbar, last), vec_at(y, last), vec_at(z, last));
                let terminal = problem.terminal_cost_dx(&xt).dot(&(&yt + &zt))
                    + 0.5 * (problem.terminal_cost_dxx(&xt) * &yt).dot(&yt);
                Ok((j_eps - j_base, running * h + terminal))
            },
        )
        .collect();
    let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let res: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    Ok(CostExpansionPoint {
        eps: spike.width,
        lhs: Estimate::from_samples(&lhs),
        rhs: Estimate::from_samples(&rhs),
        residual: Estimate::from_samples(&res),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostExpansionReport {
    pub points: Vec<CostExpansionPoint>,
    /// Fit of `|E residual|` against `eps` over the resolved points.
    pub fit: SlopeFit,
    /// Points whose mean residual exceeds twice its stderr.
    pub resolved: usize,
    pub min_slope: f64,
    pub passed: bool,
}

/// Residuals below this many standard errors are treated as noise.
const RESOLVED_SIGMAS: f64 = 2.0;

/// Fit the expansion residual against the spike width. Passes when the slope
/// exceeds `min_slope` (1 for an `o(eps)` remainder).
pub fn cost_expansion_check(
    problem: &ControlProblem,
    base: &PathEnsemble,
    family: &SpikeFamily,
    min_slope: f64,
) -> Result<CostExpansionReport> {
    family.check(&base.grid, &problem.control_domain)?;
    let points = family
        .spikes()
        .map(|s| cost_expansion_point(problem, base, &s))
        .collect::<Result<Vec<_>>>()?;
    let resolved: Vec<&CostExpansionPoint> = points
        .iter()
        .filter(|p| p.residual.mean.abs() > RESOLVED_SIGMAS * p.residual.stderr)
        .collect();
    if resolved.len() < 2 {
        let worst = points
            .iter()
            .find(|p| p.residual.mean.abs() <= RESOLVED_SIGMAS * p.residual.stderr)
            .expect("fewer than two resolved points means at least one unresolved");
        return Err(Error::InsufficientDecay {
            quantity: "cost residual".into(),
            eps: worst.eps,
            rel_stderr: worst.residual.stderr / worst.residual.mean.abs(),
        });
    }
    let eps: Vec<f64> = resolved.iter().map(|p| p.eps).collect();
    let mags: Vec<f64> = resolved.iter().map(|p| p.residual.mean.abs()).collect();
    let errs: Vec<f64> = resolved.iter().map(|p| p.residual.stderr).collect();
    let fit = loglog_fit(&eps, &mags, &errs);
    Ok(CostExpansionReport {
        resolved: resolved.len(),
        passed: fit.slope.is_finite() && fit.slope > min_slope,
        points,
        fit,
        min_slope,
    })
}

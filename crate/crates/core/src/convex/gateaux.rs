use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::direction::GateauxDirection;
use super::linearized::{check_inputs, diffusion_du, drift_du, linearized_path, running_cost_du};
use crate::adjoint::FirstAdjoint;
use crate::error::{Error, Result};
use crate::forward::{simulate_with_increments, PathEnsemble, Scheme};
use crate::model::{ControlProblem, Vector};
use crate::numerics::{ordered_sum, Estimate};
use crate::variation::path_costs;

/// `G = D_u f - D_u b' p - sum_j D_u sigma_j' q_j`, i.e. `-dH/du`, on every
/// step of every path, flat `[path][step][coord]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientProcess {
    pub num_paths: usize,
    pub num_steps: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl GradientProcess {
    pub fn at(&self, path: usize, step: usize) -> &[f64] {
        let start = (path * self.num_steps + step) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn vector(&self, path: usize, step: usize) -> Vector {
        DVector::from_column_slice(self.at(path, step))
    }

    /// `sqrt(E sum_i h |G_i|^2)`.
    pub fn norm(&self, h: f64) -> f64 {
        let per_path: Vec<f64> = self
            .data
            .par_chunks(self.num_steps * self.dim)
            .map(|row| ordered_sum(row.iter().map(|v| v * v)) * h)
            .collect();
        (ordered_sum(per_path.into_iter()) / self.num_paths as f64).sqrt()
    }
}

/// `-dH/du` at step `i` of `path`.
///
/// The drift term is paired with the conditional mean of `p_{i+1}` carried
/// back through the drift substep rather than with `p_i` itself; `p_i` also
/// holds the running forcing of step `i`, which would put an `O(h)` bias
/// between this gradient and the derivative of the discrete cost.
pub(crate) fn gradient_at(
    problem: &ControlProblem,
    base: &PathEnsemble,
    first: &FirstAdjoint,
    path: usize,
    i: usize,
) -> Result<Vector> {
    let n = problem.dim_state;
    let h = base.grid.step();
    let t = base.grid.node(i);
    let x = base.state(path, i);
    let u = base.control(path, i);
    let q = first.q(path, i);
    let a = problem.drift_dx(t, &x, &u);
    let c = problem.diffusion_dx(t, &x, &u);
    // Invert the adjoint step for E_i[p_{i+1}].
    let mut forcing = -problem.running_cost_dx(t, &x, &u);
    for (j, cj) in c.iter().enumerate() {
        forcing += cj.transpose() * q.column(j);
    }
    let mean_next = (DMatrix::identity(n, n) - a.transpose() * h) * first.p(path, i) - forcing * h;
    let paired = match base.scheme {
        Scheme::ExplicitEuler => mean_next,
        Scheme::SplitStepImplicitDrift => (DMatrix::identity(n, n) - a.transpose() * h)
            .lu()
            .solve(&mean_next)
            .ok_or(Error::SingularStep {
                node: i,
                path,
                condition: f64::INFINITY,
            })?,
    };
    let mut g = running_cost_du(problem, t, &x, &u)? - drift_du(problem, t, &x, &u)?.transpose() * paired;
    for (j, sj) in diffusion_du(problem, t, &x, &u)?.iter().enumerate() {
        g -= sj.transpose() * q.column(j);
    }
    Ok(g)
}

fn check_adjoint(base: &PathEnsemble, first: &FirstAdjoint) -> Result<()> {
    if first.num_paths() != base.num_paths || first.num_steps() != base.grid.num_steps() {
        return Err(Error::DimensionMismatch("adjoint does not match the ensemble".into()));
    }
    Ok(())
}

pub fn gradient_process(problem: &ControlProblem, base: &PathEnsemble, first: &FirstAdjoint) -> Result<GradientProcess> {
    problem.require_control_derivatives()?;
    check_adjoint(base, first)?;
    let steps = base.grid.num_steps();
    let k = base.dim_control;
    let mut data = vec![0.0; base.num_paths * steps * k];
    let outcomes: Vec<Result<()>> = data
        .par_chunks_mut(steps * k)
        .enumerate()
        .map(|(m, row)| {
            for i in 0..steps {
                let g = gradient_at(problem, base, first, m, i)?;
                row[i * k..(i + 1) * k].copy_from_slice(g.as_slice());
            }
            Ok(())
        })
        .collect();
    outcomes.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(GradientProcess {
        num_paths: base.num_paths,
        num_steps: steps,
        dim: k,
        data,
    })
}

/// How the directional derivative is computed.
#[derive(Debug, Clone, Copy)]
pub enum GateauxMode<'a> {
    /// Through the linearized state: `E[D_x h . y_N + sum_i h (D_x f . y_i + D_u f . v_i)]`.
    AdjointFree,
    /// Through the first adjoint: `E sum_i h <G_i, v_i>`.
    Adjoint(&'a FirstAdjoint),
}

fn adjoint_free_samples(problem: &ControlProblem, base: &PathEnsemble, dir: &GateauxDirection) -> Result<Vec<f64>> {
    let n = problem.dim_state;
    let grid = base.grid;
    let steps = grid.num_steps();
    let h = grid.step();
    (0..base.num_paths)
        .into_par_iter()
        .map_init(
            || vec![0.0; (steps + 1) * n],
            |y, m| {
                linearized_path(problem, base, dir, m, y)?;
                let yi = |i: usize| DVector::from_column_slice(&y[i * n..(i + 1) * n]);
                let mut terms = Vec::with_capacity(steps);
                for i in 0..steps {
                    let t = grid.node(i);
                    let x = base.state(m, i);
                    let u = base.control(m, i);
                    let fu = running_cost_du(problem, t, &x, &u)?;
                    terms.push(problem.running_cost_dx(t, &x, &u).dot(&yi(i)) + fu.dot(&dir.vector(m, i)));
                }
                Ok(ordered_sum(terms.into_iter()) * h + problem.terminal_cost_dx(&base.state(m, steps)).dot(&yi(steps)))
            },
        )
        .collect()
}

fn adjoint_samples(
    problem: &ControlProblem,
    base: &PathEnsemble,
    first: &FirstAdjoint,
    dir: &GateauxDirection,
) -> Result<Vec<f64>> {
    check_adjoint(base, first)?;
    let steps = base.grid.num_steps();
    let h = base.grid.step();
    (0..base.num_paths)
        .into_par_iter()
        .map(|m| {
            let terms = (0..steps)
                .map(|i| Ok(gradient_at(problem, base, first, m, i)?.dot(&dir.vector(m, i))))
                .collect::<Result<Vec<f64>>>()?;
            Ok(ordered_sum(terms.into_iter()) * h)
        })
        .collect()
}

fn mode_samples(
    problem: &ControlProblem,
    base: &PathEnsemble,
    dir: &GateauxDirection,
    mode: GateauxMode<'_>,
) -> Result<Vec<f64>> {
    problem.require_control_derivatives()?;
    check_inputs(problem, base, dir)?;
    match mode {
        GateauxMode::AdjointFree => adjoint_free_samples(problem, base, dir),
        GateauxMode::Adjoint(first) => adjoint_samples(problem, base, first, dir),
    }
}

/// Directional derivative of the cost at the control realized by `base`
/// along `dir`.
pub fn gateaux_derivative(
    problem: &ControlProblem,
    base: &PathEnsemble,
    dir: &GateauxDirection,
    mode: GateauxMode<'_>,
) -> Result<Estimate> {
    Ok(Estimate::from_samples(&mode_samples(problem, base, dir, mode)?))
}

/// Both modes on the same paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateauxComparison {
    pub adjoint_free: Estimate,
    pub adjoint: Estimate,
    /// Path-wise `adjoint_free - adjoint`.
    pub difference: Estimate,
}

impl GateauxComparison {
    /// Agreement within `3 stderr` of the paired difference plus `slack`.
    pub fn agrees(&self, slack: f64) -> bool {
        self.difference.mean.abs() <= 3.0 * self.difference.stderr + slack
    }
}

pub fn compare_gateaux_modes(
    problem: &ControlProblem,
    base: &PathEnsemble,
    first: &FirstAdjoint,
    dir: &GateauxDirection,
) -> Result<GateauxComparison> {
    let free = mode_samples(problem, base, dir, GateauxMode::AdjointFree)?;
    let adj = mode_samples(problem, base, dir, GateauxMode::Adjoint(first))?;
    let diff: Vec<f64> = free.iter().zip(&adj).map(|(a, b)| a - b).collect();
    Ok(GateauxComparison {
        adjoint_free: Estimate::from_samples(&free),
        adjoint: Estimate::from_samples(&adj),
        difference: Estimate::from_samples(&diff),
    })
}

/// `(J(u_bar + theta v) - J(u_bar)) / theta` on the base increments, with
/// the perturbed control applied open loop along each path.
pub fn finite_difference(
    problem: &ControlProblem,
    base: &PathEnsemble,
    dir: &GateauxDirection,
    theta: f64,
) -> Result<Estimate> {
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    check_inputs(problem, base, dir)?;
    let ctrl = dir.perturbed_control(base, theta)?;
    let bumped = simulate_with_increments(problem, &ctrl, &base.increments, base.scheme)?;
    let diffs: Vec<f64> = path_costs(problem, &bumped)
        .iter()
        .zip(path_costs(problem, base))
        .map(|(a, b)| (a - b) / theta)
        .collect();
    Ok(Estimate::from_samples(&diffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{solve_first_adjoint, AdjointOptions};
    use crate::bench::{make_lq_problem, registry, riccati_solve};
    use crate::forward::{simulate, ControlProcess};
    use crate::model::TimeGrid;
    use std::sync::Arc;

    fn run(prob: &ControlProblem, ctrl: &ControlProcess, paths: usize) -> (PathEnsemble, FirstAdjoint) {
        let base = simulate(prob, ctrl, ctrl.grid(), paths, 11, Scheme::SplitStepImplicitDrift).unwrap();
        let first = solve_first_adjoint(prob, &base, &AdjointOptions::default()).unwrap();
        (base, first)
    }

    #[test]
    fn zero_direction_has_zero_derivative() {
        let prob = registry::registered_problem("poly-cubic").unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let (base, first) = run(&prob, &ControlProcess::scalar_constant(grid, 0.1), 200);
        let dir = GateauxDirection::zeros(&base);
        for mode in [GateauxMode::AdjointFree, GateauxMode::Adjoint(&first)] {
            assert_eq!(gateaux_derivative(&prob, &base, &dir, mode).unwrap(), Estimate::exact(0.0));
        }
    }

    #[test]
    fn finite_differences_converge_at_first_order() {
        let prob = registry::registered_problem("poly-cubic").unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let (base, _) = run(&prob, &ControlProcess::scalar_constant(grid, 0.3), 1000);
        let dir = GateauxDirection::constant(&base, &DVector::from_element(1, 0.5)).unwrap();
        dir.check_admissible(&base, &prob.control_domain).unwrap();
        let g = gateaux_derivative(&prob, &base, &dir, GateauxMode::AdjointFree).unwrap();
        let coarse = finite_difference(&prob, &base, &dir, 1e-2).unwrap();
        let fine = finite_difference(&prob, &base, &dir, 1e-3).unwrap();
        let (e1, e2) = (coarse.mean - g.mean, fine.mean - g.mean);
        assert!(e2.abs() <= 3.0 * g.stderr + 1e-3, "{fine:?} vs {g:?}");
        let ratio = e1 / e2;
        assert!((8.0..12.0).contains(&ratio), "errors {e1:e}, {e2:e}");
        // Richardson extrapolation removes the O(theta) term.
        let extrapolated = fine.mean - (coarse.mean - fine.mean) / 9.0;
        assert!((extrapolated - g.mean).abs() < 1e-3 * e1.abs(), "{extrapolated} vs {}", g.mean);
    }

    #[test]
    fn derivative_vanishes_at_the_lq_optimum() {
        let spec = registry::lq_scalar();
        let prob = make_lq_problem("lq", &spec).unwrap();
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let opt = riccati_solve(&spec, &grid).unwrap().feedback(&spec.domain);
        let (base, _) = run(&prob, &opt, 4000);
        let towards = ControlProcess::feedback(grid, 1, Arc::new(|_, x: &Vector| x.map(|v| (0.5 * v).clamp(-1.0, 1.0))));
        let dirs = [
            GateauxDirection::constant(&base, &DVector::from_element(1, 1.0)).unwrap(),
            GateauxDirection::constant(&base, &DVector::from_element(1, -0.7)).unwrap(),
            GateauxDirection::towards(&base, &towards).unwrap(),
        ];
        for dir in dirs {
            let g = gateaux_derivative(&prob, &base, &dir, GateauxMode::AdjointFree).unwrap();
            assert!(g.mean.abs() <= 3.0 * g.stderr, "{g:?}");
        }
    }

    #[test]
    fn adjoint_and_adjoint_free_modes_agree() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let lq = make_lq_problem("lq", &registry::lq_scalar()).unwrap();
        let lq2 = make_lq_problem("lq2", &registry::lq_2d()).unwrap();
        let poly = registry::registered_problem("poly-cubic").unwrap();
        let cases = [
            (lq, ControlProcess::scalar_constant(grid, 0.0), DVector::from_element(1, 1.0)),
            (lq2, ControlProcess::constant(grid, DVector::from_vec(vec![0.5, -0.5])), DVector::from_vec(vec![0.3, 1.0])),
            (poly, ControlProcess::scalar_constant(grid, 0.3), DVector::from_element(1, 0.5)),
        ];
        for (prob, ctrl, v) in cases {
            let (base, first) = run(&prob, &ctrl, 2000);
            let dir = GateauxDirection::constant(&base, &v).unwrap();
            let c = compare_gateaux_modes(&prob, &base, &first, &dir).unwrap();
            assert!(c.agrees(0.0), "{}: {c:?}", prob.name);
            let grad = gradient_process(&prob, &base, &first).unwrap();
            let paired = ordered_sum((0..base.num_paths).map(|m| {
                ordered_sum((0..50).map(|i| grad.vector(m, i).dot(&v))) * grid.step()
            })) / base.num_paths as f64;
            assert!((paired - c.adjoint.mean).abs() < 1e-12);
        }
    }
}

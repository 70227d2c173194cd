use nalgebra::{DMatrix, DVector};

use super::direction::GateauxDirection;
use crate::error::{Error, Result};
use crate::forward::{PathEnsemble, Scheme};
use crate::model::{ControlProblem, Matrix, Vector};
use crate::variation::StatePaths;

pub(crate) fn drift_du(problem: &ControlProblem, t: f64, x: &Vector, u: &Vector) -> Result<Matrix> {
    problem.coefficients.drift_du(t, x, u).ok_or(Error::MissingControlDerivatives)
}

pub(crate) fn diffusion_du(problem: &ControlProblem, t: f64, x: &Vector, u: &Vector) -> Result<Vec<Matrix>> {
    problem.coefficients.diffusion_du(t, x, u).ok_or(Error::MissingControlDerivatives)
}

pub(crate) fn running_cost_du(problem: &ControlProblem, t: f64, x: &Vector, u: &Vector) -> Result<Vector> {
    problem.coefficients.running_cost_du(t, x, u).ok_or(Error::MissingControlDerivatives)
}

/// Linearized state on one path, written into `out` (all nodes).
///
/// This is the derivative of the discrete scheme itself. For the split-step
/// scheme the drift is linearized at the implicit stage point
/// `x* = x_{i+1} - sigma(x_i, u_i) dW_i`, the diffusion at `x_i`.
pub(crate) fn linearized_path(
    problem: &ControlProblem,
    base: &PathEnsemble,
    dir: &GateauxDirection,
    path: usize,
    out: &mut [f64],
) -> Result<()> {
    let n = problem.dim_state;
    let grid = base.grid;
    let h = grid.step();
    out.fill(0.0);
    let mut y = DVector::zeros(n);
    for i in 0..grid.num_steps() {
        let t = grid.node(i);
        let x = base.state(path, i);
        let u = base.control(path, i);
        let v = dir.vector(path, i);
        let dw = base.increments.at(path, i);
        let sigma = problem.diffusion(t, &x, &u);
        let c = problem.diffusion_dx(t, &x, &u);
        let su = diffusion_du(problem, t, &x, &u)?;
        let mut next = match base.scheme {
            Scheme::ExplicitEuler => {
                let a = problem.drift_dx(t, &x, &u);
                let bu = drift_du(problem, t, &x, &u)?;
                &y + (&a * &y + bu * &v) * h
            }
            Scheme::SplitStepImplicitDrift => {
                let stage = base.state(path, i + 1) - &sigma * DVector::from_column_slice(dw);
                let a = problem.drift_dx(t, &stage, &u);
                let bu = drift_du(problem, t, &stage, &u)?;
                let op = DMatrix::identity(n, n) - a * h;
                op.lu()
                    .solve(&(&y + bu * &v * h))
                    .ok_or(Error::SingularStep {
                        node: i,
                        path,
                        condition: f64::INFINITY,
                    })?
            }
        };
        for (j, (cj, sj)) in c.iter().zip(&su).enumerate() {
            next += (cj * &y + sj * &v) * dw[j];
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { path, step: i });
        }
        y = next;
        out[(i + 1) * n..(i + 2) * n].copy_from_slice(y.as_slice());
    }
    Ok(())
}

/// Linearized state along `base` in direction `dir`, on the base increments.
pub fn simulate_linearized_state(
    problem: &ControlProblem,
    base: &PathEnsemble,
    dir: &GateauxDirection,
) -> Result<StatePaths> {
    problem.require_control_derivatives()?;
    check_inputs(problem, base, dir)?;
    let n = problem.dim_state;
    StatePaths::from_paths(base.num_paths, base.grid.num_steps() + 1, n, |m, out| {
        linearized_path(problem, base, dir, m, out)
    })
}

pub(crate) fn check_inputs(problem: &ControlProblem, base: &PathEnsemble, dir: &GateauxDirection) -> Result<()> {
    if base.dim_state != problem.dim_state || base.dim_noise() != problem.dim_noise {
        return Err(Error::DimensionMismatch("ensemble and problem dimensions differ".into()));
    }
    if dir.num_paths != base.num_paths || dir.num_steps != base.grid.num_steps() || dir.dim != base.dim_control {
        return Err(Error::DimensionMismatch("direction does not match the ensemble".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{make_lq_problem, registry, ScalarModel};
    use crate::forward::{simulate, ControlProcess};
    use crate::model::{ControlDomain, GrowthExponents, TimeGrid};

    #[test]
    fn zero_direction_gives_zero_state() {
        let prob = registry::registered_problem("poly-cubic").unwrap();
        let grid = TimeGrid::new(1.0, 30).unwrap();
        let base = simulate(&prob, &ControlProcess::scalar_constant(grid, 0.2), &grid, 50, 1, Scheme::SplitStepImplicitDrift)
            .unwrap();
        let y = simulate_linearized_state(&prob, &base, &GateauxDirection::zeros(&base)).unwrap();
        assert!(y.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn missing_control_derivatives_are_reported() {
        let prob = ScalarModel::new()
            .drift(|_, x, u| -x + u, |_, _, _| -1.0, |_, _, _| 0.0)
            .into_problem("no-du", 1.0, 0.0, -1.0, 0.0, GrowthExponents::default(), ControlDomain::interval(-1.0, 1.0))
            .unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let base = simulate(&prob, &ControlProcess::scalar_constant(grid, 0.0), &grid, 4, 1, Scheme::SplitStepImplicitDrift)
            .unwrap();
        let err = simulate_linearized_state(&prob, &base, &GateauxDirection::zeros(&base));
        assert!(matches!(err, Err(Error::MissingControlDerivatives)));
    }

    #[test]
    fn additive_noise_matches_variation_of_constants() {
        // b = a x + beta u, sigma constant: y(t) = beta int_0^t e^{a(t-s)} cos(w s) ds.
        let (a, beta, w) = (-1.0, 1.0, 1.5);
        let prob = ScalarModel::new()
            .drift(move |_, x, u| a * x + beta * u, move |_, _, _| a, |_, _, _| 0.0)
            .drift_du(move |_, _, _| beta)
            .diffusion(|_, _, _| 0.3, |_, _, _| 0.0, |_, _, _| 0.0)
            .diffusion_du(|_, _, _| 0.0)
            .into_problem("ou", 1.0, 0.5, a, 0.0, GrowthExponents::default(), ControlDomain::interval(-2.0, 2.0))
            .unwrap();
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let base = simulate(&prob, &ControlProcess::scalar_constant(grid, 0.0), &grid, 4, 2, Scheme::SplitStepImplicitDrift)
            .unwrap();
        let mut dir = GateauxDirection::zeros(&base);
        for m in 0..4 {
            for i in 0..1000 {
                dir.data[m * 1000 + i] = (w * grid.node(i)).cos();
            }
        }
        let y = simulate_linearized_state(&prob, &base, &dir).unwrap();
        let oracle = |t: f64| beta * (-a * (w * t).cos() + w * (w * t).sin() + a * (a * t).exp()) / (a * a + w * w);
        for m in 0..4 {
            for i in (0..=1000).step_by(50) {
                let got = y.at(m, i)[0];
                assert!((got - oracle(grid.node(i))).abs() < 1e-3, "node {i}: {got} vs {}", oracle(grid.node(i)));
            }
        }
    }

    #[test]
    fn control_dependent_noise_matches_the_isometry() {
        // lq-scalar with v = 1: y(T) has mean b (1 - e^{aT}) / (-a) and
        // variance c^2 (1 - e^{2aT}) / (-2a).
        let spec = registry::lq_scalar();
        let prob = make_lq_problem("lq", &spec).unwrap();
        let (a, b, c, t) = (spec.a[(0, 0)], spec.b[(0, 0)], spec.c[0][(0, 0)], spec.horizon);
        let grid = TimeGrid::new(t, 200).unwrap();
        let base = simulate(&prob, &ControlProcess::scalar_constant(grid, 0.0), &grid, 20000, 4, Scheme::SplitStepImplicitDrift)
            .unwrap();
        let dir = GateauxDirection::constant(&base, &DVector::from_element(1, 1.0)).unwrap();
        let y = simulate_linearized_state(&prob, &base, &dir).unwrap();
        let ends: Vec<f64> = (0..base.num_paths).map(|m| y.at(m, 200)[0]).collect();
        let m = ends.len() as f64;
        let mean = ends.iter().sum::<f64>() / m;
        let var = ends.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let m4 = ends.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / m;
        let var_stderr = ((m4 - var * var) / m).sqrt();
        let want_mean = b * (1.0 - (a * t).exp()) / (-a);
        let want_var = c * c * (1.0 - (2.0 * a * t).exp()) / (-2.0 * a);
        assert!((mean - want_mean).abs() < 3.0 * (var / m).sqrt() + 1e-3, "{mean} vs {want_mean}");
        assert!((var - want_var).abs() < 3.0 * var_stderr, "{var} +- {var_stderr} vs {want_var}");
    }
}

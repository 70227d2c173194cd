use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{BrownianIncrements, ControlProcess};
use crate::error::{Error, Result};
use crate::model::{ControlProblem, TimeGrid, Vector};

const NEWTON_MAX_ITERATIONS: usize = 50;
const NEWTON_TOL: f64 = 1e-12;

/// Time-stepping scheme for the state equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// `x_{i+1} = x_i + b(t_i, x_i, u_i) h + sigma(t_i, x_i, u_i) dW_i`.
    ExplicitEuler,
    /// Drift substep solved implicitly, diffusion added explicitly:
    /// `x* = x_i + h b(t_i, x*, u_i)`, `x_{i+1} = x* + sigma(t_i, x_i, u_i) dW_i`.
    SplitStepImplicitDrift,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::ExplicitEuler => "explicit-euler",
            Scheme::SplitStepImplicitDrift => "split-step-implicit",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit-euler" | "explicit" | "euler" => Ok(Scheme::ExplicitEuler),
            "split-step-implicit" | "split-step" | "implicit" => {
                Ok(Scheme::SplitStepImplicitDrift)
            }
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

/// `M` simulated trajectories on a shared grid together with the increments
/// that drove them and the control values they realized.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub num_paths: usize,
    pub dim_state: usize,
    pub dim_control: usize,
    /// Flat `[path][node][coord]`, `N + 1` nodes.
    pub states: Vec<f64>,
    pub increments: BrownianIncrements,
    /// Realized controls, flat `[path][step][coord]`.
    pub controls: Vec<f64>,
    pub seed: u64,
    pub scheme: Scheme,
}

impl PathEnsemble {
    pub fn dim_noise(&self) -> usize {
        self.increments.dim()
    }

    pub fn state_slice(&self, path: usize, node: usize) -> &[f64] {
        let n = self.dim_state;
        let start = (path * (self.grid.num_steps() + 1) + node) * n;
        &self.states[start..start + n]
    }

    pub fn state(&self, path: usize, node: usize) -> Vector {
        DVector::from_column_slice(self.state_slice(path, node))
    }

    pub fn path_states(&self, path: usize) -> &[f64] {
        let len = (self.grid.num_steps() + 1) * self.dim_state;
        &self.states[path * len..(path + 1) * len]
    }

    pub fn control(&self, path: usize, step: usize) -> Vector {
        let k = self.dim_control;
        let start = (path * self.grid.num_steps() + step) * k;
        DVector::from_column_slice(&self.controls[start..start + k])
    }

    pub fn increment(&self, path: usize, step: usize) -> Vector {
        DVector::from_column_slice(self.increments.at(path, step))
    }

    /// The controls this ensemble realized, as a pathwise process. Spikes and
    /// other couplings are built on top of this so that perturbed runs see
    /// the base control process, not a re-evaluated feedback law.
    pub fn realized_control(&self) -> ControlProcess {
        ControlProcess::pathwise(self.grid, self.num_paths, self.dim_control, self.controls.clone())
            .expect("ensemble control storage is consistent")
    }
}

/// Result of one implicit drift substep.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitStep {
    pub state: Vector,
    /// `|y - x - h b(t, y, u)|` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

/// Solve `y = x + h b(t, y, u)` by damped Newton iterations started at `x`.
pub fn implicit_drift_step(
    problem: &ControlProblem,
    t: f64,
    x: &Vector,
    u: &Vector,
    h: f64,
) -> Result<ImplicitStep> {
    problem.check_implicit_step(h)?;
    let n = x.len();
    let residual_of = |y: &Vector| -> Vector { y - x - problem.drift(t, y, u) * h };
    let mut y = x.clone();
    let mut r = residual_of(&y);
    let mut r_norm = r.norm();
    for iteration in 0..=NEWTON_MAX_ITERATIONS {
        if r_norm <= NEWTON_TOL * (1.0 + y.norm()) {
            return Ok(ImplicitStep {
                state: y,
                residual: r_norm,
                iterations: iteration,
            });
        }
        if iteration == NEWTON_MAX_ITERATIONS {
            break;
        }
        let jac = DMatrix::identity(n, n) - problem.drift_dx(t, &y, u) * h;
        let Some(direction) = jac.lu().solve(&(-&r)) else {
            break;
        };
        // Backtracking along the Newton direction; the residual is monotone
        // along it when the drift is one-sided Lipschitz and h * alpha < 1.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &y + &direction * lambda;
            let rc = residual_of(&candidate);
            let rc_norm = rc.norm();
            if rc_norm.is_finite() && rc_norm < r_norm * (1.0 - 1e-4 * lambda) {
                y = candidate;
                r = rc;
                r_norm = rc_norm;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // No decrease possible: either converged to round-off or stuck.
            if r_norm <= 1e3 * NEWTON_TOL * (1.0 + y.norm()) {
                return Ok(ImplicitStep {
                    state: y,
                    residual: r_norm,
                    iterations: iteration + 1,
                });
            }
            break;
        }
    }
    Err(Error::NewtonDivergence {
        t,
        iterations: NEWTON_MAX_ITERATIONS,
        residual: r_norm,
    })
}

/// Simulate `paths` trajectories with fresh increments drawn from `seed`.
pub fn simulate(
    problem: &ControlProblem,
    control: &ControlProcess,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<PathEnsemble> {
    if control.grid() != grid {
        return Err(Error::DimensionMismatch(
            "control process lives on a different grid".into(),
        ));
    }
    let increments =
        BrownianIncrements::generate(seed, paths, grid.num_steps(), problem.dim_noise, grid.step())?;
    simulate_with_increments(problem, control, &increments, scheme)
}

/// Simulate on existing increments (common random numbers).
pub fn simulate_with_increments(
    problem: &ControlProblem,
    control: &ControlProcess,
    increments: &BrownianIncrements,
    scheme: Scheme,
) -> Result<PathEnsemble> {
    let grid = *control.grid();
    let steps = grid.num_steps();
    if increments.steps() != steps || (increments.step() - grid.step()).abs() > 1e-12 * grid.step()
    {
        return Err(Error::DimensionMismatch(
            "increments do not match the control grid".into(),
        ));
    }
    if increments.dim() != problem.dim_noise {
        return Err(Error::DimensionMismatch(format!(
            "increments have dimension {}, problem noise dimension is {}",
            increments.dim(),
            problem.dim_noise
        )));
    }
    if control.dim() != problem.dim_control() {
        return Err(Error::DimensionMismatch(format!(
            "control dimension {} does not match domain dimension {}",
            control.dim(),
            problem.dim_control()
        )));
    }
    if let Some(p) = control.pathwise_paths() {
        if p < increments.paths() {
            return Err(Error::DimensionMismatch(format!(
                "pathwise control has {p} paths, ensemble needs {}",
                increments.paths()
            )));
        }
    }
    if scheme == Scheme::SplitStepImplicitDrift {
        problem.check_implicit_step(grid.step())?;
    }

    let m = increments.paths();
    let n = problem.dim_state;
    let k = problem.dim_control();
    let mut states = vec![0.0; m * (steps + 1) * n];
    let mut controls = vec![0.0; m * steps * k];

    let outcomes: Vec<Result<()>> = states
        .par_chunks_mut((steps + 1) * n)
        .zip(controls.par_chunks_mut(steps * k))
        .enumerate()
        .map(|(path, (xs, us))| {
            simulate_path(problem, control, increments, scheme, path, xs, us)
        })
        .collect();
    outcomes.into_iter().collect::<Result<Vec<()>>>()?;

    Ok(PathEnsemble {
        grid,
        num_paths: m,
        dim_state: n,
        dim_control: k,
        states,
        increments: increments.clone(),
        controls,
        seed: increments.seed(),
        scheme,
    })
}

/// One step of `scheme` from `x` with control `u` and increment `dw`.
pub(crate) fn advance(
    problem: &ControlProblem,
    scheme: Scheme,
    t: f64,
    x: &Vector,
    u: &Vector,
    h: f64,
    dw: &[f64],
) -> Result<Vector> {
    let sigma = problem.diffusion(t, x, u);
    let drifted = match scheme {
        Scheme::ExplicitEuler => x + problem.drift(t, x, u) * h,
        Scheme::SplitStepImplicitDrift => implicit_drift_step(problem, t, x, u, h)?.state,
    };
    Ok(drifted + sigma * DVector::from_column_slice(dw))
}

fn simulate_path(
    problem: &ControlProblem,
    control: &ControlProcess,
    increments: &BrownianIncrements,
    scheme: Scheme,
    path: usize,
    xs: &mut [f64],
    us: &mut [f64],
) -> Result<()> {
    let grid = control.grid();
    let h = grid.step();
    let n = problem.dim_state;
    let k = problem.dim_control();
    let domain = &problem.control_domain;
    let mut x = problem.initial_state.clone();
    xs[..n].copy_from_slice(x.as_slice());
    for i in 0..grid.num_steps() {
        let t = grid.node(i);
        let u = control.value(path, i, &x);
        if !domain.contains(&u, 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "control value {:?} at step {i} of path {path} lies outside the control domain",
                u.as_slice()
            )));
        }
        us[i * k..(i + 1) * k].copy_from_slice(u.as_slice());
        x = advance(problem, scheme, t, &x, &u, h, increments.at(path, i))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                path,
                step: i + 1,
            });
        }
        xs[(i + 1) * n..(i + 2) * n].copy_from_slice(x.as_slice());
    }
    Ok(())
}

use rayon::prelude::*;

use super::gateaux::{gradient_process, GradientProcess};
use super::inequality::{variational_inequality_check, VariationalOptions, VariationalReport};
use crate::adjoint::{solve_first_adjoint, AdjointOptions, FirstAdjoint};
use crate::error::{Error, Result};
use crate::forward::{simulate_with_increments, BrownianIncrements, ControlProcess, PathEnsemble, Scheme};
use crate::model::{ControlProblem, Vector};
use crate::numerics::Estimate;
use crate::variation::path_costs;

#[derive(Debug, Clone)]
pub struct OptimizerOptions {
    /// Step size `rho` in `u <- project(u + rho dH/du)`.
    pub rho: f64,
    pub iters: usize,
    pub paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub adjoint: AdjointOptions,
    /// Consecutive resolved cost increases that count as divergence.
    pub divergence_window: usize,
    /// On divergence, return to the best iterate and halve `rho` instead of
    /// failing, at most this many times.
    pub max_halvings: usize,
    /// Stop once the gradient norm drops below this.
    pub grad_tol: Option<f64>,
    /// Controls for the final variational-inequality check; empty skips it.
    pub vi_sample: Vec<Vector>,
    pub vi_options: VariationalOptions,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            rho: 0.5,
            iters: 50,
            paths: 2000,
            seed: 0,
            scheme: Scheme::SplitStepImplicitDrift,
            adjoint: AdjointOptions::default(),
            divergence_window: 5,
            max_halvings: 0,
            grad_tol: None,
            vi_sample: Vec::new(),
            vi_options: VariationalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: Estimate,
    /// `sqrt(E sum h |dH/du|^2)` at this iterate.
    pub grad_norm: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizerResult {
    /// Final control, realized on the optimizer's paths.
    pub control: ControlProcess,
    pub ensemble: PathEnsemble,
    pub adjoint: FirstAdjoint,
    pub trace: Vec<IterationRecord>,
    pub rho: f64,
    pub variational: Option<VariationalReport>,
}

impl OptimizerResult {
    pub fn final_cost(&self) -> Estimate {
        self.trace.last().expect("trace holds the initial iterate").cost
    }
}

struct Iterate {
    ensemble: PathEnsemble,
    costs: Vec<f64>,
    adjoint: FirstAdjoint,
    gradient: GradientProcess,
}

impl Iterate {
    fn new(problem: &ControlProblem, ensemble: PathEnsemble, options: &AdjointOptions) -> Result<Self> {
        let costs = path_costs(problem, &ensemble);
        let adjoint = solve_first_adjoint(problem, &ensemble, options)?;
        let gradient = gradient_process(problem, &ensemble, &adjoint)?;
        Ok(Self {
            ensemble,
            costs,
            adjoint,
            gradient,
        })
    }

    fn record(&self, iter: usize, rho: f64) -> IterationRecord {
        IterationRecord {
            iter,
            cost: Estimate::from_samples(&self.costs),
            grad_norm: self.gradient.norm(self.ensemble.grid.step()),
            rho,
        }
    }

    /// `project(u - rho G)` on every step of every path.
    fn step(&self, problem: &ControlProblem, rho: f64) -> Result<ControlProcess> {
        let base = &self.ensemble;
        let k = base.dim_control;
        let mut data = base.controls.clone();
        let outcomes: Vec<Result<()>> = data
            .par_chunks_mut(k)
            .zip(self.gradient.data.par_chunks(k))
            .map(|(u, g)| {
                let moved = Vector::from_iterator(k, u.iter().zip(g).map(|(a, b)| a - rho * b));
                u.copy_from_slice(problem.control_domain.project(&moved)?.as_slice());
                Ok(())
            })
            .collect();
        outcomes.into_iter().collect::<Result<Vec<()>>>()?;
        ControlProcess::pathwise(base.grid, base.num_paths, k, data)
    }
}

/// Projected gradient ascent on the Hamiltonian, i.e. descent on the cost.
///
/// All iterates share one set of Brownian increments. The control is kept
/// as realized values per path and step; each update depends on the state
/// and adjoint at that step only, so the iterates stay adapted.
pub fn projected_gradient_descent(
    problem: &ControlProblem,
    initial: &ControlProcess,
    options: &OptimizerOptions,
) -> Result<OptimizerResult> {
    if !problem.control_domain.is_convex() {
        return Err(Error::NonConvexDomain);
    }
    problem.require_control_derivatives()?;
    if !(options.rho >= 0.0) || !options.rho.is_finite() {
        return Err(Error::InvalidArgument("step size must be finite and non-negative".into()));
    }
    if options.divergence_window == 0 {
        return Err(Error::InvalidArgument("divergence window must be positive".into()));
    }
    let grid = *initial.grid();
    let increments =
        BrownianIncrements::generate(options.seed, options.paths, grid.num_steps(), problem.dim_noise, grid.step())?;
    let first = simulate_with_increments(problem, initial, &increments, options.scheme)?;
    let mut current = Iterate::new(problem, first, &options.adjoint)?;
    let mut rho = options.rho;
    let mut trace = vec![current.record(0, rho)];
    let mut best: Option<(f64, Iterate)> = None;
    let mut increases = 0;
    let mut halvings = 0;

    for iter in 1..=options.iters {
        if options.grad_tol.is_some_and(|tol| trace.last().unwrap().grad_norm <= tol) {
            break;
        }
        let control = current.step(problem, rho)?;
        let ensemble = simulate_with_increments(problem, &control, &increments, options.scheme)?;
        let next = Iterate::new(problem, ensemble, &options.adjoint)?;
        let change: Vec<f64> = next.costs.iter().zip(&current.costs).map(|(a, b)| a - b).collect();
        let change = Estimate::from_samples(&change);
        if change.mean > 0.0 && change.mean > 2.0 * change.stderr {
            increases += 1;
        } else {
            increases = 0;
        }
        let previous = std::mem::replace(&mut current, next);
        if options.max_halvings > 0 {
            let prev_mean = Estimate::from_samples(&previous.costs).mean;
            if best.as_ref().is_none_or(|(c, _)| prev_mean < *c) {
                best = Some((prev_mean, previous));
            }
        }
        trace.push(current.record(iter, rho));

        if increases >= options.divergence_window {
            let last_cost = trace.last().unwrap().cost.mean;
            if halvings >= options.max_halvings {
                return Err(Error::Divergence {
                    consecutive: increases,
                    last_cost,
                });
            }
            let (_, restart) = best.take().expect("kept while halving is allowed");
            current = restart;
            rho *= 0.5;
            halvings += 1;
            increases = 0;
        }
    }

    let variational = if options.vi_sample.is_empty() {
        None
    } else {
        Some(variational_inequality_check(
            problem,
            &current.ensemble,
            &current.adjoint,
            &options.vi_sample,
            &options.vi_options,
        )?)
    };
    Ok(OptimizerResult {
        control: current.ensemble.realized_control(),
        ensemble: current.ensemble,
        adjoint: current.adjoint,
        trace,
        rho,
        variational,
    })
}

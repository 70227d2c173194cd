use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::basis::{NodeRegression, RegressionBasis};
use crate::error::{Error, Result};
use crate::forward::PathEnsemble;
use crate::model::{ControlProblem, Matrix, Vector};
use crate::numerics::{ordered_sum, symmetrize};

/// Implicit steps with a worse condition number than this are refused.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointOptions {
    pub basis: RegressionBasis,
    /// Ridge added to the normal equations; `None` means `1e-8 * M`.
    pub ridge: Option<f64>,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self {
            basis: RegressionBasis::default(),
            ridge: None,
        }
    }
}

impl AdjointOptions {
    pub fn with_basis(basis: RegressionBasis) -> Self {
        Self { basis, ridge: None }
    }

    fn ridge_for(&self, paths: usize) -> Result<f64> {
        let r = self.ridge.unwrap_or(1e-8 * paths as f64);
        if r >= 0.0 && r.is_finite() {
            Ok(r)
        } else {
            Err(Error::InvalidArgument(format!("ridge must be nonnegative, got {r}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDiagnostics {
    pub basis: RegressionBasis,
    pub ridge: f64,
    /// Basis size actually used at each step (degenerate coordinates and
    /// empty cells are dropped).
    pub basis_size: Vec<usize>,
    /// RMS of `target - projection` for the value target at each step.
    pub residual_rms: Vec<f64>,
}

/// First-order adjoint `(p, q)` on every path. `q(path, step)` is the
/// `n x d` matrix whose column `j` is `q_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstAdjoint {
    num_paths: usize,
    num_steps: usize,
    dim_state: usize,
    dim_noise: usize,
    /// `[node][path][coord]`.
    p: Vec<f64>,
    /// `[step][path][noise][coord]`.
    q: Vec<f64>,
    pub diagnostics: RegressionDiagnostics,
}

impl FirstAdjoint {
    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn p_slice(&self, path: usize, node: usize) -> &[f64] {
        let n = self.dim_state;
        let at = (node * self.num_paths + path) * n;
        &self.p[at..at + n]
    }

    pub fn p(&self, path: usize, node: usize) -> Vector {
        DVector::from_column_slice(self.p_slice(path, node))
    }

    pub fn q(&self, path: usize, step: usize) -> Matrix {
        let (n, d) = (self.dim_state, self.dim_noise);
        let at = (step * self.num_paths + path) * n * d;
        DMatrix::from_column_slice(n, d, &self.q[at..at + n * d])
    }
}

/// Second-order adjoint `(P, Q)`; all matrices symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondAdjoint {
    num_paths: usize,
    num_steps: usize,
    dim_state: usize,
    dim_noise: usize,
    /// `[node][path][n*n]`, column-major matrices.
    p: Vec<f64>,
    /// `[step][path][noise][n*n]`.
    q: Vec<f64>,
    pub diagnostics: RegressionDiagnostics,
}

impl SecondAdjoint {
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn p(&self, path: usize, node: usize) -> Matrix {
        let n = self.dim_state;
        let at = (node * self.num_paths + path) * n * n;
        DMatrix::from_column_slice(n, n, &self.p[at..at + n * n])
    }

    pub fn q(&self, path: usize, step: usize, noise: usize) -> Matrix {
        let n = self.dim_state;
        let at = ((step * self.num_paths + path) * self.dim_noise + noise) * n * n;
        DMatrix::from_column_slice(n, n, &self.q[at..at + n * n])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    pub first: FirstAdjoint,
    pub second: SecondAdjoint,
}

fn check_inputs(problem: &ControlProblem, base: &PathEnsemble) -> Result<()> {
    if base.dim_state != problem.dim_state || base.dim_noise() != problem.dim_noise {
        return Err(Error::DimensionMismatch("ensemble and problem dimensions differ".into()));
    }
    problem.check_implicit_step(base.grid.step())
}

fn states_at(base: &PathEnsemble, node: usize) -> Vec<f64> {
    (0..base.num_paths)
        .flat_map(|m| base.state_slice(m, node).iter().copied())
        .collect()
}

fn rms_residual(targets: &[f64], fitted: &[f64], width: usize, paths: usize) -> f64 {
    let sq = ordered_sum(
        targets
            .chunks_exact(width)
            .zip(fitted.chunks_exact(width))
            .flat_map(|(t, f)| t.iter().zip(f).map(|(a, b)| (a - b) * (a - b))),
    );
    (sq / paths as f64).sqrt()
}

/// Solve `op * v = rhs`, refusing ill-conditioned operators.
fn guarded_solve(op: Matrix, rhs: &Vector, node: usize, path: usize) -> Result<Vector> {
    let sv = op.singular_values();
    let condition = sv.max() / sv.min();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularStep { node, path, condition });
    }
    op.lu()
        .solve(rhs)
        .ok_or(Error::SingularStep { node, path, condition })
}

/// Conditional expectations for one backward step. `next` holds the
/// `width`-dimensional value at node `i + 1` per path. Returns rows
/// `[E_i[v], E_i[(v - E_i[v]) dW_1 / h], ...]` and the RMS projection
/// residual of `v`. Centering before weighting by the increment keeps a
/// deterministic `v` from producing a spurious martingale part.
fn project_step(
    reg: &NodeRegression,
    next: &[f64],
    width: usize,
    base: &PathEnsemble,
    i: usize,
) -> (Vec<f64>, f64) {
    let mp = base.num_paths;
    let h = base.grid.step();
    let d = base.dim_noise();
    let mean = reg.project(next, width);
    let rms = rms_residual(next, &mean, width, mp);
    let weighted: Vec<f64> = (0..mp)
        .flat_map(|m| {
            let r: Vec<f64> = (0..width).map(|k| next[m * width + k] - mean[m * width + k]).collect();
            base.increments
                .at(m, i)
                .iter()
                .flat_map(move |w| r.iter().map(|v| v * w / h).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        })
        .collect();
    let mart = reg.project(&weighted, width * d);
    let mut rows = Vec::with_capacity(mp * width * (1 + d));
    for m in 0..mp {
        rows.extend_from_slice(&mean[m * width..(m + 1) * width]);
        rows.extend_from_slice(&mart[m * width * d..(m + 1) * width * d]);
    }
    (rows, rms)
}

fn first_error(outcomes: Vec<Result<()>>) -> Result<()> {
    outcomes.into_iter().collect::<Result<Vec<()>>>().map(|_| ())
}

/// Backward regression scheme for the first-order adjoint along `base`.
/// At each step `q_j` is the projection of `p_{i+1} dW_j / h` and `p_i`
/// solves `(I - h A') p_i = E_i[p_{i+1}] + h (sum_j C_j' q_j - D_x f)`.
pub fn solve_first_adjoint(
    problem: &ControlProblem,
    base: &PathEnsemble,
    options: &AdjointOptions,
) -> Result<FirstAdjoint> {
    check_inputs(problem, base)?;
    let (n, d, mp) = (problem.dim_state, problem.dim_noise, base.num_paths);
    let grid = base.grid;
    let steps = grid.num_steps();
    let h = grid.step();
    let ridge = options.ridge_for(mp)?;
    let mut p = vec![0.0; (steps + 1) * mp * n];
    let mut q = vec![0.0; steps * mp * n * d];

    p[steps * mp * n..]
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(m, out)| out.copy_from_slice((-problem.terminal_cost_dx(&base.state(m, steps))).as_slice()));

    let mut basis_size = vec![0; steps];
    let mut residual_rms = vec![0.0; steps];
    let width = n * (1 + d);
    for i in (0..steps).rev() {
        let reg = NodeRegression::new(options.basis, &states_at(base, i), n, ridge, i)?;
        basis_size[i] = reg.size();
        let (head, tail) = p.split_at_mut((i + 1) * mp * n);
        let next = &tail[..mp * n];
        let (fitted, rms) = project_step(&reg, next, n, base, i);
        residual_rms[i] = rms;

        let t = grid.node(i);
        let current = &mut head[i * mp * n..];
        let q_step = &mut q[i * mp * n * d..(i + 1) * mp * n * d];
        let outcomes: Vec<Result<()>> = current
            .par_chunks_mut(n)
            .zip(q_step.par_chunks_mut(n * d))
            .zip(fitted.par_chunks(width))
            .enumerate()
            .map(|(m, ((p_out, q_out), fit))| {
                q_out.copy_from_slice(&fit[n..]);
                let x = base.state(m, i);
                let u = base.control(m, i);
                let a = problem.drift_dx(t, &x, &u);
                let c = problem.diffusion_dx(t, &x, &u);
                let mut rhs = -problem.running_cost_dx(t, &x, &u);
                for (j, cj) in c.iter().enumerate() {
                    let qj = DVector::from_column_slice(&fit[n * (1 + j)..n * (2 + j)]);
                    rhs += cj.transpose() * qj;
                }
                let rhs = DVector::from_column_slice(&fit[..n]) + rhs * h;
                let op = DMatrix::identity(n, n) - a.transpose() * h;
                let pi = guarded_solve(op, &rhs, i, m)?;
                if pi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteState { path: m, step: i });
                }
                p_out.copy_from_slice(pi.as_slice());
                Ok(())
            })
            .collect();
        first_error(outcomes)?;
    }
    Ok(FirstAdjoint {
        num_paths: mp,
        num_steps: steps,
        dim_state: n,
        dim_noise: d,
        p,
        q,
        diagnostics: RegressionDiagnostics {
            basis: options.basis,
            ridge,
            basis_size,
            residual_rms,
        },
    })
}

/// `D_x^2 H` at one node: `-D^2 f + sum_k p_k D^2 b^k + sum_{j,k} (q_j)_k D^2 sigma^{kj}`.
pub fn hamiltonian_hessian(
    problem: &ControlProblem,
    t: f64,
    x: &Vector,
    u: &Vector,
    p: &Vector,
    q: &Matrix,
) -> Matrix {
    let mut hess = -problem.running_cost_dxx(t, x, u);
    for (k, bk) in problem.drift_dxx(t, x, u).iter().enumerate() {
        hess += bk * p[k];
    }
    for (j, col) in problem.diffusion_dxx(t, x, u).iter().enumerate() {
        for (k, skj) in col.iter().enumerate() {
            hess += skj * q[(k, j)];
        }
    }
    hess
}

/// Backward regression scheme for the second-order adjoint. `P_i` solves the
/// implicit Lyapunov-type step `P - h (A'P + PA) = E_i[P_{i+1}] + h (sum_j
/// C_j' E_i[P_{i+1}] C_j + C_j' Q_j + Q_j C_j + D_x^2 H)` and is symmetrized.
pub fn solve_second_adjoint(
    problem: &ControlProblem,
    base: &PathEnsemble,
    first: &FirstAdjoint,
    options: &AdjointOptions,
) -> Result<SecondAdjoint> {
    check_inputs(problem, base)?;
    let (n, d, mp) = (problem.dim_state, problem.dim_noise, base.num_paths);
    let grid = base.grid;
    let steps = grid.num_steps();
    if first.num_paths != mp || first.num_steps != steps {
        return Err(Error::DimensionMismatch("first adjoint does not match the ensemble".into()));
    }
    let h = grid.step();
    let ridge = options.ridge_for(mp)?;
    let nn = n * n;
    let mut pm = vec![0.0; (steps + 1) * mp * nn];
    let mut qm = vec![0.0; steps * mp * d * nn];

    pm[steps * mp * nn..]
        .par_chunks_mut(nn)
        .enumerate()
        .for_each(|(m, out)| {
            let g = symmetrize(&problem.terminal_cost_dxx(&base.state(m, steps)));
            out.copy_from_slice((-g).as_slice());
        });

    let eye = DMatrix::<f64>::identity(n, n);
    let mut basis_size = vec![0; steps];
    let mut residual_rms = vec![0.0; steps];
    let width = nn * (1 + d);
    for i in (0..steps).rev() {
        let reg = NodeRegression::new(options.basis, &states_at(base, i), n, ridge, i)?;
        basis_size[i] = reg.size();
        let (head, tail) = pm.split_at_mut((i + 1) * mp * nn);
        let next = &tail[..mp * nn];
        let (fitted, rms) = project_step(&reg, next, nn, base, i);
        residual_rms[i] = rms;

        let t = grid.node(i);
        let current = &mut head[i * mp * nn..];
        let q_step = &mut qm[i * mp * d * nn..(i + 1) * mp * d * nn];
        let outcomes: Vec<Result<()>> = current
            .par_chunks_mut(nn)
            .zip(q_step.par_chunks_mut(d * nn))
            .zip(fitted.par_chunks(width))
            .enumerate()
            .map(|(m, ((p_out, q_out), fit))| {
                let x = base.state(m, i);
                let u = base.control(m, i);
                let a = problem.drift_dx(t, &x, &u);
                let c = problem.diffusion_dx(t, &x, &u);
                let e = symmetrize(&DMatrix::from_column_slice(n, n, &fit[..nn]));
                let mut rhs = hamiltonian_hessian(problem, t, &x, &u, &first.p(m, i), &first.q(m, i));
                for (j, cj) in c.iter().enumerate() {
                    let qj = symmetrize(&DMatrix::from_column_slice(n, n, &fit[nn * (1 + j)..nn * (2 + j)]));
                    rhs += cj.transpose() * &e * cj + cj.transpose() * &qj + &qj * cj;
                    q_out[j * nn..(j + 1) * nn].copy_from_slice(qj.as_slice());
                }
                let rhs = &e + rhs * h;
                // vec(A'P + PA) = (I (x) A' + A' (x) I) vec(P), column-major.
                let at = a.transpose();
                let op = DMatrix::identity(nn, nn) - (eye.kronecker(&at) + at.kronecker(&eye)) * h;
                let v = guarded_solve(op, &DVector::from_column_slice(rhs.as_slice()), i, m)?;
                let pi = symmetrize(&DMatrix::from_column_slice(n, n, v.as_slice()));
                if pi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteState { path: m, step: i });
                }
                p_out.copy_from_slice(pi.as_slice());
                Ok(())
            })
            .collect();
        first_error(outcomes)?;
    }
    Ok(SecondAdjoint {
        num_paths: mp,
        num_steps: steps,
        dim_state: n,
        dim_noise: d,
        p: pm,
        q: qm,
        diagnostics: RegressionDiagnostics {
            basis: options.basis,
            ridge,
            basis_size,
            residual_rms,
        },
    })
}

/// Both adjoints on the same ensemble and basis.
pub fn solve_adjoints(
    problem: &ControlProblem,
    base: &PathEnsemble,
    options: &AdjointOptions,
) -> Result<AdjointSolution> {
    let first = solve_first_adjoint(problem, base, options)?;
    let second = solve_second_adjoint(problem, base, &first, options)?;
    Ok(AdjointSolution { first, second })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{make_lq_problem, registry, riccati_solve, second_adjoint_oracle, LqSpec, ScalarModel};
    use crate::forward::{simulate, ControlProcess, Scheme};
    use crate::model::{ControlDomain, GrowthExponents, TimeGrid};
    use proptest::prelude::*;

    fn cubic_without_costs() -> ControlProblem {
        ScalarModel::new()
            .drift(|_, x, u| -x * x * x + u, |_, x, _| -3.0 * x * x, |_, x, _| -6.0 * x)
            .diffusion(|_, x, _| 0.3 + 0.1 * x, |_, _, _| 0.1, |_, _, _| 0.0)
            .into_problem("cubic", 1.0, 1.0, 0.0, 0.1, GrowthExponents::default(), ControlDomain::interval(-1.0, 1.0))
            .unwrap()
    }

    #[test]
    fn zero_costs_give_zero_adjoints() {
        let prob = cubic_without_costs();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let base = simulate(&prob, &ControlProcess::scalar_constant(grid, 0.5), &grid, 300, 4, Scheme::SplitStepImplicitDrift).unwrap();
        let sol = solve_adjoints(&prob, &base, &AdjointOptions::default()).unwrap();
        for m in 0..300 {
            for i in 0..20 {
                assert_eq!(sol.first.p(m, i)[0], 0.0);
                assert_eq!(sol.first.q(m, i)[(0, 0)], 0.0);
                assert_eq!(sol.second.p(m, i)[(0, 0)], 0.0);
                assert_eq!(sol.second.q(m, i, 0)[(0, 0)], 0.0);
            }
        }
    }

    #[test]
    fn linear_terminal_cost_on_frozen_dynamics() {
        let c = 1.7;
        let prob = ScalarModel::new()
            .terminal_cost(move |x| c * x, move |_| c, |_| 0.0)
            .into_problem("frozen", 1.0, 0.3, 0.0, 0.0, GrowthExponents::default(), ControlDomain::interval(-1.0, 1.0))
            .unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let base = simulate(&prob, &ControlProcess::scalar_constant(grid, 0.0), &grid, 50, 1, Scheme::SplitStepImplicitDrift).unwrap();
        let first = solve_first_adjoint(&prob, &base, &AdjointOptions::default()).unwrap();
        for m in 0..50 {
            for i in 0..10 {
                assert!((first.p(m, i)[0] + c).abs() < 1e-13);
                assert!(first.q(m, i)[(0, 0)].abs() < 1e-13);
            }
            assert_eq!(first.p(m, 10)[0], -c);
        }
    }

    fn lq_at_optimum(spec: &LqSpec, steps: usize, paths: usize) -> (ControlProblem, PathEnsemble, crate::bench::RiccatiSolution) {
        let prob = make_lq_problem("lq", spec).unwrap();
        let grid = TimeGrid::new(spec.horizon, steps).unwrap();
        let ric = riccati_solve(spec, &grid).unwrap();
        let base = simulate(&prob, &ric.feedback(&spec.domain), &grid, paths, 21, Scheme::SplitStepImplicitDrift).unwrap();
        (prob, base, ric)
    }

    #[test]
    fn lq_first_adjoint_tracks_the_riccati_costate() {
        let spec = registry::lq_scalar();
        let (prob, base, ric) = lq_at_optimum(&spec, 50, 4000);
        let first = solve_first_adjoint(&prob, &base, &AdjointOptions::default()).unwrap();
        for i in 0..=50 {
            let (mut err, mut norm) = (0.0, 0.0);
            for m in 0..base.num_paths {
                let exact = ric.adjoint_p(i, &base.state(m, i));
                err += (first.p(m, i) - &exact).norm_squared();
                norm += exact.norm_squared();
            }
            assert!((err / norm).sqrt() < 0.05, "node {i}: {}", (err / norm).sqrt());
        }
    }

    #[test]
    fn lq_second_adjoint_solves_the_lyapunov_equation() {
        let spec = registry::lq_scalar();
        let (prob, base, _) = lq_at_optimum(&spec, 100, 200);
        let sol = solve_adjoints(&prob, &base, &AdjointOptions::default()).unwrap();
        let oracle = second_adjoint_oracle(&spec, &base.grid);
        for i in 0..=100 {
            let rel = (sol.second.p(0, i)[(0, 0)] - oracle[i][(0, 0)]).abs() / oracle[i][(0, 0)].abs();
            assert!(rel < 1e-2, "node {i}: {rel}");
            // Deterministic P: no martingale part, identical on every path.
            assert!((sol.second.p(0, i) - sol.second.p(199, i)).norm() < 1e-12);
            if i < 100 {
                assert!(sol.second.q(7, i, 0).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn decoupled_copies_reproduce_the_scalar_second_adjoint() {
        let scalar = registry::lq_scalar();
        let two = LqSpec {
            a: DMatrix::from_diagonal_element(2, 2, scalar.a[(0, 0)]),
            b: DMatrix::identity(2, 2),
            sigma0: DMatrix::from_diagonal_element(2, 2, scalar.sigma0[(0, 0)]),
            c: vec![
                DMatrix::from_row_slice(2, 2, &[scalar.c[0][(0, 0)], 0.0, 0.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, scalar.c[0][(0, 0)]]),
            ],
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(2, 2),
            g: DMatrix::identity(2, 2),
            horizon: 1.0,
            x0: DVector::from_vec(vec![1.0, 1.0]),
            domain: ControlDomain::cube(2, -10.0, 10.0),
        };
        let (p1, b1, _) = lq_at_optimum(&scalar, 40, 64);
        let (p2, b2, _) = lq_at_optimum(&two, 40, 64);
        let s1 = solve_adjoints(&p1, &b1, &AdjointOptions::default()).unwrap();
        let s2 = solve_adjoints(&p2, &b2, &AdjointOptions::default()).unwrap();
        for i in 0..=40 {
            let (a, b) = (s1.second.p(0, i)[(0, 0)], s2.second.p(0, i));
            assert!((b[(0, 0)] - a).abs() < 1e-12 && (b[(1, 1)] - a).abs() < 1e-12, "{i}: {b} vs {a}");
            assert!(b[(0, 1)].abs() < 1e-12 && b[(1, 0)] == b[(0, 1)]);
        }
    }

    #[test]
    fn terminal_conditions_are_exact_and_p_is_symmetric() {
        let prob = registry::registered_problem("lq-2d").unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let ctrl = ControlProcess::constant(grid, DVector::from_vec(vec![0.3, -0.2]));
        let base = simulate(&prob, &ctrl, &grid, 500, 8, Scheme::SplitStepImplicitDrift).unwrap();
        let sol = solve_adjoints(&prob, &base, &AdjointOptions::default()).unwrap();
        for m in 0..500 {
            let xt = base.state(m, 20);
            assert_eq!(sol.first.p(m, 20), -prob.terminal_cost_dx(&xt));
            assert_eq!(sol.second.p(m, 20), -prob.terminal_cost_dxx(&xt));
            for i in 0..20 {
                let p = sol.second.p(m, i);
                assert!((&p - p.transpose()).norm() <= 1e-10);
                for j in 0..2 {
                    let q = sol.second.q(m, i, j);
                    assert!((&q - q.transpose()).norm() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn coarse_steps_on_expansive_drift_are_refused() {
        let prob = ScalarModel::new()
            .drift(|_, x, _| x, |_, _, _| 1.0, |_, _, _| 0.0)
            .into_problem("grow", 1.0, 1.0, 1.0, 0.0, GrowthExponents::default(), ControlDomain::interval(-1.0, 1.0))
            .unwrap();
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let base = simulate(&prob, &ControlProcess::scalar_constant(grid, 0.0), &grid, 4, 1, Scheme::ExplicitEuler).unwrap();
        let coarse = PathEnsemble {
            grid: TimeGrid::new(1.0, 1).unwrap(),
            ..base.clone()
        };
        assert!(solve_first_adjoint(&prob, &coarse, &AdjointOptions::default()).is_err());
        assert!(solve_first_adjoint(&prob, &base, &AdjointOptions::default()).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // The matrix step inherits the drift's one-sided bound in the
        // Hilbert-Schmidt inner product.
        #[test]
        fn hilbert_schmidt_dissipativity(x0 in -3.0..3.0f64, x1 in -3.0..3.0f64, u0 in -1.0..1.0f64,
                                         a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64) {
            let p = DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
            let prob = registry::registered_problem("lq-2d").unwrap();
            let x = DVector::from_vec(vec![x0, x1]);
            let u = DVector::from_vec(vec![u0, -u0]);
            let jac = prob.drift_dx(0.0, &x, &u);
            let lhs = ((jac.transpose() * &p + &p * &jac) * &p).trace();
            prop_assert!(lhs <= 2.0 * prob.dissipativity_alpha * p.norm_squared() + 1e-10);

            let cubic = registry::registered_problem("poly-cubic").unwrap();
            let s = DMatrix::from_element(1, 1, a);
            let jac = cubic.drift_dx(0.0, &DVector::from_element(1, x0), &DVector::from_element(1, u0));
            let lhs = ((jac.transpose() * &s + &s * &jac) * &s).trace();
            prop_assert!(lhs <= 2.0 * cubic.dissipativity_alpha * s.norm_squared() + 1e-10);
        }
    }
}

use std::ops::Range;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rayon::prelude::*;

use super::SpikeSpec;
use crate::error::{Error, Result};
use crate::forward::{advance, PathEnsemble};
use crate::model::{ControlProblem, Matrix, TimeGrid, Vector};
use crate::numerics::quadratic_forms;

/// A vector process sampled at every node of every path, flat
/// `[path][node][coord]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePaths {
    pub num_paths: usize,
    pub num_nodes: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl StatePaths {
    pub fn zeros(num_paths: usize, num_nodes: usize, dim: usize) -> Self {
        Self {
            num_paths,
            num_nodes,
            dim,
            data: vec![0.0; num_paths * num_nodes * dim],
        }
    }

    pub fn at(&self, path: usize, node: usize) -> &[f64] {
        let start = (path * self.num_nodes + node) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn vector(&self, path: usize, node: usize) -> Vector {
        DVector::from_column_slice(self.at(path, node))
    }

    pub fn path(&self, path: usize) -> &[f64] {
        let len = self.num_nodes * self.dim;
        &self.data[path * len..(path + 1) * len]
    }

    fn minus(&self, other: &StatePaths) -> StatePaths {
        StatePaths {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            ..*self
        }
    }

    pub(crate) fn from_paths(
        num_paths: usize,
        num_nodes: usize,
        dim: usize,
        fill: impl Fn(usize, &mut [f64]) -> Result<()> + Sync,
    ) -> Result<Self> {
        let mut out = Self::zeros(num_paths, num_nodes, dim);
        let outcomes: Vec<Result<()>> = out
            .data
            .par_chunks_mut(num_nodes * dim)
            .enumerate()
            .map(|(m, chunk)| fill(m, chunk))
            .collect();
        outcomes.into_iter().collect::<Result<Vec<()>>>()?;
        Ok(out)
    }
}

/// Everything the per-path recursions need: the base ensemble (whose
/// realized controls are the reference control), the spike window and value.
pub(crate) struct SpikeContext<'a> {
    pub problem: &'a ControlProblem,
    pub base: &'a PathEnsemble,
    pub window: Range<usize>,
    pub value: Vector,
}

impl<'a> SpikeContext<'a> {
    pub fn new(problem: &'a ControlProblem, base: &'a PathEnsemble, spike: &SpikeSpec) -> Result<Self> {
        let window = spike.window(&base.grid)?;
        spike.check_value(&problem.control_domain)?;
        if base.dim_state != problem.dim_state || base.dim_noise() != problem.dim_noise {
            return Err(Error::DimensionMismatch(
                "ensemble and problem dimensions differ".into(),
            ));
        }
        Ok(Self {
            problem,
            base,
            window,
            value: spike.value.clone(),
        })
    }

    fn grid(&self) -> &TimeGrid {
        &self.base.grid
    }

    /// `(I - h A)` factorised, with `A = D_x b` at node `i` of `path`.
    fn implicit_operator(&self, path: usize, i: usize, a: &Matrix) -> Result<LU<f64, Dyn, Dyn>> {
        let n = a.nrows();
        let op = DMatrix::identity(n, n) - a * self.grid().step();
        let lu = op.lu();
        if !lu.is_invertible() {
            return Err(Error::SingularStep {
                node: i,
                path,
                condition: f64::INFINITY,
            });
        }
        Ok(lu)
    }

    /// First variation on one path, written into `out` (all nodes).
    pub fn first_variation_path(&self, path: usize, out: &mut [f64]) -> Result<()> {
        let p = self.problem;
        let n = p.dim_state;
        out.fill(0.0);
        let mut y = DVector::zeros(n);
        for i in self.window.start..self.grid().num_steps() {
            if self.window.is_empty() {
                break;
            }
            let t = self.grid().node(i);
            let x = self.base.state(path, i);
            let u = self.base.control(path, i);
            let a = p.drift_dx(t, &x, &u);
            let lu = self.implicit_operator(path, i, &a)?;
            let c = p.diffusion_dx(t, &x, &u);
            let dw = self.base.increments.at(path, i);
            let mut next = lu.solve(&y).expect("invertible");
            let chi = self.window.contains(&i);
            let dsigma = chi.then(|| p.diffusion(t, &x, &self.value) - p.diffusion(t, &x, &u));
            for (j, cj) in c.iter().enumerate() {
                let mut vol = cj * &y;
                if let Some(ds) = &dsigma {
                    vol += ds.column(j);
                }
                next += vol * dw[j];
            }
            y = next;
            out[(i + 1) * n..(i + 2) * n].copy_from_slice(y.as_slice());
        }
        Ok(())
    }

    /// Second variation on one path given its first variation `y`.
    pub fn second_variation_path(&self, path: usize, y: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.problem;
        let n = p.dim_state;
        let h = self.grid().step();
        out.fill(0.0);
        let mut z = DVector::zeros(n);
        for i in self.window.start..self.grid().num_steps() {
            if self.window.is_empty() {
                break;
            }
            let t = self.grid().node(i);
            let x = self.base.state(path, i);
            let u = self.base.control(path, i);
            let yi = DVector::from_column_slice(&y[i * n..(i + 1) * n]);
            let a = p.drift_dx(t, &x, &u);
            let lu = self.implicit_operator(path, i, &a)?;
            let c = p.diffusion_dx(t, &x, &u);
            let sxx = p.diffusion_dxx(t, &x, &u);
            let chi = self.window.contains(&i);

            let mut drift_forcing = quadratic_forms(&p.drift_dxx(t, &x, &u), &yi) * 0.5;
            if chi {
                drift_forcing += p.drift(t, &x, &self.value) - p.drift(t, &x, &u);
            }
            let mut next = lu.solve(&(&z + drift_forcing * h)).expect("invertible");
            let dc = chi.then(|| p.diffusion_dx(t, &x, &self.value));
            let dw = self.base.increments.at(path, i);
            for j in 0..c.len() {
                let mut vol = &c[j] * &z + quadratic_forms(&sxx[j], &yi) * 0.5;
                if let Some(dc) = &dc {
                    vol += (&dc[j] - &c[j]) * &yi;
                }
                next += vol * dw[j];
            }
            z = next;
            out[(i + 1) * n..(i + 2) * n].copy_from_slice(z.as_slice());
        }
        Ok(())
    }

    /// State under the spiked control on one path, same scheme and
    /// increments as the base; identical to the base before the spike.
    pub fn perturbed_path(&self, path: usize, out: &mut [f64]) -> Result<()> {
        let p = self.problem;
        let n = p.dim_state;
        let grid = *self.grid();
        let base_path = self.base.path_states(path);
        let start = self.window.start;
        out[..(start + 1) * n].copy_from_slice(&base_path[..(start + 1) * n]);
        if self.window.is_empty() {
            out.copy_from_slice(base_path);
            return Ok(());
        }
        let mut x = DVector::from_column_slice(&base_path[start * n..(start + 1) * n]);
        for i in start..grid.num_steps() {
            let u = if self.window.contains(&i) {
                self.value.clone()
            } else {
                self.base.control(path, i)
            };
            x = advance(
                p,
                self.base.scheme,
                grid.node(i),
                &x,
                &u,
                grid.step(),
                self.base.increments.at(path, i),
            )?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { path, step: i + 1 });
            }
            out[(i + 1) * n..(i + 2) * n].copy_from_slice(x.as_slice());
        }
        Ok(())
    }
}

/// First variation `y` for every path of `base`. The reference control is
/// the control `base` realized; the spike replaces it by `spike.value`.
pub fn simulate_first_variation(
    problem: &ControlProblem,
    base: &PathEnsemble,
    spike: &SpikeSpec,
) -> Result<StatePaths> {
    let ctx = SpikeContext::new(problem, base, spike)?;
    StatePaths::from_paths(base.num_paths, base.grid.num_steps() + 1, problem.dim_state, |m, out| {
        ctx.first_variation_path(m, out)
    })
}

/// Second variation `z` for every path, driven by the first variation `y`.
pub fn simulate_second_variation(
    problem: &ControlProblem,
    base: &PathEnsemble,
    spike: &SpikeSpec,
    y: &StatePaths,
) -> Result<StatePaths> {
    let ctx = SpikeContext::new(problem, base, spike)?;
    if y.num_paths != base.num_paths || y.num_nodes != base.grid.num_steps() + 1 {
        return Err(Error::DimensionMismatch(
            "first variation does not match the ensemble".into(),
        ));
    }
    StatePaths::from_paths(base.num_paths, y.num_nodes, problem.dim_state, |m, out| {
        ctx.second_variation_path(m, y.path(m), out)
    })
}

/// Perturbed state `x^eps` on the increments of `base`.
pub fn simulate_perturbed_state(
    problem: &ControlProblem,
    base: &PathEnsemble,
    spike: &SpikeSpec,
) -> Result<StatePaths> {
    let ctx = SpikeContext::new(problem, base, spike)?;
    StatePaths::from_paths(base.num_paths, base.grid.num_steps() + 1, problem.dim_state, |m, out| {
        ctx.perturbed_path(m, out)
    })
}

/// `y`, `z`, `xi = x^eps - x`, `eta = xi - y` and `zeta = eta - z` on one
/// ensemble.
#[derive(Debug, Clone)]
pub struct VariationProcesses {
    pub window: Range<usize>,
    pub y: StatePaths,
    pub z: StatePaths,
    pub x_eps: StatePaths,
    pub xi: StatePaths,
    pub eta: StatePaths,
    pub zeta: StatePaths,
}

pub fn variation_processes(
    problem: &ControlProblem,
    base: &PathEnsemble,
    spike: &SpikeSpec,
) -> Result<VariationProcesses> {
    let y = simulate_first_variation(problem, base, spike)?;
    let z = simulate_second_variation(problem, base, spike, &y)?;
    let x_eps = simulate_perturbed_state(problem, base, spike)?;
    let base_states = StatePaths {
        num_paths: base.num_paths,
        num_nodes: base.grid.num_steps() + 1,
        dim: base.dim_state,
        data: base.states.clone(),
    };
    let xi = x_eps.minus(&base_states);
    let eta = xi.minus(&y);
    let zeta = eta.minus(&z);
    Ok(VariationProcesses {
        window: spike.window(&base.grid)?,
        y,
        z,
        x_eps,
        xi,
        eta,
        zeta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{registry, ScalarModel};
    use crate::forward::{simulate, ControlProcess, Scheme};
    use crate::model::{ControlDomain, GrowthExponents};
    use crate::numerics::Estimate;

    fn one(v: f64) -> Vector {
        DVector::from_element(1, v)
    }

    fn cubic_base(paths: usize) -> (ControlProblem, PathEnsemble) {
        let prob = registry::registered_problem("poly-cubic").unwrap();
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let ctrl = ControlProcess::scalar_constant(grid, -0.5);
        let ens = simulate(&prob, &ctrl, &grid, paths, 7, Scheme::SplitStepImplicitDrift).unwrap();
        (prob, ens)
    }

    #[test]
    fn remainder_identities_hold_and_paths_couple_before_the_spike() {
        let (prob, base) = cubic_base(32);
        let spike = SpikeSpec::new(0.5, 0.1, one(1.0));
        let v = variation_processes(&prob, &base, &spike).unwrap();
        assert_eq!(v.window, 20..24);
        for m in 0..base.num_paths {
            for i in 0..=40 {
                let xi = v.x_eps.at(m, i)[0] - base.state_slice(m, i)[0];
                assert_eq!(v.xi.at(m, i)[0], xi);
                assert_eq!(v.eta.at(m, i)[0], xi - v.y.at(m, i)[0]);
                assert_eq!(v.zeta.at(m, i)[0], v.eta.at(m, i)[0] - v.z.at(m, i)[0]);
                if i <= 20 {
                    assert_eq!(v.x_eps.at(m, i), base.state_slice(m, i));
                    assert_eq!(v.y.at(m, i)[0], 0.0);
                    assert_eq!(v.z.at(m, i)[0], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_width_spike_gives_zero_processes() {
        let (prob, base) = cubic_base(8);
        let v = variation_processes(&prob, &base, &SpikeSpec::new(0.5, 0.0, one(1.0))).unwrap();
        for p in [&v.y, &v.z, &v.xi, &v.eta, &v.zeta] {
            assert!(p.data.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn control_free_diffusion_gives_zero_first_variation() {
        let prob = ScalarModel::new()
            .drift(|_, x, u| -x + u, |_, _, _| -1.0, |_, _, _| 0.0)
            .drift_du(|_, _, _| 1.0)
            .diffusion(|_, _, _| 0.5, |_, _, _| 0.0, |_, _, _| 0.0)
            .into_problem("ou", 1.0, 1.0, -1.0, 0.0, GrowthExponents::default(), ControlDomain::interval(-1.0, 1.0))
            .unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let ctrl = ControlProcess::scalar_constant(grid, 0.0);
        let base = simulate(&prob, &ctrl, &grid, 16, 3, Scheme::SplitStepImplicitDrift).unwrap();
        let y = simulate_first_variation(&prob, &base, &SpikeSpec::new(0.2, 0.3, one(1.0))).unwrap();
        assert!(y.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn first_variation_variance_matches_ito_isometry() {
        let prob = ScalarModel::new()
            .drift(|_, x, _| -x, |_, _, _| -1.0, |_, _, _| 0.0)
            .diffusion(|_, _, u| u, |_, _, _| 0.0, |_, _, _| 0.0)
            .into_problem("ou-u", 1.0, 1.0, -1.0, 0.0, GrowthExponents::default(), ControlDomain::interval(-1.0, 1.0))
            .unwrap();
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let ctrl = ControlProcess::scalar_constant(grid, 0.0);
        let base = simulate(&prob, &ctrl, &grid, 20_000, 11, Scheme::SplitStepImplicitDrift).unwrap();
        let (s, eps) = (0.5, 0.1);
        let y = simulate_first_variation(&prob, &base, &SpikeSpec::new(s, eps, one(1.0))).unwrap();
        let sq: Vec<f64> = (0..base.num_paths).map(|m| y.at(m, 400)[0].powi(2)).collect();
        let est = Estimate::from_samples(&sq);
        // Var y_T = int_s^{s+eps} e^{-2(T-r)} dr.
        let oracle = (-2.0_f64 * (1.0 - s - eps)).exp() * (1.0 - (-2.0_f64 * eps).exp()) / 2.0;
        assert!(
            (est.mean - oracle).abs() < 3.0 * est.stderr,
            "E y_T^2 = {} +- {}, oracle {oracle}",
            est.mean,
            est.stderr
        );
    }

    #[test]
    fn lq_second_variation_is_the_deterministic_drift_response() {
        let spec = registry::lq_scalar();
        let prob = crate::bench::make_lq_problem("lq", &spec).unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let ctrl = ControlProcess::scalar_constant(grid, 0.2);
        let base = simulate(&prob, &ctrl, &grid, 16, 5, Scheme::SplitStepImplicitDrift).unwrap();
        let w = 1.2;
        let v = variation_processes(&prob, &base, &SpikeSpec::new(0.4, 0.1, one(w))).unwrap();
        let (a, b, h) = (spec.a[(0, 0)], spec.b[(0, 0)], grid.step());
        let mut z = 0.0;
        for i in 0..50 {
            let forcing = if (20..25).contains(&i) { b * (w - 0.2) } else { 0.0 };
            z = (z + h * forcing) / (1.0 - h * a);
            for m in 0..base.num_paths {
                assert!((v.z.at(m, i + 1)[0] - z).abs() < 1e-14);
                // Linear dynamics: the expansion is exact.
                assert!(v.zeta.at(m, i + 1)[0].abs() < 1e-12);
            }
        }
    }
}

use std::fmt;

use rayon::prelude::*;

use super::hamiltonian::HamiltonianContext;
use crate::adjoint::{AdjointSolution, FirstAdjoint, RegressionDiagnostics};
use crate::error::{Error, Result};
use crate::forward::PathEnsemble;
use crate::model::{ControlProblem, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmpOptions {
    /// Fixed tolerance; `None` derives one per sample from the regression
    /// error estimate.
    pub tol: Option<f64>,
    /// Multiplier applied to the regression error estimate.
    pub tol_scale: f64,
    /// Check only the first paths of the ensemble.
    pub max_paths: Option<usize>,
    /// Largest violation fraction still accepted.
    pub max_fraction: f64,
    /// Compare the plain Hamiltonian instead of the second-order one.
    pub first_order_only: bool,
    /// Keep the index of every violating `(node, path, sample)` triple.
    pub record_violations: bool,
}

impl Default for SmpOptions {
    fn default() -> Self {
        Self {
            tol: None,
            tol_scale: 3.0,
            max_paths: Some(1000),
            max_fraction: 0.01,
            first_order_only: false,
            record_violations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub node: usize,
    pub path: usize,
    pub u: Vector,
    pub u_ref: Vector,
    /// `H(u) - H(u_ref) - tol`, positive for a violation.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmpReport {
    /// Number of `(node, path)` points checked.
    pub samples: usize,
    /// Points where some control in the sample beats the reference.
    pub violations: usize,
    /// Violating `(node, path, control)` triples.
    pub violating_triples: usize,
    pub sample_size: usize,
    pub max_fraction: f64,
    /// Largest violations, worst first.
    pub witnesses: Vec<Witness>,
    /// `(node, path, sample index)` of every violation when recorded.
    pub violation_set: Vec<(usize, usize, usize)>,
}

impl SmpReport {
    pub fn fraction(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.violations as f64 / self.samples as f64
        }
    }

    pub fn worst(&self) -> Option<&Witness> {
        self.witnesses.first()
    }

    pub fn passed(&self) -> bool {
        self.fraction() <= self.max_fraction
    }
}

impl fmt::Display for SmpReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} maximum condition: {} of {} (node, path) points violated ({:.3}%, limit {:.3}%), {} violating controls",
            if self.passed() { "PASS" } else { "FAIL" },
            self.violations,
            self.samples,
            100.0 * self.fraction(),
            100.0 * self.max_fraction,
            self.violating_triples
        )?;
        if let Some(w) = self.worst() {
            writeln!(
                f,
                "  worst: t = {:.4}, path {}, u = {:?} vs {:?}, excess {:.3e}",
                w.t,
                w.path,
                w.u.as_slice(),
                w.u_ref.as_slice(),
                w.excess
            )?;
        }
        Ok(())
    }
}

const MAX_WITNESSES: usize = 10;

/// Standard error of a regression fit with `k` coefficients on `m` samples
/// and residual RMS `rms`.
fn fit_error(diag: &RegressionDiagnostics, step: usize, paths: usize) -> f64 {
    diag.residual_rms[step] * (diag.basis_size[step] as f64 / paths as f64).sqrt()
}

/// Per-step error scales for `(p, q)`.
pub(crate) fn first_adjoint_error_scales(first: &FirstAdjoint, paths: usize, h: f64) -> Vec<[f64; 2]> {
    (0..first.num_steps())
        .map(|i| {
            let ep = fit_error(&first.diagnostics, i, paths);
            [ep, ep / h.sqrt()]
        })
        .collect()
}

/// Per-step error scales for `(p, q, P)`.
pub(crate) fn adjoint_error_scales(adjoints: &AdjointSolution, paths: usize, h: f64) -> Vec<[f64; 3]> {
    first_adjoint_error_scales(&adjoints.first, paths, h)
        .into_iter()
        .enumerate()
        .map(|(i, [ep, eq])| [ep, eq, fit_error(&adjoints.second.diagnostics, i, paths)])
        .collect()
}

pub(crate) fn insert_witness(list: &mut Vec<Witness>, w: Witness) {
    let at = list.partition_point(|o| o.excess >= w.excess);
    if at < MAX_WITNESSES {
        list.insert(at, w);
        list.truncate(MAX_WITNESSES);
    }
}

/// Test `H(t, x, u) <= H(t, x, u_ref) + tol` on every step of the selected
/// paths and every control in `sample`. The Hamiltonian is the second-order
/// one unless `first_order_only` is set. A `(node, path)` point violates the
/// condition when any sampled control beats the reference there.
pub fn smp_check(
    problem: &ControlProblem,
    base: &PathEnsemble,
    adjoints: &AdjointSolution,
    sample: &[Vector],
    options: &SmpOptions,
) -> Result<SmpReport> {
    let steps = base.grid.num_steps();
    if adjoints.first.num_paths() != base.num_paths || adjoints.first.num_steps() != steps {
        return Err(Error::DimensionMismatch("adjoints do not match the ensemble".into()));
    }
    if sample.iter().any(|u| u.len() != problem.dim_control()) {
        return Err(Error::DimensionMismatch("control sample has the wrong dimension".into()));
    }
    let paths = options.max_paths.map_or(base.num_paths, |m| m.min(base.num_paths));
    let scales = adjoint_error_scales(adjoints, base.num_paths, base.grid.step());

    struct Partial {
        violations: usize,
        triples: usize,
        witnesses: Vec<Witness>,
        set: Vec<(usize, usize, usize)>,
    }
    let partials: Vec<Partial> = (0..paths)
        .into_par_iter()
        .map(|m| {
            let mut out = Partial {
                violations: 0,
                triples: 0,
                witnesses: Vec::new(),
                set: Vec::new(),
            };
            for i in 0..steps {
                let ctx = HamiltonianContext::at(problem, base, adjoints, m, i);
                let value = |u: &Vector| {
                    if options.first_order_only {
                        ctx.hamiltonian(u)
                    } else {
                        ctx.script_h(u)
                    }
                };
                let reference = value(&ctx.u);
                let b_ref = problem.drift(ctx.t, &ctx.x, &ctx.u);
                let s_ref = problem.diffusion(ctx.t, &ctx.x, &ctx.u);
                let [ep, eq, e2] = scales[i];
                let mut violated = false;
                for (k, u) in sample.iter().enumerate() {
                    let gap = value(u) - reference;
                    let tol = options.tol.unwrap_or_else(|| {
                        let db = (problem.drift(ctx.t, &ctx.x, u) - &b_ref).norm();
                        let ds = (problem.diffusion(ctx.t, &ctx.x, u) - &s_ref).norm();
                        options.tol_scale * (ep * db + eq * ds + 0.5 * e2 * ds * ds)
                            + 1e-12 * (1.0 + reference.abs())
                    });
                    if gap > tol {
                        violated = true;
                        out.triples += 1;
                        if options.record_violations {
                            out.set.push((i, m, k));
                        }
                        insert_witness(
                            &mut out.witnesses,
                            Witness {
                                t: ctx.t,
                                node: i,
                                path: m,
                                u: u.clone(),
                                u_ref: ctx.u.clone(),
                                excess: gap - tol,
                            },
                        );
                    }
                }
                out.violations += usize::from(violated);
            }
            out
        })
        .collect();

    let mut report = SmpReport {
        samples: paths * steps,
        violations: 0,
        violating_triples: 0,
        sample_size: sample.len(),
        max_fraction: options.max_fraction,
        witnesses: Vec::new(),
        violation_set: Vec::new(),
    };
    for p in partials {
        report.violations += p.violations;
        report.violating_triples += p.triples;
        for w in p.witnesses {
            insert_witness(&mut report.witnesses, w);
        }
        report.violation_set.extend(p.set);
    }
    report.violation_set.sort_unstable();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{solve_adjoints, AdjointOptions};
    use crate::bench::{make_lq_problem, registry, riccati_solve, ScalarModel};
    use crate::forward::{simulate, ControlProcess, Scheme};
    use crate::model::{ControlDomain, GrowthExponents, TimeGrid};
    use nalgebra::DVector;

    fn lq_run(optimal: bool, steps: usize, paths: usize) -> (ControlProblem, PathEnsemble, AdjointSolution) {
        let spec = registry::lq_scalar();
        let prob = make_lq_problem("lq", &spec).unwrap();
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let ctrl = if optimal {
            riccati_solve(&spec, &grid).unwrap().feedback(&spec.domain)
        } else {
            ControlProcess::scalar_constant(grid, 0.0)
        };
        let base = simulate(&prob, &ctrl, &grid, paths, 3, Scheme::SplitStepImplicitDrift).unwrap();
        let adj = solve_adjoints(&prob, &base, &AdjointOptions::default()).unwrap();
        (prob, base, adj)
    }

    #[test]
    fn lq_optimum_passes_and_zero_control_fails() {
        let sample = ControlDomain::interval(-10.0, 10.0).sample_grid(41);
        let (prob, base, adj) = lq_run(true, 100, 4000);
        let good = smp_check(&prob, &base, &adj, &sample, &SmpOptions::default()).unwrap();
        assert!(good.passed(), "{good}");
        let (prob, base, adj) = lq_run(false, 100, 4000);
        let bad = smp_check(&prob, &base, &adj, &sample, &SmpOptions::default()).unwrap();
        assert!(!bad.passed() && bad.fraction() > 0.5, "{bad}");
        let w = bad.worst().unwrap();
        assert!(w.excess > 0.0 && w.u_ref[0] == 0.0);
    }

    #[test]
    fn singleton_sample_never_violates() {
        let prob = ScalarModel::new()
            .drift(|_, x, u| -x + u, |_, _, _| -1.0, |_, _, _| 0.0)
            .diffusion(|_, _, u| 0.3 + u, |_, _, _| 0.0, |_, _, _| 0.0)
            .running_cost(|_, x, u| x * x - u, |_, x, _| 2.0 * x, |_, _, _| 2.0)
            .terminal_cost(|x| x * x, |x| 2.0 * x, |_| 2.0)
            .into_problem("fin", 1.0, 1.0, -1.0, 0.0, GrowthExponents::default(), ControlDomain::finite_scalars(&[0.5]))
            .unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let base = simulate(&prob, &ControlProcess::scalar_constant(grid, 0.5), &grid, 200, 1, Scheme::SplitStepImplicitDrift).unwrap();
        let adj = solve_adjoints(&prob, &base, &AdjointOptions::default()).unwrap();
        let opts = SmpOptions {
            tol: Some(0.0),
            ..Default::default()
        };
        let r = smp_check(&prob, &base, &adj, &prob.control_domain.sample_grid(1), &opts).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.samples, 200 * 20);
        assert_eq!(r.violating_triples, 0);
    }

    #[test]
    fn control_free_diffusion_gives_identical_violation_sets() {
        let spec = registry::lq_drift();
        let prob = make_lq_problem("lq", &spec).unwrap();
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let base = simulate(&prob, &ControlProcess::scalar_constant(grid, 0.4), &grid, 500, 2, Scheme::SplitStepImplicitDrift).unwrap();
        let adj = solve_adjoints(&prob, &base, &AdjointOptions::default()).unwrap();
        let sample = ControlDomain::interval(-2.0, 2.0).sample_grid(17);
        let opts = SmpOptions {
            record_violations: true,
            tol: Some(1e-9),
            ..Default::default()
        };
        let full = smp_check(&prob, &base, &adj, &sample, &opts).unwrap();
        let plain = smp_check(&prob, &base, &adj, &sample, &SmpOptions { first_order_only: true, ..opts }).unwrap();
        assert!(full.violations > 0);
        assert_eq!(full.violation_set, plain.violation_set);
    }

    #[test]
    fn sample_dimension_is_checked() {
        let (prob, base, adj) = lq_run(false, 10, 50);
        let sample = vec![DVector::from_vec(vec![0.0, 1.0])];
        assert!(smp_check(&prob, &base, &adj, &sample, &SmpOptions::default()).is_err());
    }
}

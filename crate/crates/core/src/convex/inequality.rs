use std::fmt;

use rayon::prelude::*;

use super::gateaux::gradient_at;
use super::linearized::{diffusion_du, drift_du};
use crate::adjoint::FirstAdjoint;
use crate::error::{Error, Result};
use crate::forward::PathEnsemble;
use crate::model::{ControlProblem, Vector};
use crate::smp::{first_adjoint_error_scales, insert_witness, Witness};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationalOptions {
    /// Fixed tolerance; `None` derives one per sample from the regression
    /// error of `(p, q)`.
    pub tol: Option<f64>,
    pub tol_scale: f64,
    pub max_paths: Option<usize>,
    pub max_fraction: f64,
}

impl Default for VariationalOptions {
    fn default() -> Self {
        Self {
            tol: None,
            tol_scale: 3.0,
            max_paths: Some(1000),
            max_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalReport {
    /// `(node, path)` points checked.
    pub samples: usize,
    /// Points where some sampled control gives a positive pairing.
    pub violations: usize,
    pub violating_triples: usize,
    pub sample_size: usize,
    pub max_fraction: f64,
    /// Worst first; `excess` is `<dH/du, u - u_ref> - tol`.
    pub witnesses: Vec<Witness>,
}

impl VariationalReport {
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

impl fmt::Display for VariationalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} variational inequality: {} of {} (node, path) points violated ({:.3}%, limit {:.3}%)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.violations,
            self.samples,
            100.0 * self.fraction(),
            100.0 * self.max_fraction
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

/// Test `<dH/du(t, x, u_ref, p, q), u - u_ref> <= tol` at every step of the
/// selected paths for every `u` in `sample`.
pub fn variational_inequality_check(
    problem: &ControlProblem,
    base: &PathEnsemble,
    first: &FirstAdjoint,
    sample: &[Vector],
    options: &VariationalOptions,
) -> Result<VariationalReport> {
    if !problem.control_domain.is_convex() {
        return Err(Error::NonConvexDomain);
    }
    problem.require_control_derivatives()?;
    let steps = base.grid.num_steps();
    if first.num_paths() != base.num_paths || first.num_steps() != steps {
        return Err(Error::DimensionMismatch("adjoints do not match the ensemble".into()));
    }
    if sample.iter().any(|u| u.len() != problem.dim_control()) {
        return Err(Error::DimensionMismatch("control sample has the wrong dimension".into()));
    }
    let paths = options.max_paths.map_or(base.num_paths, |m| m.min(base.num_paths));
    let scales = first_adjoint_error_scales(first, base.num_paths, base.grid.step());

    let partials: Vec<Result<(usize, usize, Vec<Witness>)>> = (0..paths)
        .into_par_iter()
        .map(|m| {
            let (mut violations, mut triples, mut witnesses) = (0, 0, Vec::new());
            for i in 0..steps {
                let t = base.grid.node(i);
                let x = base.state(m, i);
                let u_ref = base.control(m, i);
                let dh = -gradient_at(problem, base, first, m, i)?;
                let bu = drift_du(problem, t, &x, &u_ref)?;
                let su = diffusion_du(problem, t, &x, &u_ref)?;
                let [ep, eq] = scales[i];
                let mut violated = false;
                for u in sample {
                    let du = u - &u_ref;
                    let gap = dh.dot(&du);
                    let tol = options.tol.unwrap_or_else(|| {
                        let db = (&bu * &du).norm();
                        let ds = su.iter().map(|s| (s * &du).norm_squared()).sum::<f64>().sqrt();
                        options.tol_scale * (ep * db + eq * ds) + 1e-12 * (1.0 + dh.norm() * du.norm())
                    });
                    if gap > tol {
                        violated = true;
                        triples += 1;
                        insert_witness(
                            &mut witnesses,
                            Witness {
                                t,
                                node: i,
                                path: m,
                                u: u.clone(),
                                u_ref: u_ref.clone(),
                                excess: gap - tol,
                            },
                        );
                    }
                }
                violations += usize::from(violated);
            }
            Ok((violations, triples, witnesses))
        })
        .collect();

    let mut report = VariationalReport {
        samples: paths * steps,
        violations: 0,
        violating_triples: 0,
        sample_size: sample.len(),
        max_fraction: options.max_fraction,
        witnesses: Vec::new(),
    };
    for p in partials {
        let (v, t, ws) = p?;
        report.violations += v;
        report.violating_triples += t;
        for w in ws {
            insert_witness(&mut report.witnesses, w);
        }
    }
    Ok(report)
}

use std::fmt;

use rayon::prelude::*;

use super::hamiltonian::HamiltonianContext;
use crate::adjoint::AdjointSolution;
use crate::error::{Error, Result};
use crate::forward::PathEnsemble;
use crate::model::{ControlProblem, Vector};
use crate::numerics::{ordered_sum, Estimate};
use crate::variation::{SpikeFamily, SpikeSpec};

/// `E int_E [dH + 1/2 Tr(ds' P ds)] dt / eps` for one spike.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeInequalityPoint {
    pub w: Vector,
    pub eps: f64,
    pub scaled: Estimate,
}

/// Verdict for one replacement value over the shrinking widths.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeValueVerdict {
    pub w: Vector,
    pub points: Vec<SpikeInequalityPoint>,
    /// At the two smallest widths the scaled value stays below
    /// `3 stderr + tol`.
    pub passed: bool,
    /// Some width shows a scaled value of at least 5 stderr above zero.
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeInequalityReport {
    pub values: Vec<SpikeValueVerdict>,
}

impl SpikeInequalityReport {
    pub fn passed(&self) -> bool {
        self.values.iter().all(|v| v.passed)
    }

    /// True when some replacement value shows a resolved positive gain,
    /// i.e. the reference control is detectably not optimal.
    pub fn detects_improvement(&self) -> bool {
        self.values.iter().any(|v| v.positive)
    }
}

impl fmt::Display for SpikeInequalityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.values {
            write!(f, "{} w = {:?}:", if v.passed { "PASS" } else { "FAIL" }, v.w.as_slice())?;
            for p in &v.points {
                write!(f, " eps {:.4} -> {:.4e} +- {:.2e};", p.eps, p.scaled.mean, p.scaled.stderr)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Scaled spike integrand for one spike.
pub fn spike_inequality_point(
    problem: &ControlProblem,
    base: &PathEnsemble,
    adjoints: &AdjointSolution,
    spike: &SpikeSpec,
) -> Result<SpikeInequalityPoint> {
    let window = spike.window(&base.grid)?;
    spike.check_value(&problem.control_domain)?;
    if window.is_empty() {
        return Err(Error::InvalidArgument("spike inequality needs a positive width".into()));
    }
    let h = base.grid.step();
    let w = &spike.value;
    let samples: Vec<f64> = (0..base.num_paths)
        .into_par_iter()
        .map(|m| {
            ordered_sum(window.clone().map(|i| {
                let ctx = HamiltonianContext::at(problem, base, adjoints, m, i);
                let ds = problem.diffusion(ctx.t, &ctx.x, w) - problem.diffusion(ctx.t, &ctx.x, &ctx.u);
                ctx.hamiltonian(w) - ctx.hamiltonian(&ctx.u) + 0.5 * (ds.transpose() * &ctx.big_p * &ds).trace()
            })) * h
                / spike.width
        })
        .collect();
    Ok(SpikeInequalityPoint {
        w: w.clone(),
        eps: spike.width,
        scaled: Estimate::from_samples(&samples),
    })
}

/// Evaluate the spike inequality for every replacement value in `values`
/// over the widths of `family` (its own value is ignored).
pub fn spike_inequality_check(
    problem: &ControlProblem,
    base: &PathEnsemble,
    adjoints: &AdjointSolution,
    family: &SpikeFamily,
    values: &[Vector],
    tol: f64,
) -> Result<SpikeInequalityReport> {
    let mut out = Vec::with_capacity(values.len());
    for w in values {
        let fam = SpikeFamily {
            value: w.clone(),
            ..family.clone()
        };
        fam.check(&base.grid, &problem.control_domain)?;
        let points = fam
            .spikes()
            .map(|s| spike_inequality_point(problem, base, adjoints, &s))
            .collect::<Result<Vec<_>>>()?;
        let tail = &points[points.len() - 2..];
        let passed = tail.iter().all(|p| p.scaled.mean <= 3.0 * p.scaled.stderr + tol);
        let positive = points.iter().any(|p| p.scaled.mean > 0.0 && p.scaled.mean >= 5.0 * p.scaled.stderr);
        out.push(SpikeValueVerdict {
            w: w.clone(),
            points,
            passed,
            positive,
        });
    }
    Ok(SpikeInequalityReport { values: out })
}

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint::AdjointSolution;
use crate::error::{Error, Result};
use crate::forward::PathEnsemble;
use crate::model::{ControlProblem, Vector};
use crate::numerics::ordered_sum;
use crate::smp::{hamiltonian_at, smp_check, SmpOptions, SmpReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficiencyOptions {
    /// Random points for each of the two shape checks.
    pub samples: usize,
    pub seed: u64,
    /// Relative tolerance of the shape checks.
    pub tol: f64,
    /// Points per axis of the control grid used for maximality.
    pub control_grid: usize,
    pub smp: SmpOptions,
}

impl Default for SufficiencyOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            tol: 1e-9,
            control_grid: 21,
            smp: SmpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexityWitness {
    /// Negative curvature of the terminal cost.
    TerminalHessian { x: Vector, min_eigenvalue: f64 },
    /// `H(mid) < (H(z0) + H(z1)) / 2` along the segment `z0 -> z1`.
    Hamiltonian {
        t: f64,
        node: usize,
        path: usize,
        x0: Vector,
        u0: Vector,
        x1: Vector,
        u1: Vector,
        defect: f64,
    },
}

impl ConvexityWitness {
    fn severity(&self) -> f64 {
        match self {
            ConvexityWitness::TerminalHessian { min_eigenvalue, .. } => -min_eigenvalue,
            ConvexityWitness::Hamiltonian { defect, .. } => *defect,
        }
    }
}

impl fmt::Display for ConvexityWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvexityWitness::TerminalHessian { x, min_eigenvalue } => {
                write!(f, "D^2 h({:?}) has eigenvalue {:.4e}", x.as_slice(), min_eigenvalue)
            }
            ConvexityWitness::Hamiltonian {
                t,
                path,
                x0,
                u0,
                x1,
                u1,
                defect,
                ..
            } => write!(
                f,
                "t = {t:.4}, path {path}: segment ({:?}, {:?}) -> ({:?}, {:?}) misses concavity by {defect:.4e}",
                x0.as_slice(),
                u0.as_slice(),
                x1.as_slice(),
                u1.as_slice()
            ),
        }
    }
}

/// Outcome of one sampled shape condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub samples: usize,
    pub failures: usize,
    /// Worst first.
    pub witnesses: Vec<ConvexityWitness>,
}

impl ConditionCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn push(&mut self, w: ConvexityWitness) {
        self.failures += 1;
        let at = self.witnesses.partition_point(|o| o.severity() >= w.severity());
        if at < MAX_WITNESSES {
            self.witnesses.insert(at, w);
            self.witnesses.truncate(MAX_WITNESSES);
        }
    }
}

const MAX_WITNESSES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SufficiencyReport {
    pub terminal_convexity: ConditionCheck,
    pub hamiltonian_concavity: ConditionCheck,
    pub maximality: SmpReport,
}

impl SufficiencyReport {
    pub fn passed(&self) -> bool {
        self.terminal_convexity.passed() && self.hamiltonian_concavity.passed() && self.maximality.passed()
    }
}

impl fmt::Display for SufficiencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, check) in [
            ("terminal cost convex", &self.terminal_convexity),
            ("Hamiltonian concave in (x, u)", &self.hamiltonian_concavity),
        ] {
            writeln!(
                f,
                "{} {name}: {} failures in {} samples",
                if check.passed() { "PASS" } else { "FAIL" },
                check.failures,
                check.samples
            )?;
            for w in &check.witnesses {
                writeln!(f, "  {w}")?;
            }
        }
        write!(f, "{}", self.maximality)?;
        if self.passed() {
            writeln!(f, "sufficient conditions consistent on sample")?;
        }
        Ok(())
    }
}

/// Per-coordinate spread of the states at `node`.
fn state_spread(base: &PathEnsemble, node: usize) -> Vec<f64> {
    let m = base.num_paths as f64;
    (0..base.dim_state)
        .map(|c| {
            let col = || (0..base.num_paths).map(|p| base.state_slice(p, node)[c]);
            let mean = ordered_sum(col()) / m;
            (ordered_sum(col().map(|v| (v - mean).powi(2))) / m).sqrt()
        })
        .collect()
}

/// A state near path `path` at `node`, displaced uniformly within twice the
/// ensemble spread (plus a floor so degenerate nodes still move).
fn nearby_state(rng: &mut ChaCha8Rng, base: &PathEnsemble, spread: &[f64], path: usize, node: usize) -> Vector {
    let x = base.state_slice(path, node);
    DVector::from_iterator(
        x.len(),
        x.iter()
            .zip(spread)
            .map(|(v, s)| v + (2.0 * s + 0.5) * rng.random_range(-1.0..=1.0)),
    )
}

/// Checks convexity of the terminal cost, joint concavity of the
/// Hamiltonian in `(x, u)` with the adjoints frozen, and the maximum
/// condition over a grid of the control domain. Only evaluations of the
/// coefficients are needed.
pub fn sufficiency_check(
    problem: &ControlProblem,
    base: &PathEnsemble,
    adjoints: &AdjointSolution,
    options: &SufficiencyOptions,
) -> Result<SufficiencyReport> {
    let steps = base.grid.num_steps();
    if adjoints.first.num_paths() != base.num_paths || adjoints.first.num_steps() != steps {
        return Err(Error::DimensionMismatch("adjoints do not match the ensemble".into()));
    }
    if options.samples == 0 {
        return Err(Error::InvalidArgument("sufficiency check needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let domain = &problem.control_domain;

    let mut terminal = ConditionCheck {
        samples: options.samples,
        failures: 0,
        witnesses: Vec::new(),
    };
    let spread = state_spread(base, steps);
    for _ in 0..options.samples {
        let path = rng.random_range(0..base.num_paths);
        let x = nearby_state(&mut rng, base, &spread, path, steps);
        let hess = problem.terminal_cost_dxx(&x);
        let scale = hess.norm();
        let min_eigenvalue = hess.symmetric_eigenvalues().min();
        if min_eigenvalue < -options.tol * (1.0 + scale) {
            terminal.push(ConvexityWitness::TerminalHessian { x, min_eigenvalue });
        }
    }

    let mut concavity = ConditionCheck {
        samples: options.samples,
        failures: 0,
        witnesses: Vec::new(),
    };
    let spreads: Vec<Vec<f64>> = (0..steps).map(|i| state_spread(base, i)).collect();
    for _ in 0..options.samples {
        let path = rng.random_range(0..base.num_paths);
        let node = rng.random_range(0..steps);
        let t = base.grid.node(node);
        let p = adjoints.first.p(path, node);
        let q = adjoints.first.q(path, node);
        let x0 = nearby_state(&mut rng, base, &spreads[node], path, node);
        let x1 = nearby_state(&mut rng, base, &spreads[node], path, node);
        let u0 = domain.sample_random(&mut rng);
        let u1 = domain.sample_random(&mut rng);
        let xm = (&x0 + &x1) * 0.5;
        let um = (&u0 + &u1) * 0.5;
        let h0 = hamiltonian_at(problem, t, &x0, &u0, &p, &q);
        let h1 = hamiltonian_at(problem, t, &x1, &u1, &p, &q);
        let hm = hamiltonian_at(problem, t, &xm, &um, &p, &q);
        let defect = 0.5 * (h0 + h1) - hm;
        if defect > options.tol * (1.0 + h0.abs() + h1.abs()) {
            concavity.push(ConvexityWitness::Hamiltonian {
                t,
                node,
                path,
                x0,
                u0,
                x1,
                u1,
                defect,
            });
        }
    }

    let sample = domain.sample_grid(options.control_grid);
    let maximality = smp_check(problem, base, adjoints, &sample, &options.smp)?;
    Ok(SufficiencyReport {
        terminal_convexity: terminal,
        hamiltonian_concavity: concavity,
        maximality,
    })
}

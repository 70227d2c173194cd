use nalgebra::{DMatrix, DVector};

use super::{make_lq_problem, make_poly_problem, AffineCoef, LqSpec, PolyDriftSpec};
use crate::error::{Error, Result};
use crate::model::{ControlDomain, ControlProblem, Vector};

/// Names accepted by [`lookup`].
pub const REGISTERED: [&str; 4] = ["lq-scalar", "lq-drift", "lq-2d", "poly-cubic"];

/// Specification of a registered problem, before assembly.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchSpec {
    Lq(LqSpec),
    Poly(PolyDriftSpec),
}

impl BenchSpec {
    pub fn lq(&self) -> Option<&LqSpec> {
        match self {
            BenchSpec::Lq(spec) => Some(spec),
            BenchSpec::Poly(_) => None,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        match &mut self {
            BenchSpec::Lq(s) => s.horizon = horizon,
            BenchSpec::Poly(s) => s.horizon = horizon,
        }
        self
    }

    pub fn with_initial_state(mut self, x0: Vector) -> Self {
        match &mut self {
            BenchSpec::Lq(s) => s.x0 = x0,
            BenchSpec::Poly(s) => s.x0 = x0,
        }
        self
    }

    pub fn build(&self, name: &str) -> Result<ControlProblem> {
        match self {
            BenchSpec::Lq(s) => make_lq_problem(name, s),
            BenchSpec::Poly(s) => make_poly_problem(name, s),
        }
    }
}

/// Scalar LQ problem with the control in both drift and diffusion:
/// `dx = (-0.2 x + u) dt + (0.3 + 0.5 u) dW`, `Q = R = G = 1`, `T = 1`,
/// `x0 = 1`, `U = [-10, 10]`.
pub fn lq_scalar() -> LqSpec {
    LqSpec::scalar(-0.2, 1.0, 0.3, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, ControlDomain::interval(-10.0, 10.0))
}

/// As [`lq_scalar`] with control-independent diffusion.
pub fn lq_drift() -> LqSpec {
    LqSpec::scalar(-0.2, 1.0, 0.3, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, ControlDomain::interval(-10.0, 10.0))
}

/// Coupled two-dimensional LQ problem with two noises and two controls.
pub fn lq_2d() -> LqSpec {
    LqSpec {
        a: DMatrix::from_row_slice(2, 2, &[-0.2, 0.1, 0.0, -0.3]),
        b: DMatrix::identity(2, 2),
        sigma0: DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.2])),
        c: vec![
            DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.1]),
        ],
        q: DMatrix::identity(2, 2),
        r: DMatrix::identity(2, 2),
        g: DMatrix::identity(2, 2),
        horizon: 1.0,
        x0: DVector::from_vec(vec![1.0, -0.5]),
        domain: ControlDomain::cube(2, -10.0, 10.0),
    }
}

/// `dx = (-x^3 + u x) dt + (0.4 + 0.1 x + 0.3 u) dW`, `f = (x^2 + u^2)/2`,
/// `h = x^2/2`, `U = [-1, 1]`, `x0 = 1`, `T = 1`; `alpha = 1`.
pub fn poly_cubic() -> PolyDriftSpec {
    PolyDriftSpec::scalar(
        1,
        AffineCoef::constant(1.0, 1),
        vec![
            AffineCoef::new(0.0, DVector::from_element(1, 1.0)),
            AffineCoef::constant(0.0, 1),
        ],
        0.4,
        0.1,
        0.3,
        1.0,
        1.0,
        ControlDomain::interval(-1.0, 1.0),
    )
}

pub fn lookup(name: &str) -> Result<BenchSpec> {
    match name {
        "lq-scalar" => Ok(BenchSpec::Lq(lq_scalar())),
        "lq-drift" => Ok(BenchSpec::Lq(lq_drift())),
        "lq-2d" => Ok(BenchSpec::Lq(lq_2d())),
        "poly-cubic" => Ok(BenchSpec::Poly(poly_cubic())),
        other => Err(Error::InvalidArgument(format!(
            "unknown problem `{other}` (registered: {})",
            REGISTERED.join(", ")
        ))),
    }
}

/// Assemble a registered problem under its own name.
pub fn registered_problem(name: &str) -> Result<ControlProblem> {
    lookup(name)?.build(name)
}

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::ControlDomain;
use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Coefficients of a controlled SDE and its cost, together with their state
/// (and optionally control) derivatives.
///
/// Implementations must be pure: every toolkit operation evaluates them from
/// many paths at once, possibly on several threads.
///
/// Shape conventions, with `n` the state dimension, `d` the noise dimension
/// and `k` the control dimension:
///
/// * `drift` is an `n`-vector, `drift_dx` is `n x n` with entry `(i, l)` equal
///   to `d b_i / d x_l`, and `drift_dxx[i]` is the Hessian of `b_i`.
/// * `diffusion` is `n x d`; column `j` is the coefficient of `dW_j`.
///   `diffusion_dx[j]` is the Jacobian of that column and
///   `diffusion_dxx[j][i]` the Hessian of the entry `(i, j)`.
/// * `drift_du` is `n x k`, `diffusion_du[j]` is `n x k`, `running_cost_du`
///   is a `k`-vector.
pub trait Coefficients: Send + Sync {
    fn drift(&self, t: f64, x: &Vector, u: &Vector) -> Vector;
    fn drift_dx(&self, t: f64, x: &Vector, u: &Vector) -> Matrix;
    fn drift_dxx(&self, t: f64, x: &Vector, u: &Vector) -> Vec<Matrix>;

    fn diffusion(&self, t: f64, x: &Vector, u: &Vector) -> Matrix;
    fn diffusion_dx(&self, t: f64, x: &Vector, u: &Vector) -> Vec<Matrix>;
    fn diffusion_dxx(&self, t: f64, x: &Vector, u: &Vector) -> Vec<Vec<Matrix>>;

    fn running_cost(&self, t: f64, x: &Vector, u: &Vector) -> f64;
    fn running_cost_dx(&self, t: f64, x: &Vector, u: &Vector) -> Vector;
    fn running_cost_dxx(&self, t: f64, x: &Vector, u: &Vector) -> Matrix;

    fn terminal_cost(&self, x: &Vector) -> f64;
    fn terminal_cost_dx(&self, x: &Vector) -> Vector;
    fn terminal_cost_dxx(&self, x: &Vector) -> Matrix;

    fn drift_du(&self, _t: f64, _x: &Vector, _u: &Vector) -> Option<Matrix> {
        None
    }
    fn diffusion_du(&self, _t: f64, _x: &Vector, _u: &Vector) -> Option<Vec<Matrix>> {
        None
    }
    fn running_cost_du(&self, _t: f64, _x: &Vector, _u: &Vector) -> Option<Vector> {
        None
    }
}

/// Declared polynomial growth exponents of the coefficient families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GrowthExponents {
    /// Exponent bounding `b`, `D_x b`, `D_x^2 b`.
    pub drift: u32,
    /// Exponent bounding `D_x^2 sigma`.
    pub diffusion: u32,
    /// Exponent bounding `f` and its state derivatives.
    pub running_cost: u32,
    /// Exponent bounding `h` and its derivatives.
    pub terminal_cost: u32,
}

/// A finite-horizon stochastic control problem.
#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    pub dim_state: usize,
    pub dim_noise: usize,
    pub horizon: f64,
    pub initial_state: Vector,
    pub coefficients: Arc<dyn Coefficients>,
    /// One-sided Lipschitz constant of the drift (may be negative).
    pub dissipativity_alpha: f64,
    /// Lipschitz constant of the diffusion in the state.
    pub diffusion_lipschitz: f64,
    pub growth_exponents: GrowthExponents,
    pub control_domain: ControlDomain,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("horizon", &self.horizon)
            .field("initial_state", &self.initial_state.as_slice())
            .field("dissipativity_alpha", &self.dissipativity_alpha)
            .field("diffusion_lipschitz", &self.diffusion_lipschitz)
            .field("growth_exponents", &self.growth_exponents)
            .field("control_domain", &self.control_domain)
            .finish()
    }
}

impl ControlProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        horizon: f64,
        initial_state: Vector,
        coefficients: Arc<dyn Coefficients>,
        dissipativity_alpha: f64,
        diffusion_lipschitz: f64,
        growth_exponents: GrowthExponents,
        control_domain: ControlDomain,
    ) -> Result<Self> {
        if dim_state == 0 || dim_noise == 0 {
            return Err(Error::InvalidArgument(
                "state and noise dimensions must be positive".into(),
            ));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if initial_state.len() != dim_state {
            return Err(Error::DimensionMismatch(format!(
                "initial state has length {}, expected {dim_state}",
                initial_state.len()
            )));
        }
        if diffusion_lipschitz < 0.0 {
            return Err(Error::InvalidArgument(
                "diffusion Lipschitz constant must be nonnegative".into(),
            ));
        }
        control_domain.validate()?;
        Ok(Self {
            name: name.into(),
            dim_state,
            dim_noise,
            horizon,
            initial_state,
            coefficients,
            dissipativity_alpha,
            diffusion_lipschitz,
            growth_exponents,
            control_domain,
        })
    }

    pub fn dim_control(&self) -> usize {
        self.control_domain.dim()
    }

    /// Largest step for which the implicit drift substep is a contraction.
    pub fn max_implicit_step(&self) -> f64 {
        if self.dissipativity_alpha > 0.0 {
            1.0 / self.dissipativity_alpha
        } else {
            f64::INFINITY
        }
    }

    pub fn check_implicit_step(&self, h: f64) -> Result<()> {
        if h * self.dissipativity_alpha.max(0.0) < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "implicit step requires h * max(alpha, 0) < 1 (h = {h}, alpha = {})",
                self.dissipativity_alpha
            )))
        }
    }

    /// True when all three control-derivative callbacks answer at `x0`.
    pub fn has_control_derivatives(&self) -> bool {
        let x = &self.initial_state;
        let u = self.control_domain.reference_point();
        let c = &self.coefficients;
        c.drift_du(0.0, x, &u).is_some()
            && c.diffusion_du(0.0, x, &u).is_some()
            && c.running_cost_du(0.0, x, &u).is_some()
    }

    pub fn require_control_derivatives(&self) -> Result<()> {
        if self.has_control_derivatives() {
            Ok(())
        } else {
            Err(Error::MissingControlDerivatives)
        }
    }

    // Thin delegates so call sites read like the math.

    pub fn drift(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        self.coefficients.drift(t, x, u)
    }
    pub fn drift_dx(&self, t: f64, x: &Vector, u: &Vector) -> Matrix {
        self.coefficients.drift_dx(t, x, u)
    }
    pub fn drift_dxx(&self, t: f64, x: &Vector, u: &Vector) -> Vec<Matrix> {
        self.coefficients.drift_dxx(t, x, u)
    }
    pub fn diffusion(&self, t: f64, x: &Vector, u: &Vector) -> Matrix {
        self.coefficients.diffusion(t, x, u)
    }
    pub fn diffusion_dx(&self, t: f64, x: &Vector, u: &Vector) -> Vec<Matrix> {
        self.coefficients.diffusion_dx(t, x, u)
    }
    pub fn diffusion_dxx(&self, t: f64, x: &Vector, u: &Vector) -> Vec<Vec<Matrix>> {
        self.coefficients.diffusion_dxx(t, x, u)
    }
    pub fn running_cost(&self, t: f64, x: &Vector, u: &Vector) -> f64 {
        self.coefficients.running_cost(t, x, u)
    }
    pub fn running_cost_dx(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        self.coefficients.running_cost_dx(t, x, u)
    }
    pub fn running_cost_dxx(&self, t: f64, x: &Vector, u: &Vector) -> Matrix {
        self.coefficients.running_cost_dxx(t, x, u)
    }
    pub fn terminal_cost(&self, x: &Vector) -> f64 {
        self.coefficients.terminal_cost(x)
    }
    pub fn terminal_cost_dx(&self, x: &Vector) -> Vector {
        self.coefficients.terminal_cost_dx(x)
    }
    pub fn terminal_cost_dxx(&self, x: &Vector) -> Matrix {
        self.coefficients.terminal_cost_dxx(x)
    }
}

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::{
    Coefficients, ControlDomain, ControlProblem, GrowthExponents, Matrix, Vector,
};

/// Scalar coefficient `(t, x, u) -> value`.
pub type ScalarFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Scalar terminal coefficient `x -> value`.
pub type TerminalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

fn zero() -> ScalarFn {
    Arc::new(|_, _, _| 0.0)
}

fn zero_terminal() -> TerminalFn {
    Arc::new(|_| 0.0)
}

/// A one-dimensional problem (`n = d = k = 1`) assembled from closures.
///
/// Every coefficient defaults to zero, with zero derivatives. Setting a
/// coefficient without its control derivative clears that derivative.
#[derive(Clone)]
pub struct ScalarModel {
    drift: [ScalarFn; 3],
    drift_du: Option<ScalarFn>,
    diffusion: [ScalarFn; 3],
    diffusion_du: Option<ScalarFn>,
    running: [ScalarFn; 3],
    running_du: Option<ScalarFn>,
    terminal: [TerminalFn; 3],
}

impl Default for ScalarModel {
    fn default() -> Self {
        Self {
            drift: [zero(), zero(), zero()],
            drift_du: Some(zero()),
            diffusion: [zero(), zero(), zero()],
            diffusion_du: Some(zero()),
            running: [zero(), zero(), zero()],
            running_du: Some(zero()),
            terminal: [zero_terminal(), zero_terminal(), zero_terminal()],
        }
    }
}

impl ScalarModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// `b`, `b_x`, `b_xx`.
    pub fn drift(
        mut self,
        b: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        bx: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        bxx: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.drift = [Arc::new(b), Arc::new(bx), Arc::new(bxx)];
        self.drift_du = None;
        self
    }

    pub fn drift_du(mut self, bu: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift_du = Some(Arc::new(bu));
        self
    }

    pub fn diffusion(
        mut self,
        s: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        sx: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        sxx: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = [Arc::new(s), Arc::new(sx), Arc::new(sxx)];
        self.diffusion_du = None;
        self
    }

    pub fn diffusion_du(
        mut self,
        su: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.diffusion_du = Some(Arc::new(su));
        self
    }

    pub fn running_cost(
        mut self,
        f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        fx: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        fxx: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.running = [Arc::new(f), Arc::new(fx), Arc::new(fxx)];
        self.running_du = None;
        self
    }

    pub fn running_cost_du(
        mut self,
        fu: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.running_du = Some(Arc::new(fu));
        self
    }

    pub fn terminal_cost(
        mut self,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        hx: impl Fn(f64) -> f64 + Send + Sync + 'static,
        hxx: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.terminal = [Arc::new(h), Arc::new(hx), Arc::new(hxx)];
        self
    }

    /// Wrap into a problem with initial state `x0`.
    #[allow(clippy::too_many_arguments)]
    pub fn into_problem(
        self,
        name: &str,
        horizon: f64,
        x0: f64,
        alpha: f64,
        diffusion_lipschitz: f64,
        growth: GrowthExponents,
        domain: ControlDomain,
    ) -> Result<ControlProblem> {
        ControlProblem::new(
            name,
            1,
            1,
            horizon,
            DVector::from_element(1, x0),
            Arc::new(self),
            alpha,
            diffusion_lipschitz,
            growth,
            domain,
        )
    }
}

fn s(v: f64) -> Vector {
    DVector::from_element(1, v)
}

fn m(v: f64) -> Matrix {
    DMatrix::from_element(1, 1, v)
}

impl Coefficients for ScalarModel {
    fn drift(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        s(self.drift[0](t, x[0], u[0]))
    }
    fn drift_dx(&self, t: f64, x: &Vector, u: &Vector) -> Matrix {
        m(self.drift[1](t, x[0], u[0]))
    }
    fn drift_dxx(&self, t: f64, x: &Vector, u: &Vector) -> Vec<Matrix> {
        vec![m(self.drift[2](t, x[0], u[0]))]
    }
    fn diffusion(&self, t: f64, x: &Vector, u: &Vector) -> Matrix {
        m(self.diffusion[0](t, x[0], u[0]))
    }
    fn diffusion_dx(&self, t: f64, x: &Vector, u: &Vector) -> Vec<Matrix> {
        vec![m(self.diffusion[1](t, x[0], u[0]))]
    }
    fn diffusion_dxx(&self, t: f64, x: &Vector, u: &Vector) -> Vec<Vec<Matrix>> {
        vec![vec![m(self.diffusion[2](t, x[0], u[0]))]]
    }
    fn running_cost(&self, t: f64, x: &Vector, u: &Vector) -> f64 {
        self.running[0](t, x[0], u[0])
    }
    fn running_cost_dx(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        s(self.running[1](t, x[0], u[0]))
    }
    fn running_cost_dxx(&self, t: f64, x: &Vector, u: &Vector) -> Matrix {
        m(self.running[2](t, x[0], u[0]))
    }
    fn terminal_cost(&self, x: &Vector) -> f64 {
        self.terminal[0](x[0])
    }
    fn terminal_cost_dx(&self, x: &Vector) -> Vector {
        s(self.terminal[1](x[0]))
    }
    fn terminal_cost_dxx(&self, x: &Vector) -> Matrix {
        m(self.terminal[2](x[0]))
    }
    fn drift_du(&self, t: f64, x: &Vector, u: &Vector) -> Option<Matrix> {
        self.drift_du.as_ref().map(|f| m(f(t, x[0], u[0])))
    }
    fn diffusion_du(&self, t: f64, x: &Vector, u: &Vector) -> Option<Vec<Matrix>> {
        self.diffusion_du.as_ref().map(|f| vec![m(f(t, x[0], u[0]))])
    }
    fn running_cost_du(&self, t: f64, x: &Vector, u: &Vector) -> Option<Vector> {
        self.running_du.as_ref().map(|f| s(f(t, x[0], u[0])))
    }
}

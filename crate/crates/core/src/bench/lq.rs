use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forward::ControlProcess;
use crate::model::{
    Coefficients, ControlDomain, ControlProblem, GrowthExponents, Matrix, TimeGrid, Vector,
};

/// Linear-quadratic problem
/// `dx = (A x + B u) dt + (S0 + sum_l C_l u_l) dW`,
/// `J = E[ int 1/2 (x'Qx + u'Ru) dt + 1/2 x(T)'G x(T) ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqSpec {
    pub a: Matrix,
    pub b: Matrix,
    pub sigma0: Matrix,
    /// One `n x d` matrix per control coordinate.
    pub c: Vec<Matrix>,
    pub q: Matrix,
    pub r: Matrix,
    pub g: Matrix,
    pub horizon: f64,
    pub x0: Vector,
    pub domain: ControlDomain,
}

impl LqSpec {
    /// Scalar problem `dx = (a x + b u) dt + (s0 + c u) dW`.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        a: f64,
        b: f64,
        s0: f64,
        c: f64,
        q: f64,
        r: f64,
        g: f64,
        horizon: f64,
        x0: f64,
        domain: ControlDomain,
    ) -> Self {
        let m = |v| DMatrix::from_element(1, 1, v);
        Self {
            a: m(a),
            b: m(b),
            sigma0: m(s0),
            c: vec![m(c)],
            q: m(q),
            r: m(r),
            g: m(g),
            horizon,
            x0: DVector::from_element(1, x0),
            domain,
        }
    }

    pub fn dim_state(&self) -> usize {
        self.a.nrows()
    }
    pub fn dim_noise(&self) -> usize {
        self.sigma0.ncols()
    }
    pub fn dim_control(&self) -> usize {
        self.b.ncols()
    }

    /// Shapes, symmetry and `R > 0`. Indefinite `Q` or `G` are allowed here
    /// so that non-convex variants can still be assembled into problems.
    pub fn check_structure(&self) -> Result<()> {
        let (n, d, k) = (self.dim_state(), self.dim_noise(), self.dim_control());
        let shape_ok = self.a.shape() == (n, n)
            && self.b.nrows() == n
            && self.sigma0.nrows() == n
            && self.c.len() == k
            && self.c.iter().all(|c| c.shape() == (n, d))
            && self.q.shape() == (n, n)
            && self.r.shape() == (k, k)
            && self.g.shape() == (n, n)
            && self.x0.len() == n
            && self.domain.dim() == k;
        if !shape_ok {
            return Err(Error::DimensionMismatch("inconsistent LQ matrix shapes".into()));
        }
        let symmetric = |m: &Matrix| (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
        if !symmetric(&self.q) || !symmetric(&self.r) || !symmetric(&self.g) {
            return Err(Error::InvalidArgument("Q, R and G must be symmetric".into()));
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument("R must be positive definite".into()));
        }
        Ok(())
    }

    /// Full invariants: [`Self::check_structure`] plus `Q, G >= 0`.
    pub fn validate(&self) -> Result<()> {
        self.check_structure()?;
        let min_eig = |m: &Matrix| m.clone().symmetric_eigen().eigenvalues.min();
        if min_eig(&self.q) < -1e-12 || min_eig(&self.g) < -1e-12 {
            return Err(Error::InvalidArgument("Q and G must be positive semidefinite".into()));
        }
        Ok(())
    }

    /// `sigma(u) = S0 + sum_l C_l u_l`.
    pub fn diffusion_at(&self, u: &Vector) -> Matrix {
        self.c
            .iter()
            .zip(u.iter())
            .fold(self.sigma0.clone(), |acc, (c, ul)| acc + c * *ul)
    }

    /// One-sided Lipschitz constant: the top eigenvalue of `(A + A')/2`.
    pub fn alpha(&self) -> f64 {
        let sym = (&self.a + self.a.transpose()) * 0.5;
        sym.symmetric_eigen().eigenvalues.max()
    }
}

struct LqCoefficients(LqSpec);

impl Coefficients for LqCoefficients {
    fn drift(&self, _t: f64, x: &Vector, u: &Vector) -> Vector {
        &self.0.a * x + &self.0.b * u
    }
    fn drift_dx(&self, _t: f64, _x: &Vector, _u: &Vector) -> Matrix {
        self.0.a.clone()
    }
    fn drift_dxx(&self, _t: f64, x: &Vector, _u: &Vector) -> Vec<Matrix> {
        let n = x.len();
        vec![DMatrix::zeros(n, n); n]
    }
    fn diffusion(&self, _t: f64, _x: &Vector, u: &Vector) -> Matrix {
        self.0.diffusion_at(u)
    }
    fn diffusion_dx(&self, _t: f64, x: &Vector, _u: &Vector) -> Vec<Matrix> {
        let n = x.len();
        vec![DMatrix::zeros(n, n); self.0.dim_noise()]
    }
    fn diffusion_dxx(&self, _t: f64, x: &Vector, _u: &Vector) -> Vec<Vec<Matrix>> {
        let n = x.len();
        vec![vec![DMatrix::zeros(n, n); n]; self.0.dim_noise()]
    }
    fn running_cost(&self, _t: f64, x: &Vector, u: &Vector) -> f64 {
        0.5 * ((&self.0.q * x).dot(x) + (&self.0.r * u).dot(u))
    }
    fn running_cost_dx(&self, _t: f64, x: &Vector, _u: &Vector) -> Vector {
        &self.0.q * x
    }
    fn running_cost_dxx(&self, _t: f64, _x: &Vector, _u: &Vector) -> Matrix {
        self.0.q.clone()
    }
    fn terminal_cost(&self, x: &Vector) -> f64 {
        0.5 * (&self.0.g * x).dot(x)
    }
    fn terminal_cost_dx(&self, x: &Vector) -> Vector {
        &self.0.g * x
    }
    fn terminal_cost_dxx(&self, _x: &Vector) -> Matrix {
        self.0.g.clone()
    }
    fn drift_du(&self, _t: f64, _x: &Vector, _u: &Vector) -> Option<Matrix> {
        Some(self.0.b.clone())
    }
    fn diffusion_du(&self, _t: f64, _x: &Vector, _u: &Vector) -> Option<Vec<Matrix>> {
        let (n, d, k) = (self.0.dim_state(), self.0.dim_noise(), self.0.dim_control());
        Some(
            (0..d)
                .map(|j| DMatrix::from_fn(n, k, |i, l| self.0.c[l][(i, j)]))
                .collect(),
        )
    }
    fn running_cost_du(&self, _t: f64, _x: &Vector, u: &Vector) -> Option<Vector> {
        Some(&self.0.r * u)
    }
}

pub fn make_lq_problem(name: &str, spec: &LqSpec) -> Result<ControlProblem> {
    spec.check_structure()?;
    ControlProblem::new(
        name,
        spec.dim_state(),
        spec.dim_noise(),
        spec.horizon,
        spec.x0.clone(),
        Arc::new(LqCoefficients(spec.clone())),
        spec.alpha(),
        0.0,
        GrowthExponents {
            drift: 1,
            diffusion: 0,
            running_cost: 2,
            terminal_cost: 2,
        },
        spec.domain.clone(),
    )
}

/// Value function `V(t, x) = 1/2 x'S x + phi'x + psi` and optimal feedback
/// `u = -(gain x + offset)` on the nodes of a grid.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub s: Vec<Matrix>,
    pub phi: Vec<Vector>,
    pub psi: Vec<f64>,
    pub gain: Vec<Matrix>,
    pub offset: Vec<Vector>,
}

impl RiccatiSolution {
    pub fn value(&self, node: usize, x: &Vector) -> f64 {
        0.5 * (&self.s[node] * x).dot(x) + self.phi[node].dot(x) + self.psi[node]
    }

    pub fn optimal_control_at(&self, node: usize, x: &Vector) -> Vector {
        -(&self.gain[node] * x + &self.offset[node])
    }

    /// First adjoint along the optimum: `p = -(S x + phi)`.
    pub fn adjoint_p(&self, node: usize, x: &Vector) -> Vector {
        -(&self.s[node] * x + &self.phi[node])
    }

    /// `q_j = -S sigma_j(u)`, as the columns of the returned `n x d` matrix.
    pub fn adjoint_q(&self, spec: &LqSpec, node: usize, u: &Vector) -> Matrix {
        -(&self.s[node] * spec.diffusion_at(u))
    }

    /// Optimal feedback as a control process on `grid` (the grid the
    /// solution was computed for), projected onto the control domain.
    pub fn feedback(&self, domain: &ControlDomain) -> ControlProcess {
        let sol = self.clone();
        let domain = domain.clone();
        let grid = self.grid;
        let dim = self.offset[0].len();
        ControlProcess::feedback(
            grid,
            dim,
            Arc::new(move |t, x: &Vector| {
                let node = (t / grid.step()).round() as usize;
                let u = sol.optimal_control_at(node.min(grid.num_steps() - 1), x);
                domain.project(&u).unwrap_or(u)
            }),
        )
    }
}

#[derive(Clone)]
struct RiccatiState {
    s: Matrix,
    phi: Vector,
    psi: f64,
}

impl RiccatiState {
    fn axpy(&self, h: f64, d: &RiccatiState) -> RiccatiState {
        RiccatiState {
            s: &self.s + &d.s * h,
            phi: &self.phi + &d.phi * h,
            psi: self.psi + d.psi * h,
        }
    }
}

/// Pieces of the minimisation in the HJB equation at a given `(S, phi)`:
/// `R~ = R + M(S)` and the linear term `B'phi + m(S)`.
fn control_terms(spec: &LqSpec, s: &Matrix, phi: &Vector) -> Result<(Matrix, Vector)> {
    let k = spec.dim_control();
    let mut r_tilde = spec.r.clone();
    let mut lin = spec.b.transpose() * phi;
    for l in 0..k {
        lin[l] += (spec.c[l].transpose() * s * &spec.sigma0).trace();
        for l2 in 0..k {
            r_tilde[(l, l2)] += (spec.c[l].transpose() * s * &spec.c[l2]).trace();
        }
    }
    let inv = r_tilde
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("R + C'SC lost positive definiteness".into()))?
        .inverse();
    Ok((inv, lin))
}

/// Derivative in reversed time `tau = T - t`.
fn riccati_rhs(spec: &LqSpec, y: &RiccatiState) -> Result<RiccatiState> {
    let (r_inv, lin) = control_terms(spec, &y.s, &y.phi)?;
    let sb = &y.s * &spec.b;
    let s = spec.a.transpose() * &y.s + &y.s * &spec.a + &spec.q
        - &sb * &r_inv * sb.transpose();
    let phi = spec.a.transpose() * &y.phi - &sb * (&r_inv * &lin);
    let psi = 0.5 * (spec.sigma0.transpose() * &y.s * &spec.sigma0).trace()
        - 0.5 * lin.dot(&(&r_inv * &lin));
    Ok(RiccatiState {
        s: (&s + s.transpose()) * 0.5,
        phi,
        psi,
    })
}

/// Backward RK4 with `substeps` steps per grid interval; values at nodes.
fn integrate_riccati(spec: &LqSpec, grid: &TimeGrid, substeps: usize) -> Result<Vec<RiccatiState>> {
    let n = spec.dim_state();
    let h = grid.step() / substeps as f64;
    let mut y = RiccatiState {
        s: spec.g.clone(),
        phi: DVector::zeros(n),
        psi: 0.0,
    };
    let mut out = vec![y.clone(); grid.num_steps() + 1];
    for node in (0..grid.num_steps()).rev() {
        for _ in 0..substeps {
            let k1 = riccati_rhs(spec, &y)?;
            let k2 = riccati_rhs(spec, &y.axpy(0.5 * h, &k1))?;
            let k3 = riccati_rhs(spec, &y.axpy(0.5 * h, &k2))?;
            let k4 = riccati_rhs(spec, &y.axpy(h, &k3))?;
            y = RiccatiState {
                s: &y.s + (&k1.s + &k2.s * 2.0 + &k3.s * 2.0 + &k4.s) * (h / 6.0),
                phi: &y.phi + (&k1.phi + &k2.phi * 2.0 + &k3.phi * 2.0 + &k4.phi) * (h / 6.0),
                psi: y.psi + (k1.psi + 2.0 * k2.psi + 2.0 * k3.psi + k4.psi) * (h / 6.0),
            };
        }
        out[node] = y.clone();
    }
    Ok(out)
}

const RICCATI_SUBSTEPS: usize = 8;

/// Solve the generalized Riccati system for `spec` on the nodes of `grid`.
///
/// Integrates at `8x` the grid resolution and compares with `16x`; a change
/// above `1e-6` is reported as [`Error::Stiffness`].
pub fn riccati_solve(spec: &LqSpec, grid: &TimeGrid) -> Result<RiccatiSolution> {
    spec.validate()?;
    if (grid.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::InvalidArgument("grid horizon differs from the LQ horizon".into()));
    }
    let coarse = integrate_riccati(spec, grid, RICCATI_SUBSTEPS)?;
    let fine = integrate_riccati(spec, grid, 2 * RICCATI_SUBSTEPS)?;
    let max_change = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (&a.s - &b.s).amax())
        .fold(0.0, f64::max);
    if !(max_change <= 1e-6) {
        return Err(Error::Stiffness { max_change });
    }
    let mut gain = Vec::with_capacity(fine.len());
    let mut offset = Vec::with_capacity(fine.len());
    for y in &fine {
        let (r_inv, lin) = control_terms(spec, &y.s, &y.phi)?;
        gain.push(&r_inv * spec.b.transpose() * &y.s);
        offset.push(&r_inv * lin);
    }
    Ok(RiccatiSolution {
        grid: *grid,
        s: fine.iter().map(|y| y.s.clone()).collect(),
        phi: fine.iter().map(|y| y.phi.clone()).collect(),
        psi: fine.iter().map(|y| y.psi).collect(),
        gain,
        offset,
    })
}

/// Second-order adjoint of the LQ problem: `P = -L` where
/// `-dL/dt = A'L + LA + Q`, `L(T) = G`. It does not involve the feedback, so
/// it differs from `-S` whenever `B != 0`.
pub fn second_adjoint_oracle(spec: &LqSpec, grid: &TimeGrid) -> Vec<Matrix> {
    let h = grid.step() / RICCATI_SUBSTEPS as f64;
    let rhs = |l: &Matrix| spec.a.transpose() * l + l * &spec.a + &spec.q;
    let mut l = spec.g.clone();
    let mut out = vec![-&l; grid.num_steps() + 1];
    for node in (0..grid.num_steps()).rev() {
        for _ in 0..RICCATI_SUBSTEPS {
            let k1 = rhs(&l);
            let k2 = rhs(&(&l + &k1 * (0.5 * h)));
            let k3 = rhs(&(&l + &k2 * (0.5 * h)));
            let k4 = rhs(&(&l + &k3 * h));
            l += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        out[node] = -&l;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_problem, ValidationOptions};

    fn unconstrained() -> ControlDomain {
        ControlDomain::interval(-100.0, 100.0)
    }

    #[test]
    fn zero_weights_give_zero_value() {
        let spec = LqSpec::scalar(-0.5, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, unconstrained());
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let sol = riccati_solve(&spec, &grid).unwrap();
        for i in 0..=50 {
            assert_eq!(sol.s[i][(0, 0)], 0.0);
            assert_eq!(sol.gain[i][(0, 0)], 0.0);
        }
        assert_eq!(sol.value(0, &spec.x0), 0.0);
    }

    #[test]
    fn diffusion_offset_enters_value_without_state_cost() {
        // Q = 0 but G > 0: psi picks up 1/2 tr(S0' S S0) integrated in time.
        let spec = LqSpec::scalar(0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0, unconstrained());
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let sol = riccati_solve(&spec, &grid).unwrap();
        // B = 0: S = G constant, psi(0) = 1/2 * G * T.
        assert!((sol.psi[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_riccati_matches_tanh() {
        let spec = LqSpec::scalar(0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, unconstrained());
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let sol = riccati_solve(&spec, &grid).unwrap();
        for (i, t) in grid.nodes().enumerate() {
            assert!((sol.s[i][(0, 0)] - (1.0 - t).tanh()).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_doubling_changes_s_below_1e8() {
        let spec = LqSpec::scalar(-0.2, 1.0, 0.3, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, unconstrained());
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let a = riccati_solve(&spec, &grid).unwrap();
        let b = riccati_solve(&spec, &grid.refined(2).unwrap()).unwrap();
        for i in 0..=40 {
            assert!((&a.s[i] - &b.s[2 * i]).amax() < 1e-8);
        }
    }

    #[test]
    fn control_dependent_diffusion_matches_scalar_ode_oracle() {
        // Independent oracle: scalar ODEs integrated by explicit midpoint on a
        // very fine grid.
        let (a, b, s0, c, q, r, g) = (-0.2, 1.0, 0.3, 0.5, 1.0, 1.0, 1.0);
        let spec = LqSpec::scalar(a, b, s0, c, q, r, g, 1.0, 1.0, unconstrained());
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let sol = riccati_solve(&spec, &grid).unwrap();
        let rhs = |s: f64, phi: f64| {
            let rt = r + c * c * s;
            let lin = b * phi + c * s * s0;
            (
                2.0 * a * s + q - (s * b).powi(2) / rt,
                a * phi - s * b * lin / rt,
                0.5 * s0 * s0 * s - 0.5 * lin * lin / rt,
            )
        };
        let steps = 200_000;
        let h = 1.0 / steps as f64;
        let (mut s, mut phi, mut psi) = (g, 0.0, 0.0);
        for _ in 0..steps {
            let (ds, dp, _) = rhs(s, phi);
            let (ds2, dp2, dq2) = rhs(s + 0.5 * h * ds, phi + 0.5 * h * dp);
            s += h * ds2;
            phi += h * dp2;
            psi += h * dq2;
        }
        assert!((sol.s[0][(0, 0)] - s).abs() < 1e-8);
        assert!((sol.phi[0][0] - phi).abs() < 1e-8);
        assert!((sol.psi[0] - psi).abs() < 1e-8);
    }

    #[test]
    fn lyapunov_oracle_differs_from_riccati_when_b_nonzero() {
        let spec = LqSpec::scalar(-0.2, 1.0, 0.3, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, unconstrained());
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let p = second_adjoint_oracle(&spec, &grid);
        let sol = riccati_solve(&spec, &grid).unwrap();
        // Closed form: L(t) = (G + Q/(2a)) e^{2a(T-t)} - Q/(2a).
        let a = -0.2;
        for (i, t) in grid.nodes().enumerate() {
            let l = (1.0 + 1.0 / (2.0 * a)) * (2.0 * a * (1.0 - t)).exp() - 1.0 / (2.0 * a);
            assert!((p[i][(0, 0)] + l).abs() < 1e-10);
        }
        assert!((p[0][(0, 0)] + sol.s[0][(0, 0)]).abs() > 0.1);
    }

    #[test]
    fn assembled_lq_problem_passes_validation() {
        let spec = LqSpec {
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
            domain: ControlDomain::cube(2, -5.0, 5.0),
        };
        let prob = make_lq_problem("lq", &spec).unwrap();
        let report = validate_problem(
            &prob,
            &ValidationOptions {
                samples: 300,
                ..ValidationOptions::default()
            },
        )
        .unwrap();
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let mut spec =
            LqSpec::scalar(0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, unconstrained());
        assert!(spec.validate().is_err());
        spec.r[(0, 0)] = 1.0;
        spec.g[(0, 0)] = -1.0;
        assert!(spec.validate().is_err());
    }
}

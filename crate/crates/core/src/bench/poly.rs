use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    Coefficients, ControlDomain, ControlProblem, GrowthExponents, Matrix, Vector,
};

/// Coefficient `c(u) = constant + <slope, u>`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoef {
    pub constant: f64,
    pub slope: Vector,
}

impl AffineCoef {
    pub fn constant(value: f64, dim_control: usize) -> Self {
        Self {
            constant: value,
            slope: DVector::zeros(dim_control),
        }
    }

    pub fn new(constant: f64, slope: Vector) -> Self {
        Self { constant, slope }
    }

    pub fn eval(&self, u: &Vector) -> f64 {
        self.constant + self.slope.dot(u)
    }
}

/// Coordinatewise odd-degree polynomial drift
/// `b_i(x, u) = -c_i(u) x_i^(2m+1) + sum_{j=1}^{2m} c_ij(u) x_i^j`
/// with affine diffusion `sigma_j = S0_j + Sx_j x + sum_l Su_l[:, j] u_l` and
/// quadratic costs `f = 1/2 (x'Qx + u'Ru)`, `h = 1/2 x'Gx`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyDriftSpec {
    pub m: u32,
    /// `c_i`, one per state coordinate.
    pub leading: Vec<AffineCoef>,
    /// `lower[i][j - 1] = c_ij` for `j = 1..=2m`.
    pub lower: Vec<Vec<AffineCoef>>,
    pub sigma0: Matrix,
    /// One `n x n` matrix per noise channel.
    pub sigma_x: Vec<Matrix>,
    /// One `n x d` matrix per control coordinate.
    pub sigma_u: Vec<Matrix>,
    pub q: Matrix,
    pub r: Matrix,
    pub g: Matrix,
    pub horizon: f64,
    pub x0: Vector,
    pub domain: ControlDomain,
}

impl PolyDriftSpec {
    /// Scalar problem `b = -lead x^(2m+1) + sum_j lower_j x^j`,
    /// `sigma = s0 + sx x + su u`.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        m: u32,
        leading: AffineCoef,
        lower: Vec<AffineCoef>,
        s0: f64,
        sx: f64,
        su: f64,
        horizon: f64,
        x0: f64,
        domain: ControlDomain,
    ) -> Self {
        let one = |v| DMatrix::from_element(1, 1, v);
        Self {
            m,
            leading: vec![leading],
            lower: vec![lower],
            sigma0: one(s0),
            sigma_x: vec![one(sx)],
            sigma_u: vec![one(su)],
            q: one(1.0),
            r: one(1.0),
            g: one(1.0),
            horizon,
            x0: DVector::from_element(1, x0),
            domain,
        }
    }

    fn dim_state(&self) -> usize {
        self.leading.len()
    }

    fn degree(&self) -> i32 {
        2 * self.m as i32 + 1
    }

    pub fn check(&self) -> Result<()> {
        let n = self.dim_state();
        let d = self.sigma0.ncols();
        let k = self.domain.dim();
        let two_m = 2 * self.m as usize;
        let coef_ok = |c: &AffineCoef| c.slope.len() == k;
        let ok = self.m >= 1
            && n > 0
            && self.lower.len() == n
            && self.lower.iter().all(|row| row.len() == two_m && row.iter().all(coef_ok))
            && self.leading.iter().all(coef_ok)
            && self.sigma0.nrows() == n
            && self.sigma_x.len() == d
            && self.sigma_x.iter().all(|s| s.shape() == (n, n))
            && self.sigma_u.len() == k
            && self.sigma_u.iter().all(|s| s.shape() == (n, d))
            && self.q.shape() == (n, n)
            && self.r.shape() == (k, k)
            && self.g.shape() == (n, n)
            && self.x0.len() == n;
        if !ok {
            return Err(Error::DimensionMismatch(
                "inconsistent polynomial drift specification".into(),
            ));
        }
        Ok(())
    }
}

/// Points whose convex hull is the domain (all points for a finite set).
/// Affine functions of `u` attain their extremes there.
fn extreme_points(domain: &ControlDomain) -> Vec<Vector> {
    match domain {
        ControlDomain::FiniteSet(points) | ControlDomain::ConvexHull(points) => points.clone(),
        ControlDomain::Box { lower, upper } => {
            let k = lower.len();
            (0..1usize << k)
                .map(|mask| {
                    DVector::from_fn(k, |i, _| {
                        if mask >> i & 1 == 1 {
                            upper[i]
                        } else {
                            lower[i]
                        }
                    })
                })
                .collect()
        }
    }
}

/// `sup` of `g` over `[-radius, radius]`: a uniform scan followed by
/// golden-section refinement around the best scan point.
fn sup_on_interval(g: &dyn Fn(f64) -> f64, radius: f64) -> f64 {
    const SCAN: usize = 4000;
    let xs: Vec<f64> = (0..=SCAN)
        .map(|i| -radius + 2.0 * radius * i as f64 / SCAN as f64)
        .collect();
    let (best, best_val) = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (i, g(x)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let mut lo = xs[best.saturating_sub(1)];
    let mut hi = xs[(best + 1).min(SCAN)];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if g(a) >= g(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    best_val.max(g(0.5 * (lo + hi)))
}

/// One-sided Lipschitz constant of the drift: the supremum of
/// `g(x) = d b_i / d x_i` over `x` and the extreme points of the domain.
///
/// For `|x| >= R >= 1` with `(2m+1) lambda R >= S + s`, where `S` bounds the
/// lower-order contribution, `g(x) <= -s`; the scan radius is chosen so that
/// this tail bound does not exceed the scanned supremum.
pub fn certified_alpha(spec: &PolyDriftSpec) -> Result<f64> {
    spec.check()?;
    let deg = spec.degree();
    let mut alpha = f64::NEG_INFINITY;
    for u in extreme_points(&spec.domain) {
        for (i, lead) in spec.leading.iter().enumerate() {
            let lambda = lead.eval(&u);
            if !(lambda > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "leading coefficient of coordinate {i} is {lambda} <= 0 at u = {:?}",
                    u.as_slice()
                )));
            }
            let a: Vec<f64> = spec.lower[i].iter().map(|c| c.eval(&u)).collect();
            let g = |x: f64| {
                -(deg as f64) * lambda * x.powi(deg - 1)
                    + a.iter()
                        .enumerate()
                        .map(|(j, aj)| (j + 1) as f64 * aj * x.powi(j as i32))
                        .sum::<f64>()
            };
            let bound: f64 = a.iter().enumerate().map(|(j, aj)| (j + 1) as f64 * aj.abs()).sum();
            let lead_rate = deg as f64 * lambda;
            let mut sup = sup_on_interval(&g, (bound / lead_rate).max(1.0));
            if sup < 0.0 {
                sup = sup_on_interval(&g, ((bound - sup) / lead_rate).max(1.0));
            }
            alpha = alpha.max(sup);
        }
    }
    Ok(alpha)
}

struct PolyCoefficients(PolyDriftSpec);

impl PolyCoefficients {
    fn lower_sum(&self, i: usize, x: f64, u: &Vector, deriv: u32) -> f64 {
        self.0.lower[i]
            .iter()
            .enumerate()
            .map(|(j0, c)| {
                let j = (j0 + 1) as i32;
                let coef = c.eval(u);
                match deriv {
                    0 => coef * x.powi(j),
                    1 => coef * j as f64 * x.powi(j - 1),
                    _ if j >= 2 => coef * (j * (j - 1)) as f64 * x.powi(j - 2),
                    _ => 0.0,
                }
            })
            .sum()
    }
}

impl Coefficients for PolyCoefficients {
    fn drift(&self, _t: f64, x: &Vector, u: &Vector) -> Vector {
        let deg = self.0.degree();
        DVector::from_fn(x.len(), |i, _| {
            -self.0.leading[i].eval(u) * x[i].powi(deg) + self.lower_sum(i, x[i], u, 0)
        })
    }
    fn drift_dx(&self, _t: f64, x: &Vector, u: &Vector) -> Matrix {
        let deg = self.0.degree();
        let diag = DVector::from_fn(x.len(), |i, _| {
            -self.0.leading[i].eval(u) * deg as f64 * x[i].powi(deg - 1)
                + self.lower_sum(i, x[i], u, 1)
        });
        DMatrix::from_diagonal(&diag)
    }
    fn drift_dxx(&self, _t: f64, x: &Vector, u: &Vector) -> Vec<Matrix> {
        let n = x.len();
        let deg = self.0.degree();
        (0..n)
            .map(|i| {
                let mut h = DMatrix::zeros(n, n);
                h[(i, i)] = -self.0.leading[i].eval(u) * (deg * (deg - 1)) as f64 * x[i].powi(deg - 2)
                    + self.lower_sum(i, x[i], u, 2);
                h
            })
            .collect()
    }
    fn diffusion(&self, _t: f64, x: &Vector, u: &Vector) -> Matrix {
        let mut s = self.0.sigma0.clone();
        for (j, sx) in self.0.sigma_x.iter().enumerate() {
            let col = sx * x;
            for i in 0..x.len() {
                s[(i, j)] += col[i];
            }
        }
        for (l, su) in self.0.sigma_u.iter().enumerate() {
            s += su * u[l];
        }
        s
    }
    fn diffusion_dx(&self, _t: f64, _x: &Vector, _u: &Vector) -> Vec<Matrix> {
        self.0.sigma_x.clone()
    }
    fn diffusion_dxx(&self, _t: f64, x: &Vector, _u: &Vector) -> Vec<Vec<Matrix>> {
        let n = x.len();
        vec![vec![DMatrix::zeros(n, n); n]; self.0.sigma_x.len()]
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
    fn drift_du(&self, _t: f64, x: &Vector, u: &Vector) -> Option<Matrix> {
        let deg = self.0.degree();
        Some(DMatrix::from_fn(x.len(), u.len(), |i, l| {
            -self.0.leading[i].slope[l] * x[i].powi(deg)
                + self.0.lower[i]
                    .iter()
                    .enumerate()
                    .map(|(j0, c)| c.slope[l] * x[i].powi(j0 as i32 + 1))
                    .sum::<f64>()
        }))
    }
    fn diffusion_du(&self, _t: f64, x: &Vector, u: &Vector) -> Option<Vec<Matrix>> {
        let d = self.0.sigma0.ncols();
        Some(
            (0..d)
                .map(|j| DMatrix::from_fn(x.len(), u.len(), |i, l| self.0.sigma_u[l][(i, j)]))
                .collect(),
        )
    }
    fn running_cost_du(&self, _t: f64, _x: &Vector, u: &Vector) -> Option<Vector> {
        Some(&self.0.r * u)
    }
}

pub fn make_poly_problem(name: &str, spec: &PolyDriftSpec) -> Result<ControlProblem> {
    let alpha = certified_alpha(spec)?;
    let lipschitz = spec
        .sigma_x
        .iter()
        .map(|s| s.clone().singular_values().max().powi(2))
        .sum::<f64>()
        .sqrt();
    ControlProblem::new(
        name,
        spec.dim_state(),
        spec.sigma0.ncols(),
        spec.horizon,
        spec.x0.clone(),
        Arc::new(PolyCoefficients(spec.clone())),
        alpha,
        lipschitz,
        GrowthExponents {
            drift: spec.degree() as u32,
            diffusion: 0,
            running_cost: 2,
            terminal_cost: 2,
        },
        spec.domain.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_problem, ValidationOptions};

    fn cubic(lower: Vec<AffineCoef>, domain: ControlDomain) -> PolyDriftSpec {
        PolyDriftSpec::scalar(
            1,
            AffineCoef::constant(1.0, 1),
            lower,
            0.3,
            0.0,
            0.0,
            1.0,
            1.0,
            domain,
        )
    }

    #[test]
    fn pure_cube_has_alpha_zero() {
        let spec = cubic(vec![AffineCoef::constant(0.0, 1); 2], ControlDomain::interval(-1.0, 1.0));
        assert_eq!(certified_alpha(&spec).unwrap(), 0.0);
    }

    #[test]
    fn linear_term_gives_alpha_one() {
        let spec = cubic(
            vec![AffineCoef::constant(1.0, 1), AffineCoef::constant(0.0, 1)],
            ControlDomain::interval(-1.0, 1.0),
        );
        assert_eq!(certified_alpha(&spec).unwrap(), 1.0);
    }

    #[test]
    fn alpha_is_tight_for_strongly_dissipative_drift() {
        // b = -x^3 - x: D_x b = -3x^2 - 1 <= -1.
        let spec = cubic(
            vec![AffineCoef::constant(-1.0, 1), AffineCoef::constant(0.0, 1)],
            ControlDomain::interval(-1.0, 1.0),
        );
        assert!((certified_alpha(&spec).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_matches_calculus_with_quadratic_term() {
        // b = -x^3 + 3x^2: D_x b = -3x^2 + 6x, maximal value 3 at x = 1.
        let spec = cubic(
            vec![AffineCoef::constant(0.0, 1), AffineCoef::constant(3.0, 1)],
            ControlDomain::interval(-1.0, 1.0),
        );
        assert!((certified_alpha(&spec).unwrap() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn nonpositive_leading_coefficient_is_rejected() {
        let mut spec = cubic(vec![AffineCoef::constant(0.0, 1); 2], ControlDomain::interval(-1.0, 1.0));
        spec.leading[0] = AffineCoef::new(0.5, DVector::from_element(1, 1.0));
        assert!(certified_alpha(&spec).is_err());
    }

    #[test]
    fn control_dependent_poly_problem_validates() {
        let spec = PolyDriftSpec::scalar(
            1,
            AffineCoef::new(1.0, DVector::from_element(1, 0.2)),
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
        );
        let prob = make_poly_problem("poly", &spec).unwrap();
        let report = validate_problem(
            &prob,
            &ValidationOptions {
                samples: 500,
                ..ValidationOptions::default()
            },
        )
        .unwrap();
        assert!(report.all_passed(), "{report}");
    }
}

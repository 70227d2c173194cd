use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::Vector;
use crate::error::{Error, Result};

/// The set of admissible control values.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlDomain {
    /// Explicit list of control points.
    FiniteSet(Vec<Vector>),
    /// Product of closed intervals.
    Box { lower: Vector, upper: Vector },
    /// Convex hull of a vertex list.
    ConvexHull(Vec<Vector>),
}

impl ControlDomain {
    pub fn interval(lower: f64, upper: f64) -> Self {
        ControlDomain::Box {
            lower: DVector::from_element(1, lower),
            upper: DVector::from_element(1, upper),
        }
    }

    pub fn cube(dim: usize, lower: f64, upper: f64) -> Self {
        ControlDomain::Box {
            lower: DVector::from_element(dim, lower),
            upper: DVector::from_element(dim, upper),
        }
    }

    pub fn finite_scalars(values: &[f64]) -> Self {
        ControlDomain::FiniteSet(
            values
                .iter()
                .map(|&v| DVector::from_element(1, v))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlDomain::FiniteSet(points) | ControlDomain::ConvexHull(points) => {
                points.first().map_or(0, |p| p.len())
            }
            ControlDomain::Box { lower, .. } => lower.len(),
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, ControlDomain::FiniteSet(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlDomain::FiniteSet(points) | ControlDomain::ConvexHull(points) => {
                let Some(first) = points.first() else {
                    return Err(Error::InvalidArgument("control domain is empty".into()));
                };
                if first.is_empty() {
                    return Err(Error::InvalidArgument(
                        "control points must have positive dimension".into(),
                    ));
                }
                if points.iter().any(|p| p.len() != first.len()) {
                    return Err(Error::DimensionMismatch(
                        "control points have differing dimensions".into(),
                    ));
                }
                if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                    return Err(Error::InvalidArgument("non-finite control point".into()));
                }
            }
            ControlDomain::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::DimensionMismatch(
                        "box bounds must be nonempty and of equal length".into(),
                    ));
                }
                for (i, (lo, hi)) in lower.iter().zip(upper.iter()).enumerate() {
                    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                        return Err(Error::InvalidArgument(format!(
                            "box coordinate {i} has invalid bounds [{lo}, {hi}]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// A deterministic point of the domain (box centre, first point, or vertex
    /// centroid).
    pub fn reference_point(&self) -> Vector {
        match self {
            ControlDomain::FiniteSet(points) => points[0].clone(),
            ControlDomain::Box { lower, upper } => (lower + upper) * 0.5,
            ControlDomain::ConvexHull(points) => {
                let sum = points
                    .iter()
                    .fold(DVector::zeros(points[0].len()), |acc, p| acc + p);
                sum / points.len() as f64
            }
        }
    }

    pub fn contains(&self, u: &Vector, tol: f64) -> bool {
        if u.len() != self.dim() {
            return false;
        }
        match self {
            ControlDomain::FiniteSet(points) => points.iter().any(|p| (p - u).norm() <= tol),
            ControlDomain::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol),
            ControlDomain::ConvexHull(_) => match self.project(u) {
                Ok(p) => (p - u).norm() <= tol,
                Err(_) => false,
            },
        }
    }

    /// Euclidean projection onto a convex domain.
    pub fn project(&self, u: &Vector) -> Result<Vector> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "control has length {}, domain dimension is {}",
                u.len(),
                self.dim()
            )));
        }
        match self {
            ControlDomain::FiniteSet(_) => Err(Error::NonConvexDomain),
            ControlDomain::Box { lower, upper } => Ok(DVector::from_iterator(
                u.len(),
                u.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
            )),
            ControlDomain::ConvexHull(vertices) => {
                let shifted: Vec<Vector> = vertices.iter().map(|v| v - u).collect();
                Ok(u + min_norm_point(&shifted))
            }
        }
    }

    /// Deterministic finite sample of the domain: the set itself, a tensor
    /// grid with `points_per_axis` nodes per box coordinate, or the vertices
    /// plus a barycentric lattice of the hull.
    pub fn sample_grid(&self, points_per_axis: usize) -> Vec<Vector> {
        let m = points_per_axis.max(1);
        match self {
            ControlDomain::FiniteSet(points) => points.clone(),
            ControlDomain::Box { lower, upper } => {
                let dim = lower.len();
                let axes: Vec<Vec<f64>> = (0..dim)
                    .map(|i| linspace(lower[i], upper[i], m))
                    .collect();
                let total = axes.iter().map(Vec::len).product::<usize>();
                (0..total)
                    .map(|mut flat| {
                        DVector::from_iterator(
                            dim,
                            axes.iter().map(|axis| {
                                let v = axis[flat % axis.len()];
                                flat /= axis.len();
                                v
                            }),
                        )
                    })
                    .collect()
            }
            ControlDomain::ConvexHull(vertices) => {
                let mut out = vertices.clone();
                if m > 1 {
                    for a in 0..vertices.len() {
                        for b in (a + 1)..vertices.len() {
                            for s in 1..m {
                                let w = s as f64 / m as f64;
                                out.push(&vertices[a] * (1.0 - w) + &vertices[b] * w);
                            }
                        }
                    }
                }
                out.push(self.reference_point());
                out
            }
        }
    }

    /// Random point of the domain.
    pub fn sample_random<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            ControlDomain::FiniteSet(points) => points[rng.random_range(0..points.len())].clone(),
            ControlDomain::Box { lower, upper } => DVector::from_iterator(
                lower.len(),
                lower
                    .iter()
                    .zip(upper.iter())
                    .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()),
            ),
            ControlDomain::ConvexHull(vertices) => {
                // Normalised exponentials give a uniform point on the simplex.
                let weights: Vec<f64> = vertices
                    .iter()
                    .map(|_| -(1.0 - rng.random::<f64>()).ln())
                    .collect();
                let total: f64 = weights.iter().sum();
                vertices
                    .iter()
                    .zip(weights.iter())
                    .fold(DVector::zeros(vertices[0].len()), |acc, (v, w)| {
                        acc + v * (w / total)
                    })
            }
        }
    }
}

fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 || lo == hi {
        return vec![0.5 * (lo + hi)];
    }
    (0..m)
        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
        .collect()
}

/// Minimum-norm point of the convex hull of `points` (Wolfe's algorithm).
fn min_norm_point(points: &[Vector]) -> Vector {
    const TOL: f64 = 1e-12;
    let scale = points
        .iter()
        .map(|p| p.norm_squared())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let start = (0..points.len())
        .min_by(|&a, &b| points[a].norm_squared().total_cmp(&points[b].norm_squared()))
        .expect("nonempty vertex list");
    let mut active = vec![start];
    let mut weights = vec![1.0];
    let mut x = points[start].clone();

    for _ in 0..(100 * points.len() + 100) {
        let (j, min_dot) = (0..points.len())
            .map(|i| (i, x.dot(&points[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty vertex list");
        if min_dot >= x.norm_squared() - TOL * scale || active.contains(&j) {
            break;
        }
        active.push(j);
        weights.push(0.0);

        loop {
            let mu = affine_min_norm(points, &active);
            if mu.iter().all(|&m| m > TOL) {
                weights = mu;
                break;
            }
            let mut theta = 1.0_f64;
            for (k, &m) in mu.iter().enumerate() {
                if m <= TOL {
                    let denom = weights[k] - m;
                    if denom > 0.0 {
                        theta = theta.min(weights[k] / denom);
                    }
                }
            }
            for (w, m) in weights.iter_mut().zip(mu.iter()) {
                *w += theta * (m - *w);
            }
            let mut k = 0;
            while k < active.len() {
                if weights[k] <= TOL {
                    active.remove(k);
                    weights.remove(k);
                } else {
                    k += 1;
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            if active.len() <= 1 {
                break;
            }
        }
        x = combine(points, &active, &weights);
    }
    x
}

fn combine(points: &[Vector], active: &[usize], weights: &[f64]) -> Vector {
    active
        .iter()
        .zip(weights.iter())
        .fold(DVector::zeros(points[0].len()), |acc, (&i, &w)| {
            acc + &points[i] * w
        })
}

/// Weights `mu` (summing to one) of the minimum-norm point of the affine hull
/// of the active points.
fn affine_min_norm(points: &[Vector], active: &[usize]) -> Vec<f64> {
    let k = active.len();
    let mut system = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    for a in 0..k {
        for b in 0..k {
            system[(a, b)] = points[active[a]].dot(&points[active[b]]);
        }
        system[(a, k)] = 1.0;
        system[(k, a)] = 1.0;
    }
    rhs[k] = 1.0;
    let solution = system
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| {
            system
                .svd(true, true)
                .solve(&rhs, 1e-14)
                .expect("SVD solve with both factors computed")
        });
    solution.rows(0, k).iter().copied().collect()
}

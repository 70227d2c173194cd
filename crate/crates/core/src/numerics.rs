//! Small numerical helpers shared by the modules: Monte Carlo estimates,
//! deterministic reductions, trace contractions and log-log slope fits.

use nalgebra::DVector;

use crate::model::{Matrix, Vector};

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Sample mean and standard error, summed in index order.
    pub fn from_samples(samples: &[f64]) -> Self {
        let m = samples.len();
        if m == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = ordered_sum(samples.iter().copied()) / m as f64;
        if m == 1 {
            return Self { mean, stderr: 0.0 };
        }
        let var = ordered_sum(samples.iter().map(|v| (v - mean) * (v - mean))) / (m - 1) as f64;
        Self {
            mean,
            stderr: (var / m as f64).sqrt(),
        }
    }

    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
        }
    }
}

/// Streaming mean/variance accumulator. Partial accumulators merged in a
/// fixed order give reproducible results.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * (self.count as f64 * other.count as f64) / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn estimate(&self) -> Estimate {
        match self.count {
            0 => Estimate {
                mean: f64::NAN,
                stderr: f64::NAN,
            },
            1 => Estimate::exact(self.mean),
            c => Estimate {
                mean: self.mean,
                stderr: (self.m2.max(0.0) / ((c - 1) as f64 * c as f64)).sqrt(),
            },
        }
    }
}

/// Neumaier-compensated sum in iteration order.
pub fn ordered_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `(y^T H_i y)_i`, i.e. `Tr[H_i y y^T]` for each Hessian.
pub fn quadratic_forms(hessians: &[Matrix], y: &Vector) -> Vector {
    DVector::from_iterator(hessians.len(), hessians.iter().map(|h| (h * y).dot(y)))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Column `j` of a matrix as an owned vector.
pub fn column(m: &Matrix, j: usize) -> Vector {
    m.column(j).into_owned()
}

/// Result of a weighted least-squares fit of `log(value)` against `log(eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fit `log y = intercept + slope * log x` with weights `(y / stderr)^2`
/// (inverse variance of `log y`). Points with zero stderr get unit-free
/// equal weights.
pub fn loglog_fit(xs: &[f64], ys: &[f64], stderrs: &[f64]) -> SlopeFit {
    let weights: Vec<f64> = ys
        .iter()
        .zip(stderrs.iter())
        .map(|(y, s)| {
            if *s > 0.0 && s.is_finite() {
                (y / s).powi(2)
            } else {
                1.0
            }
        })
        .collect();
    // Mixed exact and noisy points: fall back to equal weights.
    let weights = if weights.iter().any(|w| *w == 1.0) && weights.iter().any(|w| *w != 1.0) {
        vec![1.0; ys.len()]
    } else {
        weights
    };
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let sw = ordered_sum(weights.iter().copied());
    let mx = ordered_sum(weights.iter().zip(&lx).map(|(w, x)| w * x)) / sw;
    let my = ordered_sum(weights.iter().zip(&ly).map(|(w, y)| w * y)) / sw;
    let sxx = ordered_sum(weights.iter().zip(&lx).map(|(w, x)| w * (x - mx).powi(2)));
    let sxy = ordered_sum(
        weights
            .iter()
            .zip(lx.iter().zip(&ly))
            .map(|(w, (x, y))| w * (x - mx) * (y - my)),
    );
    let syy = ordered_sum(weights.iter().zip(&ly).map(|(w, y)| w * (y - my).powi(2)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        1.0
    };
    SlopeFit {
        slope,
        intercept,
        r_squared,
    }
}

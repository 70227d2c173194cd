use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::ordered_sum;

/// Function family used to approximate conditional expectations given the
/// state at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionBasis {
    /// Monomials of total degree at most `degree` in the standardized state.
    Poly { degree: usize },
    /// Indicators of an equal-width grid of `bins` cells per coordinate.
    LocalPartition { bins: usize },
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis::Poly { degree: 2 }
    }
}

impl fmt::Display for RegressionBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegressionBasis::Poly { degree } => write!(f, "poly:{degree}"),
            RegressionBasis::LocalPartition { bins } => write!(f, "local:{bins}"),
        }
    }
}

impl FromStr for RegressionBasis {
    type Err = Error;

    /// `poly:<degree>` or `local:<bins>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad basis `{s}` (expected poly:<degree> or local:<bins>)"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let arg: usize = arg.trim().parse().map_err(|_| bad())?;
        match kind.trim() {
            "poly" => Ok(RegressionBasis::Poly { degree: arg }),
            "local" if arg > 0 => Ok(RegressionBasis::LocalPartition { bins: arg }),
            _ => Err(bad()),
        }
    }
}

/// Coordinates with less spread than this are treated as constant.
const DEGENERATE_SPREAD: f64 = 1e-12;

/// All exponent vectors in `vars` variables with total degree `<= degree`,
/// ordered by degree.
fn monomials(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; vars]];
    let mut last = out.clone();
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &last {
            // Raise only coordinates at or after the last nonzero one so each
            // monomial is produced once.
            let from = e.iter().rposition(|&p| p > 0).unwrap_or(0);
            for v in from..vars {
                let mut f = e.clone();
                f[v] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        last = next;
    }
    out
}

/// Least-squares projection onto the basis evaluated at one node's states.
pub(crate) struct NodeRegression {
    num_paths: usize,
    size: usize,
    /// Row-major `num_paths x size`.
    features: Vec<f64>,
    gram: Cholesky<f64, Dyn>,
}

impl NodeRegression {
    /// `states` is row-major `num_paths x dim`.
    pub fn new(basis: RegressionBasis, states: &[f64], dim: usize, ridge: f64, node: usize) -> Result<Self> {
        let num_paths = states.len() / dim;
        let (size, features) = match basis {
            RegressionBasis::Poly { degree } => poly_features(states, dim, degree),
            RegressionBasis::LocalPartition { bins } => partition_features(states, dim, bins),
        };
        let mut reg = Self::gram(&features, num_paths, size);
        // The intercept of the polynomial family is left unpenalized so that
        // constants are reproduced exactly.
        let first = usize::from(matches!(basis, RegressionBasis::Poly { .. }));
        for k in first..size {
            reg[(k, k)] += ridge;
        }
        let rank_deficient = || Error::RankDeficientBasis { node };
        let chol = reg.cholesky().ok_or_else(rank_deficient)?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if !(lo > 0.0) || (lo / hi).powi(2) < 1e-14 {
            return Err(rank_deficient());
        }
        Ok(Self {
            num_paths,
            size,
            features,
            gram: chol,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn gram(features: &[f64], paths: usize, size: usize) -> DMatrix<f64> {
        let partials: Vec<DMatrix<f64>> = features
            .par_chunks(CHUNK * size)
            .map(|rows| {
                let mut g = DMatrix::zeros(size, size);
                for row in rows.chunks_exact(size) {
                    for a in 0..size {
                        for b in 0..=a {
                            g[(a, b)] += row[a] * row[b];
                        }
                    }
                }
                g
            })
            .collect();
        debug_assert_eq!(features.len(), paths * size);
        let mut g = partials.into_iter().fold(DMatrix::zeros(size, size), |acc, p| acc + p);
        for a in 0..size {
            for b in 0..a {
                g[(b, a)] = g[(a, b)];
            }
        }
        g
    }

    /// Fitted values of `targets` (row-major `num_paths x width`).
    pub fn project(&self, targets: &[f64], width: usize) -> Vec<f64> {
        let k = self.size;
        let partials: Vec<DMatrix<f64>> = self
            .features
            .par_chunks(CHUNK * k)
            .zip(targets.par_chunks(CHUNK * width))
            .map(|(rows, ys)| {
                let mut acc = DMatrix::zeros(k, width);
                for (row, y) in rows.chunks_exact(k).zip(ys.chunks_exact(width)) {
                    for a in 0..k {
                        for t in 0..width {
                            acc[(a, t)] += row[a] * y[t];
                        }
                    }
                }
                acc
            })
            .collect();
        let rhs = partials.into_iter().fold(DMatrix::zeros(k, width), |acc, p| acc + p);
        let coef = self.gram.solve(&rhs);
        let mut fitted = vec![0.0; self.num_paths * width];
        fitted
            .par_chunks_mut(width)
            .zip(self.features.par_chunks(k))
            .for_each(|(out, row)| {
                for (t, o) in out.iter_mut().enumerate() {
                    *o = ordered_sum((0..k).map(|a| row[a] * coef[(a, t)]));
                }
            });
        fitted
    }
}

const CHUNK: usize = 1024;

/// Per-coordinate mean and spread; coordinates with no spread are dropped.
fn standardization(states: &[f64], dim: usize) -> Vec<(usize, f64, f64)> {
    let m = (states.len() / dim) as f64;
    (0..dim)
        .filter_map(|c| {
            let col = || states.iter().skip(c).step_by(dim).copied();
            let mean = ordered_sum(col()) / m;
            let sd = (ordered_sum(col().map(|v| (v - mean).powi(2))) / m).sqrt();
            (sd > DEGENERATE_SPREAD * (1.0 + mean.abs())).then_some((c, mean, sd))
        })
        .collect()
}

fn poly_features(states: &[f64], dim: usize, degree: usize) -> (usize, Vec<f64>) {
    let active = standardization(states, dim);
    let exps = monomials(active.len(), degree);
    let k = exps.len();
    let mut features = vec![0.0; states.len() / dim * k];
    features
        .par_chunks_mut(k)
        .zip(states.par_chunks(dim))
        .for_each(|(row, x)| {
            let z: Vec<f64> = active.iter().map(|&(c, mu, sd)| (x[c] - mu) / sd).collect();
            for (slot, e) in row.iter_mut().zip(&exps) {
                *slot = e.iter().zip(&z).map(|(&p, v)| v.powi(p as i32)).product();
            }
        });
    (k, features)
}

fn partition_features(states: &[f64], dim: usize, bins: usize) -> (usize, Vec<f64>) {
    let m = states.len() / dim;
    let active: Vec<(usize, f64, f64)> = standardization(states, dim)
        .into_iter()
        .map(|(c, _, _)| {
            let col = states.iter().skip(c).step_by(dim);
            let lo = col.clone().copied().fold(f64::INFINITY, f64::min);
            let hi = col.copied().fold(f64::NEG_INFINITY, f64::max);
            (c, lo, hi)
        })
        .collect();
    let cell_of = |x: &[f64]| {
        active.iter().fold(0usize, |acc, &(c, lo, hi)| {
            let b = (((x[c] - lo) / (hi - lo)) * bins as f64).floor() as usize;
            acc * bins + b.min(bins - 1)
        })
    };
    let cells: Vec<usize> = states.chunks_exact(dim).map(cell_of).collect();
    // Compact the occupied cells so every column has at least one sample.
    let mut occupied: Vec<usize> = cells.clone();
    occupied.sort_unstable();
    occupied.dedup();
    let k = occupied.len();
    let mut features = vec![0.0; m * k];
    for (row, cell) in features.chunks_exact_mut(k).zip(&cells) {
        row[occupied.binary_search(cell).expect("occupied")] = 1.0;
    }
    (k, features)
}

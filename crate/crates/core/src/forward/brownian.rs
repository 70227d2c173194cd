use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Brownian increments shared by every process simulated on an ensemble.
///
/// Normal `(path, step, coord)` is read from ChaCha stream `path` at word
/// offset `4 * (step * dim + coord)`, so the increments of a path do not
/// depend on how many paths are generated.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrements {
    paths: usize,
    steps: usize,
    dim: usize,
    step: f64,
    seed: u64,
    /// Flat `[path][step][coord]`.
    data: Vec<f64>,
}

/// Box-Muller transform of two 64-bit draws (cosine branch).
fn standard_normal(a: u64, b: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) as f64 + 0.5) * SCALE;
    let u2 = ((b >> 11) as f64 + 0.5) * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl BrownianIncrements {
    pub fn generate(seed: u64, paths: usize, steps: usize, dim: usize, step: f64) -> Result<Self> {
        if paths == 0 || steps == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "increments need positive paths, steps and dimension".into(),
            ));
        }
        let sqrt_h = step.sqrt();
        let per_path = steps * dim;
        let mut data = vec![0.0; paths * per_path];
        data.par_chunks_mut(per_path)
            .enumerate()
            .for_each(|(path, chunk)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(path as u64);
                rng.set_word_pos(0);
                for value in chunk.iter_mut() {
                    let a = rng.next_u64();
                    let b = rng.next_u64();
                    *value = sqrt_h * standard_normal(a, b);
                }
            });
        Ok(Self {
            paths,
            steps,
            dim,
            step,
            seed,
            data,
        })
    }

    /// Build from raw data (e.g. read back from an export).
    pub fn from_raw(
        seed: u64,
        paths: usize,
        steps: usize,
        dim: usize,
        step: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != paths * steps * dim {
            return Err(Error::DimensionMismatch(format!(
                "increment data has {} entries, expected {}",
                data.len(),
                paths * steps * dim
            )));
        }
        Ok(Self {
            paths,
            steps,
            dim,
            step,
            seed,
            data,
        })
    }

    /// Sum consecutive blocks of `factor` increments: the same Brownian path
    /// observed on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut data = vec![0.0; self.paths * steps * self.dim];
        for path in 0..self.paths {
            for i in 0..steps {
                for j in 0..self.dim {
                    data[(path * steps + i) * self.dim + j] = (0..factor)
                        .map(|k| self.get(path, i * factor + k, j))
                        .sum();
                }
            }
        }
        Ok(Self {
            paths: self.paths,
            steps,
            dim: self.dim,
            step: self.step * factor as f64,
            seed: self.seed,
            data,
        })
    }

    pub fn get(&self, path: usize, step: usize, coord: usize) -> f64 {
        self.data[(path * self.steps + step) * self.dim + coord]
    }

    pub fn at(&self, path: usize, step: usize) -> &[f64] {
        let start = (path * self.steps + step) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn paths(&self) -> usize {
        self.paths
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Estimate;

    #[test]
    fn increments_have_mean_zero_and_variance_h() {
        let h = 0.01;
        let inc = BrownianIncrements::generate(11, 4000, 25, 2, h).unwrap();
        for j in 0..2 {
            let samples: Vec<f64> = (0..4000)
                .flat_map(|m| (0..25).map(move |i| (m, i)))
                .map(|(m, i)| inc.get(m, i, j))
                .collect();
            let mean = Estimate::from_samples(&samples);
            assert!(mean.mean.abs() < 5.0 * mean.stderr, "mean {mean:?}");
            let sq: Vec<f64> = samples.iter().map(|v| v * v).collect();
            let var = Estimate::from_samples(&sq);
            assert!((var.mean - h).abs() < 5.0 * var.stderr, "var {var:?}");
        }
    }

    #[test]
    fn path_streams_do_not_depend_on_path_count() {
        let small = BrownianIncrements::generate(5, 3, 10, 1, 0.1).unwrap();
        let large = BrownianIncrements::generate(5, 50, 10, 1, 0.1).unwrap();
        for m in 0..3 {
            for i in 0..10 {
                assert_eq!(small.get(m, i, 0), large.get(m, i, 0));
            }
        }
    }

    #[test]
    fn coarsening_sums_blocks() {
        let fine = BrownianIncrements::generate(1, 2, 8, 1, 0.125).unwrap();
        let coarse = fine.coarsen(4).unwrap();
        assert_eq!(coarse.steps(), 2);
        let expected: f64 = (4..8).map(|i| fine.get(1, i, 0)).sum();
        assert_eq!(coarse.get(1, 1, 0), expected);
        assert!(fine.coarsen(3).is_err());
    }
}

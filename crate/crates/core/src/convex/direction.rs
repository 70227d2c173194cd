use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{ControlProcess, PathEnsemble};
use crate::model::{ControlDomain, Vector};
use crate::numerics::ordered_sum;

/// Tolerance for membership of `u_bar + v` in the control domain.
const DOMAIN_TOL: f64 = 1e-9;

/// A control-space process on the steps of every path, flat
/// `[path][step][coord]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateauxDirection {
    pub num_paths: usize,
    pub num_steps: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl GateauxDirection {
    pub fn zeros(base: &PathEnsemble) -> Self {
        Self {
            num_paths: base.num_paths,
            num_steps: base.grid.num_steps(),
            dim: base.dim_control,
            data: vec![0.0; base.controls.len()],
        }
    }

    /// The same vector on every step of every path.
    pub fn constant(base: &PathEnsemble, v: &Vector) -> Result<Self> {
        if v.len() != base.dim_control {
            return Err(Error::DimensionMismatch("direction has the wrong control dimension".into()));
        }
        let mut out = Self::zeros(base);
        for chunk in out.data.chunks_exact_mut(v.len()) {
            chunk.copy_from_slice(v.as_slice());
        }
        Ok(out)
    }

    /// `v = u - u_bar` with `u` evaluated along the reference states, so
    /// a feedback target gives a per-path direction.
    pub fn towards(base: &PathEnsemble, target: &ControlProcess) -> Result<Self> {
        if target.dim() != base.dim_control || target.grid() != &base.grid {
            return Err(Error::DimensionMismatch("target control does not match the ensemble".into()));
        }
        let steps = base.grid.num_steps();
        let k = base.dim_control;
        let mut out = Self::zeros(base);
        out.data.par_chunks_mut(steps * k).enumerate().for_each(|(m, row)| {
            for i in 0..steps {
                let v = target.value(m, i, &base.state(m, i)) - base.control(m, i);
                row[i * k..(i + 1) * k].copy_from_slice(v.as_slice());
            }
        });
        Ok(out)
    }

    pub fn at(&self, path: usize, step: usize) -> &[f64] {
        let start = (path * self.num_steps + step) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn vector(&self, path: usize, step: usize) -> Vector {
        DVector::from_column_slice(self.at(path, step))
    }

    pub fn scaled(&self, theta: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * theta).collect(),
            ..*self
        }
    }

    /// `sqrt(E sum_i h |v_i|^2)`.
    pub fn norm(&self, h: f64) -> f64 {
        let per_path: Vec<f64> = self
            .data
            .par_chunks(self.num_steps * self.dim)
            .map(|row| ordered_sum(row.iter().map(|v| v * v)) * h)
            .collect();
        (ordered_sum(per_path.into_iter()) / self.num_paths as f64).sqrt()
    }

    /// Largest `|v|` over all steps and paths.
    pub fn sup_norm(&self) -> f64 {
        self.data
            .chunks_exact(self.dim)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    fn check_shape(&self, base: &PathEnsemble) -> Result<()> {
        if self.num_paths != base.num_paths || self.num_steps != base.grid.num_steps() || self.dim != base.dim_control
        {
            return Err(Error::DimensionMismatch("direction does not match the ensemble".into()));
        }
        Ok(())
    }

    /// Checks that `u_bar + v` stays in the (convex) domain everywhere, which
    /// puts the whole segment `u_bar + theta v`, `theta in [0, 1]`, inside.
    pub fn check_admissible(&self, base: &PathEnsemble, domain: &ControlDomain) -> Result<()> {
        self.check_shape(base)?;
        if !domain.is_convex() {
            return Err(Error::NonConvexDomain);
        }
        for (u, v) in base.controls.chunks_exact(self.dim).zip(self.data.chunks_exact(self.dim)) {
            let end = DVector::from_iterator(self.dim, u.iter().zip(v).map(|(a, b)| a + b));
            if !domain.contains(&end, DOMAIN_TOL) {
                return Err(Error::InvalidArgument(format!(
                    "direction leaves the control domain at {:?}",
                    end.as_slice()
                )));
            }
        }
        Ok(())
    }

    /// The pathwise control `u_bar + theta v`.
    pub fn perturbed_control(&self, base: &PathEnsemble, theta: f64) -> Result<ControlProcess> {
        self.check_shape(base)?;
        let data = base.controls.iter().zip(&self.data).map(|(u, v)| u + theta * v).collect();
        ControlProcess::pathwise(base.grid, base.num_paths, base.dim_control, data)
    }
}

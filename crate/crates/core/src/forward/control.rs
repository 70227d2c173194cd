use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{TimeGrid, Vector};

/// Feedback law `(t_i, x) -> u`.
pub type FeedbackFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;

#[derive(Clone)]
enum Values {
    /// One open-loop value per step.
    Deterministic(Vec<Vector>),
    Feedback(FeedbackFn),
    /// Realized values, flat `[path][step][coord]`.
    Pathwise {
        paths: usize,
        dim: usize,
        data: Arc<Vec<f64>>,
    },
    /// `base` everywhere except on the step window, where it equals `value`.
    Spiked {
        base: Box<ControlProcess>,
        window: Range<usize>,
        value: Vector,
    },
}

/// An adapted, piecewise-constant control on a time grid.
///
/// The value on `[t_i, t_{i+1})` may depend on the path index and on the
/// state at `t_i` only, so adaptedness holds by construction.
#[derive(Clone)]
pub struct ControlProcess {
    grid: TimeGrid,
    dim: usize,
    values: Values,
}

impl fmt::Debug for ControlProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.values {
            Values::Deterministic(_) => "deterministic",
            Values::Feedback(_) => "feedback",
            Values::Pathwise { .. } => "pathwise",
            Values::Spiked { .. } => "spiked",
        };
        f.debug_struct("ControlProcess")
            .field("kind", &kind)
            .field("steps", &self.grid.num_steps())
            .field("dim", &self.dim)
            .finish()
    }
}

impl ControlProcess {
    pub fn deterministic(grid: TimeGrid, values: Vec<Vector>) -> Result<Self> {
        if values.len() != grid.num_steps() {
            return Err(Error::DimensionMismatch(format!(
                "{} control values for {} steps",
                values.len(),
                grid.num_steps()
            )));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch(
                "control values have differing dimensions".into(),
            ));
        }
        Ok(Self {
            grid,
            dim,
            values: Values::Deterministic(values),
        })
    }

    pub fn constant(grid: TimeGrid, value: Vector) -> Self {
        let dim = value.len();
        Self {
            grid,
            dim,
            values: Values::Deterministic(vec![value; grid.num_steps()]),
        }
    }

    pub fn scalar_constant(grid: TimeGrid, value: f64) -> Self {
        Self::constant(grid, DVector::from_element(1, value))
    }

    pub fn feedback(grid: TimeGrid, dim: usize, law: FeedbackFn) -> Self {
        Self {
            grid,
            dim,
            values: Values::Feedback(law),
        }
    }

    pub fn pathwise(grid: TimeGrid, paths: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != paths * grid.num_steps() * dim {
            return Err(Error::DimensionMismatch(format!(
                "pathwise control data has {} entries, expected {}",
                data.len(),
                paths * grid.num_steps() * dim
            )));
        }
        Ok(Self {
            grid,
            dim,
            values: Values::Pathwise {
                paths,
                dim,
                data: Arc::new(data),
            },
        })
    }

    pub(crate) fn spiked(base: ControlProcess, window: Range<usize>, value: Vector) -> Self {
        Self {
            grid: base.grid,
            dim: base.dim,
            values: Values::Spiked {
                base: Box::new(base),
                window,
                value,
            },
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// True when some value depends on the state (a feedback law somewhere
    /// in the composition).
    pub fn is_feedback(&self) -> bool {
        match &self.values {
            Values::Feedback(_) => true,
            Values::Spiked { base, .. } => base.is_feedback(),
            _ => false,
        }
    }

    /// Number of paths a pathwise control was realized on.
    pub fn pathwise_paths(&self) -> Option<usize> {
        match &self.values {
            Values::Pathwise { paths, .. } => Some(*paths),
            Values::Spiked { base, .. } => base.pathwise_paths(),
            _ => None,
        }
    }

    /// Control value on `[t_step, t_{step+1})` for `path` in state `x`.
    pub fn value(&self, path: usize, step: usize, x: &Vector) -> Vector {
        match &self.values {
            Values::Deterministic(values) => values[step].clone(),
            Values::Feedback(law) => law(self.grid.node(step), x),
            Values::Pathwise { dim, data, .. } => {
                let n = self.grid.num_steps();
                let start = (path * n + step) * dim;
                DVector::from_column_slice(&data[start..start + dim])
            }
            Values::Spiked {
                base,
                window,
                value,
            } => {
                if window.contains(&step) {
                    value.clone()
                } else {
                    base.value(path, step, x)
                }
            }
        }
    }

    /// Open-loop values, when the control is deterministic.
    pub fn deterministic_values(&self) -> Option<Vec<Vector>> {
        match &self.values {
            Values::Deterministic(v) => Some(v.clone()),
            Values::Spiked {
                base,
                window,
                value,
            } => base.deterministic_values().map(|mut v| {
                for step in window.clone() {
                    v[step] = value.clone();
                }
                v
            }),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pathwise_lookup_uses_path_major_layout() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let ctrl = ControlProcess::pathwise(grid, 2, 1, vec![0., 1., 2., 10., 11., 12.]).unwrap();
        let x = DVector::zeros(1);
        assert_eq!(ctrl.value(1, 2, &x)[0], 12.0);
        assert_eq!(ctrl.value(0, 1, &x)[0], 1.0);
    }

    #[test]
    fn feedback_sees_node_time_and_state() {
        let grid = TimeGrid::new(2.0, 4).unwrap();
        let ctrl = ControlProcess::feedback(
            grid,
            1,
            Arc::new(|t, x: &Vector| DVector::from_element(1, t + x[0])),
        );
        assert!(ctrl.is_feedback());
        assert_eq!(ctrl.value(7, 3, &DVector::from_element(1, 0.25))[0], 1.75);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        assert!(ControlProcess::deterministic(grid, vec![DVector::zeros(1); 2]).is_err());
        assert!(ControlProcess::pathwise(grid, 2, 1, vec![0.0; 5]).is_err());
    }
}

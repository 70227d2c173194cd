use crate::error::{Error, Result};

/// Uniform time grid `t_i = i * T / N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    num_steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, num_steps: usize) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self { num_steps, horizon })
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.num_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.num_steps {
            self.horizon
        } else {
            i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.num_steps).map(move |i| self.node(i))
    }

    /// Grid with `factor` times as many steps over the same horizon.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.horizon, self.num_steps * factor)
    }

    /// Number of whole steps in `duration`, if it is grid aligned.
    pub fn steps_in(&self, duration: f64) -> Option<usize> {
        let ratio = duration / self.step();
        let rounded = ratio.round();
        if rounded >= 0.0 && (ratio - rounded).abs() <= 1e-9 * ratio.abs().max(1.0) {
            Some(rounded as usize)
        } else {
            None
        }
    }
}

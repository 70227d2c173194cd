use std::ops::Range;

use crate::error::{Error, Result};
use crate::forward::ControlProcess;
use crate::model::{ControlDomain, TimeGrid, Vector};

/// Replace the control by `value` on `[start, start + width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSpec {
    pub start: f64,
    pub width: f64,
    pub value: Vector,
}

impl SpikeSpec {
    pub fn new(start: f64, width: f64, value: Vector) -> Self {
        Self {
            start,
            width,
            value,
        }
    }

    /// Grid steps covered by the spike. Both ends must fall on grid nodes.
    pub fn window(&self, grid: &TimeGrid) -> Result<Range<usize>> {
        let misaligned = || Error::MisalignedSpike {
            start: self.start,
            width: self.width,
            step: grid.step(),
        };
        if self.start < 0.0 || self.width < 0.0 {
            return Err(misaligned());
        }
        let first = grid.steps_in(self.start).ok_or_else(misaligned)?;
        let len = grid.steps_in(self.width).ok_or_else(misaligned)?;
        if first + len > grid.num_steps() {
            return Err(misaligned());
        }
        Ok(first..first + len)
    }

    pub fn check_value(&self, domain: &ControlDomain) -> Result<()> {
        if domain.contains(&self.value, 1e-12) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "spike value {:?} is outside the control domain",
                self.value.as_slice()
            )))
        }
    }
}

/// Spikes anchored at `start` with strictly decreasing widths and a common
/// value.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeFamily {
    pub start: f64,
    pub widths: Vec<f64>,
    pub value: Vector,
}

impl SpikeFamily {
    pub fn spikes(&self) -> impl Iterator<Item = SpikeSpec> + '_ {
        self.widths
            .iter()
            .map(|&w| SpikeSpec::new(self.start, w, self.value.clone()))
    }

    pub fn check(&self, grid: &TimeGrid, domain: &ControlDomain) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidArgument("a spike family needs at least two widths".into()));
        }
        if self.widths.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(
                "spike widths must be strictly decreasing".into(),
            ));
        }
        for spike in self.spikes() {
            spike.window(grid)?;
            spike.check_value(domain)?;
        }
        Ok(())
    }
}

/// The control equal to `ctrl` off the spike window and to the spike value
/// on it.
pub fn spike_perturb(ctrl: &ControlProcess, spike: &SpikeSpec) -> Result<ControlProcess> {
    let window = spike.window(ctrl.grid())?;
    if spike.value.len() != ctrl.dim() {
        return Err(Error::DimensionMismatch(format!(
            "spike value has length {}, control dimension is {}",
            spike.value.len(),
            ctrl.dim()
        )));
    }
    if window.is_empty() {
        return Ok(ctrl.clone());
    }
    Ok(ControlProcess::spiked(ctrl.clone(), window, spike.value.clone()))
}

//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use dissipative_smp::adjoint::RegressionBasis;
use dissipative_smp::bench::{lookup, BenchSpec};
use dissipative_smp::forward::Scheme;
use dissipative_smp::model::{Matrix, TimeGrid, Vector};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Validate,
    Simulate,
    VariationOrders,
    CostExpansion,
    Adjoint,
    SmpCheck,
    SpikeInequality,
    Optimize,
    Sufficiency,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Validate => "validate",
            Task::Simulate => "simulate",
            Task::VariationOrders => "variation-orders",
            Task::CostExpansion => "cost-expansion",
            Task::Adjoint => "adjoint",
            Task::SmpCheck => "smp-check",
            Task::SpikeInequality => "spike-inequality",
            Task::Optimize => "optimize",
            Task::Sufficiency => "sufficiency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub task: Task,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub spike: SpikeConfig,
    #[serde(default)]
    pub adjoint: AdjointConfig,
    #[serde(default)]
    pub smp: SmpConfig,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub sufficiency: SufficiencyConfig,
}

/// A registered problem with optional overrides. Matrices are row lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProblemConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct GridConfig {
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { steps: 160 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub seed: u64,
    pub scheme: String,
    pub basis: String,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            paths: 2000,
            seed: 0,
            scheme: Scheme::SplitStepImplicitDrift.to_string(),
            basis: RegressionBasis::default().to_string(),
        }
    }
}

/// Reference control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum ControlConfig {
    Zero,
    Constant { value: Vec<f64> },
    /// Optimal feedback of an LQ problem.
    Riccati,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct ValidateConfig {
    pub samples: usize,
    pub seed: u64,
    pub radius: f64,
    pub tolerance: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            radius: 2.0,
            tolerance: 1e-8,
        }
    }
}

/// Spike families. Times are absolute; `start` defaults to `T/2` and the
/// widths to `{0.2, 0.1, 0.05, 0.025, 0.0125} T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct SpikeConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<f64>>,
    /// Spike value `w` for variation-orders, cost-expansion and duality.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<f64>>,
    /// Values tested by spike-inequality; defaults to a 5-point domain grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
    /// Moment order `2k` of the expansion estimates.
    pub k: u32,
    pub min_slope: f64,
    pub tol: f64,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        Self {
            start: None,
            widths: None,
            value: None,
            values: None,
            k: 1,
            min_slope: 1.3,
            tol: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct AdjointConfig {
    /// Largest relative error against the LQ oracles.
    pub oracle_tol: f64,
    /// Run the duality pairings with the first spike of `[spike]`.
    pub duality: bool,
}

impl Default for AdjointConfig {
    fn default() -> Self {
        Self {
            oracle_tol: 0.05,
            duality: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct SmpConfig {
    /// Control sample points per axis.
    pub u_grid: usize,
    pub max_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    pub tol_scale: f64,
    /// 0 checks every path.
    pub max_paths: usize,
    pub first_order_only: bool,
}

impl Default for SmpConfig {
    fn default() -> Self {
        Self {
            u_grid: 41,
            max_fraction: 0.01,
            tol: None,
            tol_scale: 3.0,
            max_paths: 1000,
            first_order_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct OptimizeConfig {
    pub rho: f64,
    pub iters: usize,
    pub divergence_window: usize,
    pub max_halvings: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    /// Relative distance to the Riccati value accepted on LQ problems.
    pub target_rel: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            iters: 200,
            divergence_window: 5,
            max_halvings: 0,
            grad_tol: Some(1e-6),
            target_rel: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct SufficiencyConfig {
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub control_grid: usize,
}

impl Default for SufficiencyConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            tol: 1e-9,
            control_grid: 21,
        }
    }
}

fn bad(key: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {why}"))
}

fn matrix(key: &str, rows: &[Vec<f64>], n: usize, m: usize) -> Result<Matrix, CliError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != m) {
        return Err(bad(key, format!("expected a {n}x{m} matrix")));
    }
    Ok(Matrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Everything a task needs, parsed and checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: BenchSpec,
    pub grid: TimeGrid,
    pub scheme: Scheme,
    pub basis: RegressionBasis,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().trim().to_string() + &span_hint(text, e.span())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// Check every field and assemble the problem specification.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let p = &self.problem;
        let mut spec = lookup(&p.name).map_err(|e| bad("problem.name", e))?;
        if let Some(t) = p.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return Err(bad("problem.horizon", "must be positive"));
            }
            spec = spec.with_horizon(t);
        }
        let (n, horizon) = match &spec {
            BenchSpec::Lq(s) => (s.dim_state(), s.horizon),
            BenchSpec::Poly(s) => (s.x0.len(), s.horizon),
        };
        if let Some(x0) = &p.x0 {
            if x0.len() != n {
                return Err(bad("problem.x0", format!("expected {n} entries")));
            }
            spec = spec.with_initial_state(Vector::from_column_slice(x0));
        }
        let overrides = [("problem.a", &p.a), ("problem.q", &p.q), ("problem.r", &p.r), ("problem.g", &p.g)];
        match &mut spec {
            BenchSpec::Lq(s) => {
                let k = s.dim_control();
                if let Some(rows) = &p.a {
                    s.a = matrix("problem.a", rows, n, n)?;
                }
                if let Some(rows) = &p.q {
                    s.q = matrix("problem.q", rows, n, n)?;
                }
                if let Some(rows) = &p.r {
                    s.r = matrix("problem.r", rows, k, k)?;
                }
                if let Some(rows) = &p.g {
                    s.g = matrix("problem.g", rows, n, n)?;
                }
                s.check_structure().map_err(|e| bad("problem", e))?;
            }
            BenchSpec::Poly(_) => {
                if let Some((key, _)) = overrides.iter().find(|(_, v)| v.is_some()) {
                    return Err(bad(key, "matrix overrides apply to LQ problems only"));
                }
            }
        }

        if self.grid.steps == 0 {
            return Err(bad("grid.steps", "must be positive"));
        }
        let grid = TimeGrid::new(horizon, self.grid.steps).map_err(|e| bad("grid.steps", e))?;
        if self.ensemble.paths < 2 {
            return Err(bad("ensemble.paths", "need at least two paths"));
        }
        let scheme = Scheme::from_str(&self.ensemble.scheme).map_err(|e| bad("ensemble.scheme", e))?;
        let basis = RegressionBasis::from_str(&self.ensemble.basis).map_err(|e| bad("ensemble.basis", e))?;

        let dim_u = match &spec {
            BenchSpec::Lq(s) => s.dim_control(),
            BenchSpec::Poly(s) => s.domain.dim(),
        };
        match &self.control {
            ControlConfig::Constant { value } if value.len() != dim_u => {
                return Err(bad("control.value", format!("expected {dim_u} entries")));
            }
            ControlConfig::Riccati => match spec.lq() {
                None => return Err(bad("control.kind", "riccati feedback needs an LQ problem")),
                Some(s) => s.validate().map_err(|e| bad("control.kind", format!("riccati feedback undefined: {e}")))?,
            },
            _ => {}
        }

        let v = &self.validate;
        if v.samples == 0 || !(v.radius > 0.0) || !(v.tolerance >= 0.0) {
            return Err(bad("validate", "samples and radius must be positive, tolerance nonnegative"));
        }
        let s = &self.spike;
        if let Some(widths) = &s.widths {
            if widths.len() < 2 || widths.iter().any(|w| !(*w > 0.0)) || widths.windows(2).any(|w| w[1] >= w[0]) {
                return Err(bad("spike.widths", "need at least two positive, strictly decreasing widths"));
            }
        }
        if let Some(start) = s.start {
            if !(0.0..horizon).contains(&start) {
                return Err(bad("spike.start", "must lie in [0, T)"));
            }
        }
        if s.value.as_ref().is_some_and(|w| w.len() != dim_u) {
            return Err(bad("spike.value", format!("expected {dim_u} entries")));
        }
        if s.values.as_ref().is_some_and(|ws| ws.is_empty() || ws.iter().any(|w| w.len() != dim_u)) {
            return Err(bad("spike.values", format!("expected a nonempty list of {dim_u}-vectors")));
        }
        if s.k == 0 {
            return Err(bad("spike.k", "must be positive"));
        }
        if !(self.adjoint.oracle_tol > 0.0) {
            return Err(bad("adjoint.oracle-tol", "must be positive"));
        }
        let m = &self.smp;
        if m.u_grid == 0 {
            return Err(bad("smp.u-grid", "must be positive"));
        }
        if !(0.0..=1.0).contains(&m.max_fraction) {
            return Err(bad("smp.max-fraction", "must lie in [0, 1]"));
        }
        if m.tol.is_some_and(|t| !(t >= 0.0)) || !(m.tol_scale >= 0.0) {
            return Err(bad("smp.tol", "tolerances must be nonnegative"));
        }
        let o = &self.optimize;
        if !(o.rho >= 0.0 && o.rho.is_finite()) {
            return Err(bad("optimize.rho", "must be finite and nonnegative"));
        }
        if o.divergence_window == 0 {
            return Err(bad("optimize.divergence-window", "must be positive"));
        }
        if !(o.target_rel > 0.0) {
            return Err(bad("optimize.target-rel", "must be positive"));
        }
        let f = &self.sufficiency;
        if f.samples == 0 || f.control_grid == 0 {
            return Err(bad("sufficiency", "samples and control-grid must be positive"));
        }
        Ok(Resolved {
            spec,
            grid,
            scheme,
            basis,
        })
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].lines().count().max(1);
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

//! Randomized consistency checks of the standing hypotheses on a problem.
//!
//! Nothing here proves anything: each check samples the configured state box
//! and reports whether the problem is consistent with the hypothesis on that
//! sample, together with the worst ratio observed.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ControlProblem, Matrix, Vector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub samples: usize,
    pub seed: u64,
    /// States are drawn uniformly from `[-radius, radius]^n`.
    pub state_radius: f64,
    /// Absolute slack on the dissipativity and Lipschitz bounds.
    pub tolerance: f64,
    pub fd_step: f64,
    pub fd_rel_tol: f64,
    /// Allowed ratio between the outer-shell and inner-ball growth constants.
    pub growth_slack: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            state_radius: 2.0,
            tolerance: 1e-8,
            fd_step: 1e-4,
            fd_rel_tol: 1e-5,
            growth_slack: 2.0,
        }
    }
}

/// Outcome of one sampled hypothesis check.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked ratio.
    pub worst_ratio: f64,
    /// The bound the ratio is compared against.
    pub bound: f64,
    /// Human-readable description of the worst sample.
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    pub checks: Vec<HypothesisCheck>,
    /// Largest observed operator norm of `D_x b`; recorded, never assumed bounded.
    pub drift_jacobian_sup: f64,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "consistent with hypotheses on {} samples: {}",
            self.samples,
            self.all_passed()
        )?;
        for c in &self.checks {
            write!(
                f,
                "  {:<36} {}  worst={:.6e} bound={:.6e}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.worst_ratio,
                c.bound
            )?;
            if let (false, Some(w)) = (c.passed, &c.witness) {
                write!(f, "  witness: {w}")?;
            }
            writeln!(f)?;
        }
        write!(f, "  observed sup |D_x b| = {:.6e}", self.drift_jacobian_sup)
    }
}

trait Finite {
    fn is_all_finite(&self) -> bool;
}

impl Finite for f64 {
    fn is_all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl Finite for DMatrix<f64> {
    fn is_all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl Finite for DVector<f64> {
    fn is_all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl<T: Finite> Finite for Vec<T> {
    fn is_all_finite(&self) -> bool {
        self.iter().all(Finite::is_all_finite)
    }
}

impl<T: Finite> Finite for Option<T> {
    fn is_all_finite(&self) -> bool {
        self.as_ref().is_none_or(Finite::is_all_finite)
    }
}

fn describe(t: f64, x: &Vector, u: Option<&Vector>) -> String {
    match u {
        Some(u) => format!(
            "t={t:.6}, x={:?}, u={:?}",
            x.as_slice(),
            u.as_slice()
        ),
        None => format!("x={:?}", x.as_slice()),
    }
}

fn guarded<T: Finite>(
    callback: &'static str,
    t: f64,
    x: &Vector,
    u: Option<&Vector>,
    eval: impl FnOnce() -> T,
) -> Result<T> {
    match catch_unwind(AssertUnwindSafe(eval)) {
        Ok(value) if value.is_all_finite() => Ok(value),
        Ok(_) => Err(Error::CallbackFailure {
            callback,
            input: describe(t, x, u),
            reason: "returned a non-finite value".into(),
        }),
        Err(panic) => {
            let reason = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panicked".into());
            Err(Error::CallbackFailure {
                callback,
                input: describe(t, x, u),
                reason,
            })
        }
    }
}

struct Worst {
    value: f64,
    witness: Option<String>,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            witness: None,
        }
    }

    fn offer(&mut self, value: f64, witness: impl FnOnce() -> String) {
        if value > self.value {
            self.value = value;
            self.witness = Some(witness());
        }
    }

    fn into_check(self, name: &str, bound: f64, passed: bool) -> HypothesisCheck {
        HypothesisCheck {
            name: name.to_string(),
            passed,
            worst_ratio: self.value,
            bound,
            witness: self.witness,
        }
    }
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> (f64, f64) {
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().map(|v| v.abs()).fold(1.0, f64::max);
    (diff, scale)
}

fn col(v: Vector) -> Matrix {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    (&a + a.transpose()) * 0.5
}

/// Check dissipativity, diffusion Lipschitz continuity, derivative
/// consistency and polynomial growth on a random sample.
pub fn validate_problem(
    problem: &ControlProblem,
    options: &ValidationOptions,
) -> Result<ValidationReport> {
    if options.samples == 0 {
        return Err(Error::InvalidArgument("validation needs at least one sample".into()));
    }
    let n = problem.dim_state;
    let d = problem.dim_noise;
    let alpha = problem.dissipativity_alpha;
    let tol = options.tolerance;
    let r = options.state_radius;
    let c = &problem.coefficients;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let draw_state =
        |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| r * (2.0 * rng.random::<f64>() - 1.0));

    let mut pairwise = Worst::new();
    let mut directional = Worst::new();
    let mut hilbert_schmidt = Worst::new();
    let mut lipschitz = Worst::new();
    let mut jac_sup = 0.0_f64;

    let names = [
        "derivative:drift_dx",
        "derivative:drift_dxx",
        "derivative:diffusion_dx",
        "derivative:diffusion_dxx",
        "derivative:running_cost_dx",
        "derivative:running_cost_dxx",
        "derivative:terminal_cost_dx",
        "derivative:terminal_cost_dxx",
        "derivative:drift_du",
        "derivative:diffusion_du",
        "derivative:running_cost_du",
    ];
    let mut derivative: Vec<Worst> = names.iter().map(|_| Worst::new()).collect();
    let mut has_du = false;

    let growth_names = [
        "growth:drift",
        "growth:diffusion",
        "growth:running_cost",
        "growth:terminal_cost",
    ];
    let growth_exps = [
        problem.growth_exponents.drift,
        problem.growth_exponents.diffusion,
        problem.growth_exponents.running_cost,
        problem.growth_exponents.terminal_cost,
    ];
    let mut inner = [0.0_f64; 4];
    let mut outer: Vec<Worst> = growth_names.iter().map(|_| Worst::new()).collect();

    let fd = options.fd_step;
    for _ in 0..options.samples {
        let t = problem.horizon * rng.random::<f64>();
        let x = draw_state(&mut rng);
        let x2 = draw_state(&mut rng);
        let u = problem.control_domain.sample_random(&mut rng);
        let uu = Some(&u);

        let b1 = guarded("drift", t, &x, uu, || c.drift(t, &x, &u))?;
        let b2 = guarded("drift", t, &x2, uu, || c.drift(t, &x2, &u))?;
        let dx = &x - &x2;
        if dx.norm_squared() > 0.0 {
            let ratio = (&b1 - &b2).dot(&dx) / dx.norm_squared();
            pairwise.offer(ratio, || {
                format!("{}, x'={:?}", describe(t, &x, uu), x2.as_slice())
            });
        }

        let jac = guarded("drift_dx", t, &x, uu, || c.drift_dx(t, &x, &u))?;
        jac_sup = jac_sup.max(jac.norm());
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        if y.norm_squared() > 0.0 {
            let ratio = (&jac * &y).dot(&y) / y.norm_squared();
            directional.offer(ratio, || format!("{}, y={:?}", describe(t, &x, uu), y.as_slice()));
        }
        let p = random_symmetric(&mut rng, n);
        let hs = p.norm_squared();
        if hs > 0.0 {
            let ratio = (&jac * &p * p.transpose()).trace() / hs;
            hilbert_schmidt.offer(ratio, || describe(t, &x, uu));
        }

        let s1 = guarded("diffusion", t, &x, uu, || c.diffusion(t, &x, &u))?;
        let s2 = guarded("diffusion", t, &x2, uu, || c.diffusion(t, &x2, &u))?;
        if dx.norm() > 0.0 {
            let ratio = (&s1 - &s2).norm() / dx.norm();
            lipschitz.offer(ratio, || {
                format!("{}, x'={:?}", describe(t, &x, uu), x2.as_slice())
            });
        }

        // Central finite differences of every derivative pair.
        let hess_b = guarded("drift_dxx", t, &x, uu, || c.drift_dxx(t, &x, &u))?;
        let dsig = guarded("diffusion_dx", t, &x, uu, || c.diffusion_dx(t, &x, &u))?;
        let hess_sig = guarded("diffusion_dxx", t, &x, uu, || c.diffusion_dxx(t, &x, &u))?;
        let f = guarded("running_cost", t, &x, uu, || c.running_cost(t, &x, &u))?;
        let fx = guarded("running_cost_dx", t, &x, uu, || c.running_cost_dx(t, &x, &u))?;
        let fxx = guarded("running_cost_dxx", t, &x, uu, || c.running_cost_dxx(t, &x, &u))?;
        let hv = guarded("terminal_cost", t, &x, None, || c.terminal_cost(&x))?;
        let hx = guarded("terminal_cost_dx", t, &x, None, || c.terminal_cost_dx(&x))?;
        let hxx = guarded("terminal_cost_dxx", t, &x, None, || c.terminal_cost_dxx(&x))?;

        let mut fd_jac = DMatrix::zeros(n, n);
        let mut fd_hess_b: Vec<Matrix> = vec![DMatrix::zeros(n, n); n];
        let mut fd_dsig: Vec<Matrix> = vec![DMatrix::zeros(n, n); d];
        let mut fd_hess_sig: Vec<Vec<Matrix>> = vec![vec![DMatrix::zeros(n, n); n]; d];
        let mut fd_fx = DVector::zeros(n);
        let mut fd_fxx = DMatrix::zeros(n, n);
        let mut fd_hx = DVector::zeros(n);
        let mut fd_hxx = DMatrix::zeros(n, n);
        for m in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[m] += fd;
            xm[m] -= fd;
            let db = (c.drift(t, &xp, &u) - c.drift(t, &xm, &u)) / (2.0 * fd);
            fd_jac.set_column(m, &db);
            let djac = (c.drift_dx(t, &xp, &u) - c.drift_dx(t, &xm, &u)) / (2.0 * fd);
            for (i, hess) in fd_hess_b.iter_mut().enumerate() {
                for l in 0..n {
                    hess[(l, m)] = djac[(i, l)];
                }
            }
            let ds = (c.diffusion(t, &xp, &u) - c.diffusion(t, &xm, &u)) / (2.0 * fd);
            let dsp = c.diffusion_dx(t, &xp, &u);
            let dsm = c.diffusion_dx(t, &xm, &u);
            for j in 0..d {
                fd_dsig[j].set_column(m, &ds.column(j));
                let dd = (&dsp[j] - &dsm[j]) / (2.0 * fd);
                for i in 0..n {
                    for l in 0..n {
                        fd_hess_sig[j][i][(l, m)] = dd[(i, l)];
                    }
                }
            }
            fd_fx[m] = (c.running_cost(t, &xp, &u) - c.running_cost(t, &xm, &u)) / (2.0 * fd);
            fd_fxx.set_column(
                m,
                &((c.running_cost_dx(t, &xp, &u) - c.running_cost_dx(t, &xm, &u)) / (2.0 * fd)),
            );
            fd_hx[m] = (c.terminal_cost(&xp) - c.terminal_cost(&xm)) / (2.0 * fd);
            fd_hxx.set_column(
                m,
                &((c.terminal_cost_dx(&xp) - c.terminal_cost_dx(&xm)) / (2.0 * fd)),
            );
        }

        let mut record = |k: usize, pairs: Vec<(Matrix, Matrix)>| {
            let (diff, scale) = pairs
                .iter()
                .map(|(a, b)| max_abs_diff(a, b))
                .fold((0.0_f64, 1.0_f64), |acc, v| (acc.0.max(v.0), acc.1.max(v.1)));
            derivative[k].offer(diff / scale, || describe(t, &x, uu));
        };
        record(0, vec![(jac.clone(), fd_jac)]);
        record(1, hess_b.iter().cloned().zip(fd_hess_b).collect());
        record(2, dsig.iter().cloned().zip(fd_dsig).collect());
        record(
            3,
            hess_sig
                .iter()
                .flatten()
                .cloned()
                .zip(fd_hess_sig.into_iter().flatten())
                .collect(),
        );
        record(4, vec![(col(fx.clone()), col(fd_fx))]);
        record(5, vec![(fxx.clone(), fd_fxx)]);
        record(6, vec![(col(hx.clone()), col(fd_hx))]);
        record(7, vec![(hxx.clone(), fd_hxx)]);

        let bu = guarded("drift_du", t, &x, uu, || c.drift_du(t, &x, &u))?;
        let su = guarded("diffusion_du", t, &x, uu, || c.diffusion_du(t, &x, &u))?;
        let fu = guarded("running_cost_du", t, &x, uu, || c.running_cost_du(t, &x, &u))?;
        if bu.is_some() || su.is_some() || fu.is_some() {
            has_du = true;
            let k = u.len();
            let mut fd_bu = DMatrix::zeros(n, k);
            let mut fd_su: Vec<Matrix> = vec![DMatrix::zeros(n, k); d];
            let mut fd_fu = DVector::zeros(k);
            for m in 0..k {
                let mut up = u.clone();
                let mut um = u.clone();
                up[m] += fd;
                um[m] -= fd;
                fd_bu.set_column(m, &((c.drift(t, &x, &up) - c.drift(t, &x, &um)) / (2.0 * fd)));
                let ds = (c.diffusion(t, &x, &up) - c.diffusion(t, &x, &um)) / (2.0 * fd);
                for (j, s) in fd_su.iter_mut().enumerate() {
                    s.set_column(m, &ds.column(j));
                }
                fd_fu[m] = (c.running_cost(t, &x, &up) - c.running_cost(t, &x, &um)) / (2.0 * fd);
            }
            if let Some(bu) = bu {
                record(8, vec![(bu, fd_bu)]);
            }
            if let Some(su) = su {
                record(9, su.into_iter().zip(fd_su).collect());
            }
            if let Some(fu) = fu {
                record(10, vec![(col(fu), col(fd_fu))]);
            }
        }

        // Growth envelopes: inner ball calibrates, outer shell must stay close.
        let norm_x = x.norm();
        let mat_norm_max = |ms: &[Matrix]| ms.iter().map(|m| m.norm()).fold(0.0, f64::max);
        let family_values = [
            b1.norm().max(jac.norm()).max(mat_norm_max(&hess_b)),
            hess_sig.iter().map(|h| mat_norm_max(h)).fold(0.0, f64::max),
            f.abs().max(fx.norm()).max(fxx.norm()),
            hv.abs().max(hx.norm()).max(hxx.norm()),
        ];
        for (k, value) in family_values.iter().enumerate() {
            let ratio = value / (1.0 + norm_x.powi(growth_exps[k] as i32));
            if norm_x <= 0.5 * r {
                inner[k] = inner[k].max(ratio);
            } else {
                outer[k].offer(ratio, || describe(t, &x, uu));
            }
        }
    }

    let mut checks = vec![
        pairwise.into_check("dissipativity", alpha, false),
        directional.into_check("directional-dissipativity", alpha, false),
        hilbert_schmidt.into_check("hilbert-schmidt-dissipativity", alpha, false),
        lipschitz.into_check("diffusion-lipschitz", problem.diffusion_lipschitz, false),
    ];
    for check in checks.iter_mut() {
        check.passed = check.worst_ratio <= check.bound + tol;
    }
    for (k, worst) in derivative.into_iter().enumerate() {
        if k >= 8 && !has_du {
            continue;
        }
        if worst.value == f64::NEG_INFINITY {
            continue;
        }
        let passed = worst.value <= options.fd_rel_tol;
        checks.push(worst.into_check(names[k], options.fd_rel_tol, passed));
    }
    for (k, worst) in outer.into_iter().enumerate() {
        let inner_c = inner[k];
        let (ratio, witness) = if worst.value == f64::NEG_INFINITY {
            (0.0, None)
        } else if inner_c > 0.0 {
            (worst.value / inner_c, worst.witness)
        } else if worst.value <= 1e-12 {
            (0.0, None)
        } else {
            (f64::INFINITY, worst.witness)
        };
        checks.push(HypothesisCheck {
            name: growth_names[k].to_string(),
            passed: ratio <= options.growth_slack,
            worst_ratio: ratio,
            bound: options.growth_slack,
            witness,
        });
    }

    Ok(ValidationReport {
        samples: options.samples,
        checks,
        drift_jacobian_sup: jac_sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{make_lq_problem, registry, LqSpec, ScalarModel};
    use crate::model::{ControlDomain, GrowthExponents};
    use proptest::prelude::*;

    fn cubic(sign: f64, alpha: f64) -> ControlProblem {
        ScalarModel::new()
            .drift(
                move |_, x, u| sign * x.powi(3) + u,
                move |_, x, _| 3.0 * sign * x * x,
                move |_, x, _| 6.0 * sign * x,
            )
            .diffusion(|_, _, _| 0.3, |_, _, _| 0.0, |_, _, _| 0.0)
            .into_problem(
                "cubic",
                1.0,
                0.0,
                alpha,
                0.0,
                GrowthExponents {
                    drift: 3,
                    ..GrowthExponents::default()
                },
                ControlDomain::interval(-1.0, 1.0),
            )
            .unwrap()
    }

    #[test]
    fn minus_identity_drift_passes_everything() {
        let spec = LqSpec {
            a: -DMatrix::identity(2, 2),
            ..registry::lq_2d()
        };
        let prob = make_lq_problem("lin", &spec).unwrap();
        assert_eq!(prob.dissipativity_alpha, -1.0);
        let r = validate_problem(&prob, &ValidationOptions::default()).unwrap();
        assert!(r.all_passed(), "{r}");
        let d = r.check("dissipativity").unwrap();
        assert!((d.worst_ratio + 1.0).abs() < 1e-12);
    }

    #[test]
    fn decreasing_cube_is_dissipative_with_zero_alpha() {
        let r = validate_problem(&cubic(-1.0, 0.0), &ValidationOptions::default()).unwrap();
        for name in ["dissipativity", "directional-dissipativity", "hilbert-schmidt-dissipativity"] {
            assert!(r.check(name).unwrap().passed, "{r}");
        }
    }

    #[test]
    fn increasing_cube_fails_with_a_witness() {
        let r = validate_problem(&cubic(1.0, 0.0), &ValidationOptions::default()).unwrap();
        let d = r.check("dissipativity").unwrap();
        assert!(!d.passed);
        assert!(d.worst_ratio > 0.0);
        assert!(d.witness.as_deref().is_some_and(|w| w.contains("x'=")));
        assert!(r.to_string().contains("witness"));
    }

    #[test]
    fn wrong_derivative_is_flagged() {
        let prob = ScalarModel::new()
            .drift(|_, x, _| -x, |_, _, _| -1.1, |_, _, _| 0.0)
            .into_problem("bad", 1.0, 0.0, -1.0, 0.0, GrowthExponents::default(), ControlDomain::interval(-1.0, 1.0))
            .unwrap();
        let r = validate_problem(&prob, &ValidationOptions::default()).unwrap();
        assert!(!r.check("derivative:drift_dx").unwrap().passed);
        assert!(r.check("derivative:drift_du").is_none());
    }

    #[test]
    fn non_finite_callbacks_are_identified() {
        let prob = ScalarModel::new()
            .running_cost(|_, x, _| if x > 1.0 { f64::NAN } else { 0.0 }, |_, _, _| 0.0, |_, _, _| 0.0)
            .into_problem("nan", 1.0, 0.0, 0.0, 0.0, GrowthExponents::default(), ControlDomain::interval(-1.0, 1.0))
            .unwrap();
        match validate_problem(&prob, &ValidationOptions::default()) {
            Err(Error::CallbackFailure { callback, input, .. }) => {
                assert_eq!(callback, "running_cost");
                assert!(input.contains("x="));
            }
            other => panic!("expected a callback failure, got {other:?}"),
        }
    }

    #[test]
    fn zero_samples_are_rejected() {
        let opts = ValidationOptions {
            samples: 0,
            ..Default::default()
        };
        assert!(validate_problem(&cubic(-1.0, 0.0), &opts).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// The directional check follows from the pairwise one on any cloud
        /// where the latter holds.
        #[test]
        fn pairwise_dissipativity_implies_directional(c in 0.0..2.0f64, a in -1.0..1.0f64, alpha in -1.0..1.5f64, seed in 0u64..100) {
            let prob = ScalarModel::new()
                .drift(move |_, x, _| -c * x.powi(3) + a * x, move |_, x, _| -3.0 * c * x * x + a, move |_, x, _| -6.0 * c * x)
                .into_problem("p", 1.0, 0.0, alpha, 0.0, GrowthExponents { drift: 3, ..GrowthExponents::default() }, ControlDomain::interval(-1.0, 1.0))
                .unwrap();
            let opts = ValidationOptions { samples: 200, seed, ..Default::default() };
            let r = validate_problem(&prob, &opts).unwrap();
            if r.check("dissipativity").unwrap().passed {
                prop_assert!(r.check("directional-dissipativity").unwrap().passed);
            }
        }
    }
}

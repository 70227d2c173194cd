//! One function per task. Each fills an [`Outcome`] with verdicts and tables.

use dissipative_smp::adjoint::{duality_check_first, solve_adjoints, AdjointOptions, AdjointSolution, DualityIdentity};
use dissipative_smp::bench::{riccati_solve, second_adjoint_oracle, LqSpec, RiccatiSolution};
use dissipative_smp::convex::{
    projected_gradient_descent, sufficiency_check, ConditionCheck, OptimizerOptions, SufficiencyOptions, VariationalOptions,
};
use dissipative_smp::forward::{moment_estimate, simulate, ControlProcess, PathEnsemble};
use dissipative_smp::model::{validate_problem, ControlProblem, ValidationOptions, Vector};
use dissipative_smp::smp::{smp_check, spike_inequality_check, SmpOptions};
use dissipative_smp::variation::{cost, cost_expansion_check, expansion_orders_on, ExpansionOptions, SpikeFamily, SpikeSpec};
use dissipative_smp::Result;

use crate::config::{ControlConfig, ExperimentConfig, Resolved, Task};
use crate::output::{num, Outcome, Table};

const DEFAULT_WIDTHS: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];

struct Setup<'a> {
    config: &'a ExperimentConfig,
    resolved: &'a Resolved,
    problem: ControlProblem,
}

impl Setup<'_> {
    fn lq(&self) -> Option<&LqSpec> {
        self.resolved.spec.lq()
    }

    fn riccati(&self) -> Result<Option<RiccatiSolution>> {
        self.lq().map(|s| riccati_solve(s, &self.resolved.grid)).transpose()
    }

    fn control(&self) -> Result<ControlProcess> {
        let grid = self.resolved.grid;
        let k = self.problem.dim_control();
        Ok(match &self.config.control {
            ControlConfig::Zero => ControlProcess::constant(grid, Vector::zeros(k)),
            ControlConfig::Constant { value } => ControlProcess::constant(grid, Vector::from_column_slice(value)),
            ControlConfig::Riccati => {
                let spec = self.lq().expect("checked when resolving");
                riccati_solve(spec, &grid)?.feedback(&spec.domain)
            }
        })
    }

    fn ensemble(&self) -> Result<PathEnsemble> {
        let e = &self.config.ensemble;
        simulate(&self.problem, &self.control()?, &self.resolved.grid, e.paths, e.seed, self.resolved.scheme)
    }

    fn adjoints(&self, base: &PathEnsemble) -> Result<AdjointSolution> {
        solve_adjoints(&self.problem, base, &AdjointOptions::with_basis(self.resolved.basis))
    }

    fn family(&self) -> SpikeFamily {
        let s = &self.config.spike;
        let t = self.resolved.grid.horizon();
        let value = match &s.value {
            Some(w) => Vector::from_column_slice(w),
            None => {
                let ones = Vector::from_element(self.problem.dim_control(), 1.0);
                self.problem.control_domain.project(&ones).unwrap_or(ones)
            }
        };
        SpikeFamily {
            start: s.start.unwrap_or(0.5 * t),
            widths: s.widths.clone().unwrap_or_else(|| DEFAULT_WIDTHS.iter().map(|w| w * t).collect()),
            value,
        }
    }

    fn smp_options(&self) -> SmpOptions {
        let m = &self.config.smp;
        SmpOptions {
            tol: m.tol,
            tol_scale: m.tol_scale,
            max_paths: (m.max_paths > 0).then_some(m.max_paths),
            max_fraction: m.max_fraction,
            first_order_only: m.first_order_only,
            record_violations: false,
        }
    }

    fn control_sample(&self) -> Vec<Vector> {
        self.problem.control_domain.sample_grid(self.config.smp.u_grid)
    }
}

fn vec_str(v: &Vector) -> String {
    let parts: Vec<String> = v.iter().map(|x| num(*x)).collect();
    format!("[{}]", parts.join(" "))
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=n).map(|i| format!("{prefix}{i}")).collect()
    }
}

pub fn header(config: &ExperimentConfig, resolved: &Resolved) -> Vec<String> {
    let g = &resolved.grid;
    let e = &config.ensemble;
    vec![
        format!("task: {}", config.task.name()),
        format!("problem: {}", config.problem.name),
        format!("grid: N = {}, T = {}", g.num_steps(), num(g.horizon())),
        format!(
            "ensemble: M = {}, seed = {}, scheme = {}, basis = {}",
            e.paths, e.seed, resolved.scheme, resolved.basis
        ),
    ]
}

/// Run the configured task; module errors land in `Err`.
pub fn execute(config: &ExperimentConfig, resolved: &Resolved, out: &mut Outcome) -> Result<()> {
    let problem = resolved.spec.build(&config.problem.name)?;
    let setup = Setup {
        config,
        resolved,
        problem,
    };
    match config.task {
        Task::Validate => validate(&setup, out),
        Task::Simulate => simulate_task(&setup, out),
        Task::VariationOrders => variation_orders(&setup, out),
        Task::CostExpansion => cost_expansion(&setup, out),
        Task::Adjoint => adjoint(&setup, out),
        Task::SmpCheck => smp(&setup, out),
        Task::SpikeInequality => spike_inequality(&setup, out),
        Task::Optimize => optimize(&setup, out),
        Task::Sufficiency => sufficiency(&setup, out),
    }
}

fn validate(s: &Setup, out: &mut Outcome) -> Result<()> {
    let v = &s.config.validate;
    let opts = ValidationOptions {
        samples: v.samples,
        seed: v.seed,
        state_radius: v.radius,
        tolerance: v.tolerance,
        ..ValidationOptions::default()
    };
    let report = validate_problem(&s.problem, &opts)?;
    let mut t = Table::new("results.csv", &["check", "passed", "worst_ratio", "bound"]);
    for c in &report.checks {
        t.push(vec![c.name.clone(), c.passed.to_string(), num(c.worst_ratio), num(c.bound)]);
        let mut detail = format!("worst {:.4e} vs bound {:.4e}", c.worst_ratio, c.bound);
        if let (false, Some(w)) = (c.passed, &c.witness) {
            detail += &format!("; witness {w}");
        }
        out.check(c.name.clone(), c.passed, detail);
    }
    out.metric_set("drift_jacobian_sup", report.drift_jacobian_sup);
    out.tables.push(t);
    Ok(())
}

fn simulate_task(s: &Setup, out: &mut Outcome) -> Result<()> {
    let base = s.ensemble()?;
    let n = base.dim_state;
    let m2 = moment_estimate(&base, 2.0)?;
    let mut head = vec!["node".to_string(), "t".to_string()];
    head.extend(indexed("mean_x", n));
    head.extend(["second_moment".to_string(), "second_moment_stderr".to_string()]);
    let mut t = Table::with_header("results.csv", head);
    for i in 0..=base.grid.num_steps() {
        let mut mean = vec![0.0; n];
        for m in 0..base.num_paths {
            for (acc, x) in mean.iter_mut().zip(base.state_slice(m, i)) {
                *acc += x;
            }
        }
        let mut row = vec![i.to_string(), num(base.grid.node(i))];
        row.extend(mean.iter().map(|x| num(x / base.num_paths as f64)));
        row.extend([num(m2.per_node[i].mean), num(m2.per_node[i].stderr)]);
        t.push(row);
    }
    out.tables.push(t);
    out.check("finite states", true, format!("{} paths x {} steps", base.num_paths, base.grid.num_steps()));
    let j = cost(&s.problem, &base);
    out.metric_set("cost", j.mean);
    out.metric_set("cost_stderr", j.stderr);
    out.metric_set("sup_second_moment", m2.sup().mean);
    if let (ControlConfig::Riccati, Some(ric), Some(spec)) = (&s.config.control, s.riccati()?, s.lq()) {
        let j_star = ric.value(0, &spec.x0);
        let tol = 3.0 * j.stderr + 2.0 * base.grid.step() * j_star.abs();
        out.check(
            "closed-loop cost vs Riccati value",
            (j.mean - j_star).abs() <= tol,
            format!("J = {:.6} +- {:.2e}, J* = {:.6}, tol {:.2e}", j.mean, j.stderr, j_star, tol),
        );
        out.metric_set("riccati_value", j_star);
    }
    Ok(())
}

fn variation_orders(s: &Setup, out: &mut Outcome) -> Result<()> {
    let base = s.ensemble()?;
    let family = s.family();
    let opts = ExpansionOptions {
        k: s.config.spike.k,
        ..ExpansionOptions::default()
    };
    let report = expansion_orders_on(&s.problem, &base, &family, &opts)?;
    let mut t = Table::new("results.csv", &["quantity", "eps", "moment", "stderr", "sup_node"]);
    for q in &report.quantities {
        for p in &q.points {
            t.push(vec![q.quantity.to_string(), num(p.eps), num(p.moment.mean), num(p.moment.stderr), p.node.to_string()]);
        }
        let detail = match q.fit {
            Some(f) => format!("slope {:.3} (R^2 {:.4}), band from {:.2}", f.slope, f.r_squared, q.threshold),
            None => "vanishes identically".into(),
        };
        out.check(format!("order of {}", q.quantity), q.passed, detail);
        if let Some(slope) = q.slope() {
            out.metric_set(&format!("slope_{}", q.quantity), slope);
        }
    }
    out.tables.push(t);
    Ok(())
}

fn cost_expansion(s: &Setup, out: &mut Outcome) -> Result<()> {
    let base = s.ensemble()?;
    let report = cost_expansion_check(&s.problem, &base, &s.family(), s.config.spike.min_slope)?;
    let mut t = Table::new(
        "results.csv",
        &["eps", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "residual", "residual_stderr"],
    );
    for p in &report.points {
        t.push(vec![
            num(p.eps),
            num(p.lhs.mean),
            num(p.lhs.stderr),
            num(p.rhs.mean),
            num(p.rhs.stderr),
            num(p.residual.mean),
            num(p.residual.stderr),
        ]);
    }
    out.tables.push(t);
    out.check(
        "cost expansion residual order",
        report.passed,
        format!(
            "slope {:.3} over {} resolved widths, required >= {:.2}",
            report.fit.slope, report.resolved, report.min_slope
        ),
    );
    out.metric_set("residual_slope", report.fit.slope);
    Ok(())
}

fn identity_verdict(out: &mut Outcome, name: &str, id: &DualityIdentity) {
    out.check(
        name,
        id.passed,
        format!(
            "lhs {:.5e}, rhs {:.5e}, residual {:.3e} +- {:.2e}, tol {:.3e}",
            id.lhs.mean, id.rhs.mean, id.residual.mean, id.residual.stderr, id.tolerance
        ),
    );
}

fn adjoint(s: &Setup, out: &mut Outcome) -> Result<()> {
    let base = s.ensemble()?;
    let adj = s.adjoints(&base)?;
    let (n, paths, steps) = (base.dim_state, base.num_paths, base.grid.num_steps());
    let oracle = match (&s.config.control, s.lq()) {
        (ControlConfig::Riccati, Some(spec)) => Some((riccati_solve(spec, &base.grid)?, second_adjoint_oracle(spec, &base.grid))),
        _ => None,
    };
    let mut head = vec!["node".to_string(), "t".to_string()];
    head.extend(indexed("mean_p", n));
    head.push("mean_trace_P".into());
    if oracle.is_some() {
        head.extend(["p_rel_err", "P_rel_err_lyapunov", "P_rel_dev_riccati"].map(String::from));
    }
    let mut t = Table::with_header("results.csv", head);
    let (mut worst_p, mut worst_lyap, mut worst_ric) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..=steps {
        let mut mean_p = vec![0.0; n];
        let mut mean_big = dissipative_smp::model::Matrix::zeros(n, n);
        let (mut err, mut norm) = (0.0, 0.0);
        for m in 0..paths {
            let p = adj.first.p(m, i);
            for (acc, x) in mean_p.iter_mut().zip(p.iter()) {
                *acc += x;
            }
            mean_big += adj.second.p(m, i);
            if let Some((ric, _)) = &oracle {
                let exact = ric.adjoint_p(i, &base.state(m, i));
                err += (p - &exact).norm_squared();
                norm += exact.norm_squared();
            }
        }
        mean_big /= paths as f64;
        let mut row = vec![i.to_string(), num(base.grid.node(i))];
        row.extend(mean_p.iter().map(|x| num(x / paths as f64)));
        row.push(num(mean_big.trace()));
        if let Some((ric, lyap)) = &oracle {
            let rel_p = if norm > 0.0 { (err / norm).sqrt() } else { err.sqrt() };
            let rel = |target: &dissipative_smp::model::Matrix| (&mean_big - target).norm() / target.norm().max(1e-300);
            let (rel_lyap, rel_ric) = (rel(&lyap[i]), rel(&(-&ric.s[i])));
            worst_p = worst_p.max(rel_p);
            worst_lyap = worst_lyap.max(rel_lyap);
            worst_ric = worst_ric.max(rel_ric);
            row.extend([num(rel_p), num(rel_lyap), num(rel_ric)]);
        }
        t.push(row);
    }
    out.tables.push(t);
    let tol = s.config.adjoint.oracle_tol;
    if oracle.is_some() {
        out.check(
            "first adjoint vs Riccati costate",
            worst_p <= tol,
            format!("max node relative error {worst_p:.4} (limit {tol})"),
        );
        out.check(
            "second adjoint vs Lyapunov solution",
            worst_lyap <= tol,
            format!("max node relative error {worst_lyap:.4} (limit {tol})"),
        );
        out.note(format!(
            "second adjoint vs -S (Riccati matrix): max node relative deviation {worst_ric:.4}; along the optimum P solves the Lyapunov equation and differs from -S whenever B != 0"
        ));
        out.metric_set("p_max_rel_err", worst_p);
        out.metric_set("P_max_rel_err_lyapunov", worst_lyap);
        out.metric_set("P_max_rel_dev_riccati", worst_ric);
    } else {
        out.note("no closed-form adjoint oracle for this problem and control; adjoint means written to results.csv");
    }
    if s.config.adjoint.duality {
        let family = s.family();
        let spike = SpikeSpec::new(family.start, family.widths[0], family.value.clone());
        let report = duality_check_first(&s.problem, &base, &spike, &adj.first)?;
        identity_verdict(out, "duality with first variation", &report.first_variation);
        identity_verdict(out, "duality with second variation", &report.second_variation);
    }
    Ok(())
}

fn smp(s: &Setup, out: &mut Outcome) -> Result<()> {
    let base = s.ensemble()?;
    let adj = s.adjoints(&base)?;
    let sample = s.control_sample();
    let opts = SmpOptions {
        record_violations: true,
        ..s.smp_options()
    };
    let report = smp_check(&s.problem, &base, &adj, &sample, &opts)?;
    let steps = base.grid.num_steps();
    let checked = report.samples / steps.max(1);
    let mut per_node = vec![std::collections::BTreeSet::new(); steps];
    let k = s.problem.dim_control();
    let mut head = vec!["node".to_string(), "t".to_string(), "path".to_string()];
    head.extend(indexed("u", k));
    head.extend(indexed("u_ref", k));
    let mut v = Table::with_header("violations.csv", head);
    for &(node, path, j) in &report.violation_set {
        per_node[node].insert(path);
        let mut row = vec![node.to_string(), num(base.grid.node(node)), path.to_string()];
        row.extend(sample[j].iter().map(|x| num(*x)));
        row.extend(base.control(path, node).iter().map(|x| num(*x)));
        v.push(row);
    }
    let mut t = Table::new("results.csv", &["node", "t", "points", "violating_points"]);
    for (i, set) in per_node.iter().enumerate() {
        t.push(vec![i.to_string(), num(base.grid.node(i)), checked.to_string(), set.len().to_string()]);
    }
    out.tables.push(t);
    out.tables.push(v);
    let mut detail = format!(
        "{} of {} (node, path) points violated ({:.3}%, limit {:.3}%), {} violating triples over {} sampled controls",
        report.violations,
        report.samples,
        100.0 * report.fraction(),
        100.0 * report.max_fraction,
        report.violating_triples,
        report.sample_size
    );
    if let Some(w) = report.worst() {
        detail += &format!(
            "; worst at t = {}, path {}: u = {} beats {} by {:.3e}",
            num(w.t),
            w.path,
            vec_str(&w.u),
            vec_str(&w.u_ref),
            w.excess
        );
    }
    out.check("maximum condition", report.passed(), detail);
    out.metric_set("violation_fraction", report.fraction());
    Ok(())
}

fn spike_inequality(s: &Setup, out: &mut Outcome) -> Result<()> {
    let base = s.ensemble()?;
    let adj = s.adjoints(&base)?;
    let values: Vec<Vector> = match &s.config.spike.values {
        Some(ws) => ws.iter().map(|w| Vector::from_column_slice(w)).collect(),
        None => s.problem.control_domain.sample_grid(5),
    };
    let report = spike_inequality_check(&s.problem, &base, &adj, &s.family(), &values, s.config.spike.tol)?;
    let k = s.problem.dim_control();
    let mut head = indexed("w", k);
    head.extend(["eps", "value_over_eps", "stderr"].map(String::from));
    let mut t = Table::with_header("results.csv", head);
    let mut best_ratio = f64::NEG_INFINITY;
    for v in &report.values {
        for p in &v.points {
            let mut row: Vec<String> = v.w.iter().map(|x| num(*x)).collect();
            row.extend([num(p.eps), num(p.scaled.mean), num(p.scaled.stderr)]);
            t.push(row);
            if p.scaled.stderr > 0.0 {
                best_ratio = best_ratio.max(p.scaled.mean / p.scaled.stderr);
            }
        }
        let last = v.points.last().expect("families have widths");
        out.check(
            format!("spike inequality at w = {}", vec_str(&v.w)),
            v.passed,
            format!(
                "value/eps {:.4e} +- {:.2e} at eps = {}{}",
                last.scaled.mean,
                last.scaled.stderr,
                num(last.eps),
                if v.positive { "; improvement resolved above 5 stderr" } else { "" }
            ),
        );
    }
    out.tables.push(t);
    let improving = report.detects_improvement();
    out.metric_set("improvement_detected", if improving { 1.0 } else { 0.0 });
    if best_ratio.is_finite() {
        out.metric_set("max_value_over_stderr", best_ratio);
    }
    if improving {
        out.note("some spike value lowers the cost by more than 5 stderr: the reference control is not optimal");
    }
    Ok(())
}

fn optimize(s: &Setup, out: &mut Outcome) -> Result<()> {
    let o = &s.config.optimize;
    let smp = s.smp_options();
    let options = OptimizerOptions {
        rho: o.rho,
        iters: o.iters,
        paths: s.config.ensemble.paths,
        seed: s.config.ensemble.seed,
        scheme: s.resolved.scheme,
        adjoint: AdjointOptions::with_basis(s.resolved.basis),
        divergence_window: o.divergence_window,
        max_halvings: o.max_halvings,
        grad_tol: o.grad_tol,
        vi_sample: s.control_sample(),
        vi_options: VariationalOptions {
            tol: smp.tol,
            tol_scale: smp.tol_scale,
            max_paths: smp.max_paths,
            max_fraction: smp.max_fraction,
        },
    };
    let result = projected_gradient_descent(&s.problem, &s.control()?, &options)?;
    let mut t = Table::new("results.csv", &["iter", "J", "stderr", "grad_norm", "rho"]);
    for r in &result.trace {
        t.push(vec![r.iter.to_string(), num(r.cost.mean), num(r.cost.stderr), num(r.grad_norm), num(r.rho)]);
    }
    out.tables.push(t);

    let ens = &result.ensemble;
    let k = ens.dim_control;
    let mut head = vec!["step".to_string(), "t".to_string()];
    head.extend(indexed("u_mean", k));
    head.extend(indexed("u_sd", k));
    let mut c = Table::with_header("control.csv", head);
    for i in 0..ens.grid.num_steps() {
        let mut sum = vec![0.0; k];
        let mut sq = vec![0.0; k];
        for m in 0..ens.num_paths {
            for (j, u) in ens.control(m, i).iter().enumerate() {
                sum[j] += u;
                sq[j] += u * u;
            }
        }
        let mp = ens.num_paths as f64;
        let mut row = vec![i.to_string(), num(ens.grid.node(i))];
        row.extend(sum.iter().map(|x| num(x / mp)));
        row.extend(sum.iter().zip(&sq).map(|(a, b)| num((b / mp - (a / mp).powi(2)).max(0.0).sqrt())));
        c.push(row);
    }
    out.tables.push(c);

    let last = result.trace.last().expect("trace is never empty");
    let j = result.final_cost();
    out.metric_set("iterations", last.iter as f64);
    out.metric_set("final_cost", j.mean);
    out.metric_set("final_cost_stderr", j.stderr);
    out.metric_set("final_grad_norm", last.grad_norm);
    out.metric_set("final_rho", result.rho);
    if let (Some(ric), Some(spec)) = (s.riccati()?, s.lq()) {
        let j_star = ric.value(0, &spec.x0);
        let rel = (j.mean - j_star).abs() / j_star.abs();
        out.check(
            "cost vs Riccati value",
            rel <= o.target_rel,
            format!(
                "J = {:.6} +- {:.2e} after {} iterations, J* = {:.6}, relative gap {:.3}% (limit {:.3}%)",
                j.mean,
                j.stderr,
                last.iter,
                j_star,
                100.0 * rel,
                100.0 * o.target_rel
            ),
        );
        out.metric_set("riccati_value", j_star);
    }
    let vi = result.variational.expect("the control sample is never empty");
    let mut detail = format!(
        "{} of {} (node, path) points violated ({:.3}%, limit {:.3}%)",
        vi.violations,
        vi.samples,
        100.0 * vi.fraction(),
        100.0 * vi.max_fraction
    );
    if let Some(w) = vi.worst() {
        detail += &format!("; worst at t = {}, path {}, excess {:.3e}", num(w.t), w.path, w.excess);
    }
    out.check("variational inequality at the final control", vi.passed(), detail);
    Ok(())
}

fn condition_verdict(out: &mut Outcome, name: &str, c: &ConditionCheck) {
    let mut detail = format!("{} of {} samples fail", c.failures, c.samples);
    if let Some(w) = c.witnesses.first() {
        detail += &format!("; witness: {w}");
    }
    out.check(name, c.passed(), detail);
}

fn sufficiency(s: &Setup, out: &mut Outcome) -> Result<()> {
    let base = s.ensemble()?;
    let adj = s.adjoints(&base)?;
    let f = &s.config.sufficiency;
    let opts = SufficiencyOptions {
        samples: f.samples,
        seed: f.seed,
        tol: f.tol,
        control_grid: f.control_grid,
        smp: s.smp_options(),
    };
    let report = sufficiency_check(&s.problem, &base, &adj, &opts)?;
    let mut t = Table::new("results.csv", &["check", "samples", "failures"]);
    for (name, c) in [
        ("terminal-convexity", &report.terminal_convexity),
        ("hamiltonian-concavity", &report.hamiltonian_concavity),
    ] {
        t.push(vec![name.into(), c.samples.to_string(), c.failures.to_string()]);
    }
    let m = &report.maximality;
    t.push(vec!["maximality".into(), m.samples.to_string(), m.violations.to_string()]);
    out.tables.push(t);
    condition_verdict(out, "terminal cost convex", &report.terminal_convexity);
    condition_verdict(out, "Hamiltonian concave in (x, u)", &report.hamiltonian_concavity);
    out.check(
        "maximum condition",
        m.passed(),
        format!("{} of {} (node, path) points violated ({:.3}%)", m.violations, m.samples, 100.0 * m.fraction()),
    );
    if report.passed() {
        out.note("sufficient conditions consistent on sample");
    }
    Ok(())
}

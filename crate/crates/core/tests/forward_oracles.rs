//! Simulation against closed-form and reference solutions.

use dissipative_smp::bench::{make_lq_problem, registry, riccati_solve, ScalarModel};
use dissipative_smp::forward::{moment_estimate, simulate, simulate_with_increments, BrownianIncrements, ControlProcess, Scheme};
use dissipative_smp::model::{ControlDomain, ControlProblem, GrowthExponents, TimeGrid};
use dissipative_smp::numerics::{loglog_fit, Estimate};
use dissipative_smp::variation::cost;

fn scalar(
    name: &str,
    horizon: f64,
    x0: f64,
    alpha: f64,
    b: impl Fn(f64) -> f64 + Send + Sync + 'static,
    bx: impl Fn(f64) -> f64 + Send + Sync + 'static,
    sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
    sx: f64,
) -> ControlProblem {
    ScalarModel::new()
        .drift(move |_, x, _| b(x), move |_, x, _| bx(x), |_, _, _| 0.0)
        .diffusion(move |_, x, _| sigma(x), move |_, _, _| sx, |_, _, _| 0.0)
        .into_problem(
            name,
            horizon,
            x0,
            alpha,
            sx.abs(),
            GrowthExponents {
                drift: 3,
                ..GrowthExponents::default()
            },
            ControlDomain::interval(-1.0, 1.0),
        )
        .unwrap()
}

fn zero(grid: TimeGrid) -> ControlProcess {
    ControlProcess::scalar_constant(grid, 0.0)
}

#[test]
fn ou_second_moment_matches_the_variance_formula() {
    let prob = scalar("ou", 1.0, 0.0, -1.0, |x| -x, |_| -1.0, |_| 1.0, 0.0);
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    for scheme in [Scheme::SplitStepImplicitDrift, Scheme::ExplicitEuler] {
        let ens = simulate(&prob, &zero(grid), &grid, 20_000, 11, scheme).unwrap();
        let m2 = moment_estimate(&ens, 2.0).unwrap();
        for i in [100, 500, 1000] {
            let t = grid.node(i);
            let exact = (1.0 - (-2.0 * t).exp()) / 2.0;
            let e = m2.per_node[i];
            // O(h) bias of the scheme is far below the noise here.
            assert!((e.mean - exact).abs() <= 3.0 * e.stderr + 1e-3, "{scheme} t={t}: {e:?} vs {exact}");
        }
    }
}

#[test]
fn cubic_moments_stay_bounded_as_the_horizon_grows() {
    let prob = |t: f64| scalar("cubic", t, 1.0, 1.0, |x| -x * x * x + x, |x| 1.0 - 3.0 * x * x, |_| 0.5, 0.0);
    let sup = |t: f64| {
        let grid = TimeGrid::new(t, (100.0 * t) as usize).unwrap();
        let ens = simulate(&prob(t), &zero(grid), &grid, 4000, 2, Scheme::SplitStepImplicitDrift).unwrap();
        moment_estimate(&ens, 4.0).unwrap().sup()
    };
    let (short, long) = (sup(5.0), sup(10.0));
    // The fourth moment settles near the double-well equilibrium.
    assert!(short.mean < 3.0, "{short:?}");
    assert!((long.mean - short.mean).abs() <= 4.0 * (short.stderr + long.stderr), "{short:?} vs {long:?}");
}

/// Strong error `E|x_N - x(T)|` on refinements sharing one Brownian path
/// set, against a reference computed from the same increments.
fn strong_errors(prob: &ControlProblem, exact: impl Fn(&[f64]) -> f64, finest: usize, levels: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let fine = BrownianIncrements::generate(4, 4000, finest, 1, 1.0 / finest as f64).unwrap();
    let (mut hs, mut errs, mut ses) = (vec![], vec![], vec![]);
    for &n in levels {
        let inc = fine.coarsen(finest / n).unwrap();
        let grid = TimeGrid::new(1.0, n).unwrap();
        let ens = simulate_with_increments(prob, &zero(grid), &inc, Scheme::ExplicitEuler).unwrap();
        let e: Vec<f64> = (0..ens.num_paths)
            .map(|m| {
                let dw: Vec<f64> = (0..finest).map(|i| fine.get(m, i, 0)).collect();
                (ens.state(m, n)[0] - exact(&dw)).abs()
            })
            .collect();
        let est = Estimate::from_samples(&e);
        hs.push(1.0 / n as f64);
        errs.push(est.mean);
        ses.push(est.stderr);
    }
    (hs, errs, ses)
}

#[test]
fn gbm_strong_order_is_one_half() {
    let prob = scalar("gbm", 1.0, 1.0, -1.0, |x| -x, |_| -1.0, |x| x, 1.0);
    let (hs, errs, ses) = strong_errors(&prob, |dw| (-1.5 + dw.iter().sum::<f64>()).exp(), 4096, &[8, 16, 32, 64, 128]);
    let fit = loglog_fit(&hs, &errs, &ses);
    assert!((0.35..=0.65).contains(&fit.slope), "{fit:?}");
}

#[test]
fn additive_noise_ou_has_strong_order_one() {
    let prob = scalar("ou", 1.0, 1.0, -1.0, |x| -x, |_| -1.0, |_| 1.0, 0.0);
    // Exact OU from the fine increments: x(T) = e^{-T} + sum e^{-(T - s)} dW.
    let finest = 4096;
    let h = 1.0 / finest as f64;
    let exact = |dw: &[f64]| {
        (-1.0f64).exp()
            + dw.iter()
                .enumerate()
                .map(|(i, w)| (-(1.0 - (i as f64 + 0.5) * h)).exp() * w)
                .sum::<f64>()
    };
    let (hs, errs, ses) = strong_errors(&prob, exact, finest, &[8, 16, 32, 64]);
    let fit = loglog_fit(&hs, &errs, &ses);
    assert!((0.8..=1.2).contains(&fit.slope), "{fit:?}");
}

#[test]
fn lq_closed_loop_cost_matches_riccati() {
    for spec in [registry::lq_scalar(), registry::lq_2d()] {
        let prob = make_lq_problem("lq", &spec).unwrap();
        let mut gaps = vec![];
        for n in [50, 100, 200] {
            let grid = TimeGrid::new(spec.horizon, n).unwrap();
            let ric = riccati_solve(&spec, &grid).unwrap();
            let ens = simulate(&prob, &ric.feedback(&spec.domain), &grid, 20_000, 6, Scheme::SplitStepImplicitDrift).unwrap();
            let j = cost(&prob, &ens);
            let j_star = ric.value(0, &spec.x0);
            let gap = j.mean - j_star;
            assert!(gap.abs() <= 3.0 * j.stderr + 2.0 / n as f64 * j_star, "N={n}: {j:?} vs {j_star}");
            gaps.push(gap);
        }
        // Same seed on every grid, so the discretization bias is visible.
        assert!(gaps[2].abs() < gaps[0].abs() || gaps[0].abs() < 1e-3, "{gaps:?}");
    }
}

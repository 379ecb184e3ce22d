use std::f64::consts::PI;

use dkam::flow::integrate_lagrangian;
use dkam::model::*;
use dkam::rng::StartSampler;
use dkam::value::*;
use dkam::System;
use proptest::prelude::*;

fn sys(name: &str, lambda: f64) -> System {
    builtin(name, &SystemParams { lambda, ..Default::default() }).unwrap()
}

/// ū on [0, π] for the pendulum from `λu + ½u'² = 1 − cos x` on the
/// increasing branch, started from the exact quadratic germ `u ≈ c x²`.
fn pendulum_oracle(lambda: f64, x_end: f64) -> f64 {
    let c = (-2.0 * lambda + (4.0 * lambda * lambda + 16.0).sqrt()) / 8.0;
    let x0 = 1e-4;
    let f = |x: f64, u: f64| (2.0 * (1.0 - x.cos()) - 2.0 * lambda * u).max(0.0).sqrt();
    let steps = 200_000;
    let h = (x_end - x0) / steps as f64;
    let (mut x, mut u) = (x0, c * x0 * x0);
    for _ in 0..steps {
        let k1 = f(x, u);
        let k2 = f(x + h / 2.0, u + h / 2.0 * k1);
        let k3 = f(x + h / 2.0, u + h / 2.0 * k2);
        let k4 = f(x + h, u + h * k3);
        u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        x += h;
    }
    u
}

fn pendulum_solution(n: usize, h: f64) -> (GridField<f64>, SolveReport) {
    solve_value(&sys("pendulum", 0.2), &TorusGrid::new(1, &[n]).unwrap(), h, 1e-6, 100_000).unwrap()
}

#[test]
fn pendulum_matches_the_ode_oracle() {
    let (u, report) = pendulum_solution(512, 0.01);
    assert!(report.guaranteed_error <= 1e-6 && report.guaranteed_error >= report.final_residual);
    let oracle = pendulum_oracle(0.2, PI);
    assert!((oracle - 3.4717).abs() < 1e-3, "oracle {oracle}");
    assert!((u.values[256] - oracle).abs() <= 2e-2, "ū(π) = {}", u.values[256]);
    // F(π, 0) = λū(π) − 2 is well inside Z⁻
    let f = 0.2 * u.values[256] - 2.0;
    assert!(f < -1.28 && f > -1.32, "F(π,0) = {f}");
    for i in (0..256).step_by(32) {
        let x = u.grid.node(i)[0];
        assert!((u.values[i] - pendulum_oracle(0.2, x.max(2e-4))).abs() <= 2e-2);
    }
}

#[test]
fn pendulum_structure() {
    let (u, _) = pendulum_solution(512, 0.01);
    assert!(u.min() >= -1e-9);
    assert!(u.values[0] <= 1e-3);
    let n = u.grid.len();
    assert!((1..n).all(|i| (u.values[i] - u.values[n - i]).abs() <= 1e-6));
    let du = gradient_field(&u);
    let kinks: Vec<usize> = (0..n).filter(|i| du.is_kink(*i)).collect();
    assert_eq!(kinks, vec![256]);
    let res = subsolution_residual(&sys("pendulum", 0.2), &u);
    assert!(max_residual_off_kinks(&res) <= 2e-2);
    assert!(calibrated_speed(&sys("pendulum", 0.2), &du) <= 3.0);
}

#[test]
fn residual_direction_and_mane_zero() {
    let pend = sys("pendulum", 0.2);
    let grid = TorusGrid::new(1, &[64]).unwrap();
    let res = subsolution_residual(&pend, &GridField::constant(grid, 1.5));
    assert!((res.values[0] - 0.3).abs() < 1e-15);
    let mane = sys("mane2d", 0.1);
    let g2 = TorusGrid::new(2, &[32]).unwrap();
    let res = subsolution_residual(&mane, &GridField::constant(g2, 0.0));
    assert!(res.values.iter().all(|r| *r == 0.0));
    let du = gradient_field(&GridField::constant(g2, 2.0));
    assert_eq!(du.kink_count(), 0);
    assert!(du.values.iter().all(|g| g[0] == 0.0 && g[1] == 0.0));
}

#[test]
fn mane_solution_vanishes() {
    let (u, _) = solve_value(&sys("mane2d", 0.1), &TorusGrid::new(2, &[64]).unwrap(), 0.05, 1e-6, 1000).unwrap();
    assert!(u.sup_norm() <= 5e-3);
    let t = lax_oleinik_step(&sys("mane2d", 0.1), &GridField::constant(TorusGrid::new(2, &[32]).unwrap(), 0.0), 0.05)
        .unwrap();
    assert!(t.sup_norm() == 0.0);
}

#[test]
fn step_bound_at_the_maximum() {
    let pend = sys("pendulum", 0.2);
    let t = lax_oleinik_step(&pend, &GridField::constant(TorusGrid::new(1, &[128]).unwrap(), 0.0), 0.05).unwrap();
    assert!(t.values[64] <= 0.1 + 1e-15);
    assert!(matches!(lax_oleinik_step(&pend, &t, 3.0), Err(dkam::Error::Precondition(_))));
}

#[test]
fn grid_refinement_converges_monotonically() {
    let fine: Vec<GridField<f64>> = [128usize, 256, 512, 1024].iter().map(|n| pendulum_solution(*n, 0.02).0).collect();
    // compare on the coarse nodes
    let gap = |a: &GridField<f64>, b: &GridField<f64>| {
        let ratio = b.grid.len() / a.grid.len();
        (0..a.grid.len()).map(|i| (a.values[i] - b.values[i * ratio]).abs()).fold(0.0, f64::max)
    };
    let d: Vec<f64> = fine.windows(2).map(|w| gap(&w[0], &w[1])).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "gaps {d:?}");
}

#[test]
fn a_posteriori_bound_is_honoured() {
    let s = sys("pendulum", 0.2);
    let grid = TorusGrid::new(1, &[256]).unwrap();
    let (coarse, report) = solve_value(&s, &grid, 0.02, 1e-4, 100_000).unwrap();
    let (tight, _) = solve_value(&s, &grid, 0.02, 1e-5, 100_000).unwrap();
    assert!(coarse.distance(&tight) < report.guaranteed_error);
}

#[test]
fn non_convergence_carries_the_report() {
    match solve_value(&sys("pendulum", 0.2), &TorusGrid::new(1, &[64]).unwrap(), 0.05, 1e-9, 5) {
        Err(dkam::Error::NonConvergence(report)) => assert_eq!(report.iterations, 5),
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn lattice_search_agrees_on_smooth_fields() {
    let s = sys("pendulum", 0.2);
    let grid = TorusGrid::new(1, &[256]).unwrap();
    let mut opts = SolveOptions::new(0.02, 1e-6, 100_000);
    let (exact, _) = solve_value_with(&s, &grid, &opts).unwrap();
    opts.step.search = VelocitySearch::Lattice;
    let (lattice, _) = solve_value_with(&s, &grid, &opts).unwrap();
    assert!(exact.distance(&lattice) <= 1e-3, "{}", exact.distance(&lattice));
}

#[test]
fn domination_along_flow_lines() {
    let s = sys("pendulum", 0.2);
    let (u, _) = pendulum_solution(512, 0.01);
    let mut rng = StartSampler::new(4);
    let curves: Vec<_> =
        (0..30).map(|_| integrate_lagrangian(&s, &rng.tangent_point::<f64>(1, 2.0), 0.0, 5.0, 1e-2).unwrap()).collect();
    let worst = domination_check(&s, &u, &curves).unwrap();
    assert!(worst <= 5e-3, "worst {worst}");
    let rest = integrate_lagrangian(&s, &TangentPoint::new(1, &[0.0], &[0.0]), 0.0, 5.0, 1e-2).unwrap();
    assert!(domination_defect(&s, &u, &rest).unwrap().abs() <= 1e-9);
    let mane = sys("mane2d", 0.1);
    let x0 = [0.4, 1.0];
    let along =
        integrate_lagrangian(&mane, &TangentPoint::new(2, &x0, &mane.dh_dp(&x0, &[0.0, 0.0])), 0.0, 5.0, 1e-2).unwrap();
    let zero = GridField::constant(TorusGrid::new(2, &[32]).unwrap(), 0.0);
    assert!(domination_defect(&mane, &zero, &along).unwrap().abs() <= 1e-9);
}

fn field(grid: TorusGrid<f64>, values: Vec<f64>) -> GridField<f64> {
    GridField { grid, values, kink_mask: None }
}

fn noise(seed: u64, n: usize, amp: f64) -> Vec<f64> {
    let mut rng = StartSampler::new(seed);
    (0..n).map(|_| rng.uniform_in(-amp, amp)).collect()
}

fn case(which: usize) -> (System, TorusGrid<f64>, f64) {
    match which {
        0 => (sys("pendulum", 0.2), TorusGrid::new(1, &[64]).unwrap(), 0.05),
        1 => {
            let s = builtin("integrable", &SystemParams { lambda: 0.2, eta: Some(vec![0.1]), ..Default::default() })
                .unwrap();
            (cohomology_shift(&s).unwrap(), TorusGrid::new(1, &[64]).unwrap(), 0.05)
        }
        _ => (sys("mane2d", 0.1), TorusGrid::new(2, &[16]).unwrap(), 0.1),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn operator_is_a_contraction(which in 0usize..3, seed in any::<u64>(), shift in -1.0..1.0f64, near in any::<bool>()) {
        let (s, grid, h) = case(which);
        let u = field(grid, noise(seed, grid.len(), 1.0));
        let w = if near {
            field(grid, u.values.iter().zip(noise(seed ^ 1, grid.len(), 1e-3)).map(|(a, e)| a + shift + e).collect())
        } else {
            field(grid, noise(seed ^ 2, grid.len(), 2.0))
        };
        let (tu, tw) = (lax_oleinik_step(&s, &u, h).unwrap(), lax_oleinik_step(&s, &w, h).unwrap());
        let rounding = 4.0 * f64::EPSILON * (tu.sup_norm() + tw.sup_norm() + u.sup_norm() + w.sup_norm());
        prop_assert!(tu.distance(&tw) <= (-s.lambda * h).exp() * u.distance(&w) + rounding);
    }

    #[test]
    fn operator_is_monotone(which in 0usize..3, seed in any::<u64>()) {
        let (s, grid, h) = case(which);
        let u = field(grid, noise(seed, grid.len(), 1.0));
        let w = field(grid, u.values.iter().zip(noise(seed ^ 3, grid.len(), 0.5)).map(|(a, e)| a + e.abs()).collect());
        let (tu, tw) = (lax_oleinik_step(&s, &u, h).unwrap(), lax_oleinik_step(&s, &w, h).unwrap());
        for (a, b) in tu.values.iter().zip(&tw.values) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn constants_commute_with_the_operator(which in 0usize..3, seed in any::<u64>(), c in -3.0..3.0f64) {
        let (s, grid, h) = case(which);
        let u = field(grid, noise(seed, grid.len(), 1.0));
        let shifted = field(grid, u.values.iter().map(|v| v + c).collect());
        let (tu, ts) = (lax_oleinik_step(&s, &u, h).unwrap(), lax_oleinik_step(&s, &shifted, h).unwrap());
        let disc = (-s.lambda * h).exp();
        for (a, b) in tu.values.iter().zip(&ts.values) {
            prop_assert!((b - a - disc * c).abs() <= 1e-12);
        }
    }
}

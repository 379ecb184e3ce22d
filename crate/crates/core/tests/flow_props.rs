use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use dkam::flow::*;
use dkam::model::*;
use dkam::rng::StartSampler;
use dkam::System;
use proptest::prelude::*;

fn sys(name: &str, lambda: f64) -> System {
    builtin(name, &SystemParams { lambda, eta: Some(vec![0.1]), ..Default::default() }).unwrap()
}

#[test]
fn rhs_reference_values() {
    let pend = sys("pendulum", 0.2);
    let (dx, dp) = hamiltonian_rhs(&pend, &[PI, 0.0], &[0.0, 0.0]);
    assert_abs_diff_eq!(dx[0], 0.0);
    assert!(dp[0].abs() < 1e-15);
    let (dx, dp) = hamiltonian_rhs(&pend, &[0.0, 0.0], &[1.0, 0.0]);
    assert_abs_diff_eq!(dx[0], 1.0);
    assert_abs_diff_eq!(dp[0], -0.2, epsilon = 1e-15);
}

#[test]
fn integrable_closed_form_at_one() {
    let s = sys("integrable", 0.2);
    let traj = integrate_hamiltonian(&s, &PhasePoint::new(1, &[0.0], &[1.0]), 0.0, 1.0, 1e-3).unwrap();
    assert_abs_diff_eq!(traj.y[traj.len() - 1][0], 0.909365, epsilon = 1e-6);
}

#[test]
fn equilibria_are_constant() {
    let pend = sys("pendulum", 0.2);
    let traj = integrate_hamiltonian(&pend, &PhasePoint::new(1, &[PI], &[0.0]), 0.0, 30.0, 0.01).unwrap();
    for i in 0..traj.len() {
        assert!((traj.x[i][0] - PI).abs() < 1e-12 && traj.y[i][0].abs() < 1e-12);
    }
    let lag = integrate_lagrangian(&pend, &TangentPoint::new(1, &[0.0], &[0.0]), 0.0, 10.0, 0.01).unwrap();
    assert!(lag.y.iter().all(|v| v[0] == 0.0) && lag.x.iter().all(|x| x[0] == 0.0));
    assert_eq!(energy_dissipation_residual(&pend, &lag_to_ham(&pend, &lag)).unwrap(), 0.0);
}

fn lag_to_ham(sys: &System, traj: &Trajectory<f64>) -> Trajectory<f64> {
    let start = legendre_to_cotangent(sys, &traj.tangent_point(0));
    integrate_hamiltonian(sys, &start, traj.first_time(), traj.last_time(), traj.dt).unwrap()
}

#[test]
fn mane_zero_section_is_invariant() {
    let s = sys("mane2d", 0.1);
    let x0 = [0.0, 0.0];
    let traj =
        integrate_lagrangian(&s, &TangentPoint::new(2, &x0, &s.dh_dp(&x0, &[0.0, 0.0])), 0.0, 10.0, 1e-3).unwrap();
    assert_abs_diff_eq!(traj.y[0][0], 1.0);
    for i in 0..traj.len() {
        let x = traj.x[i];
        let field = s.dh_dp(&x, &[0.0, 0.0]);
        assert!((traj.y[i][0] - field[0]).abs() <= 1e-6 && (traj.y[i][1] - field[1]).abs() <= 1e-6);
    }
    assert!(discounted_action(&s, &traj, 0.0, 10.0).unwrap().abs() < 1e-9);
}

#[test]
fn conjugation_is_exact() {
    let s = sys("pendulum", 0.2);
    let mut rng = StartSampler::new(21);
    for _ in 0..10 {
        let tp = rng.tangent_point::<f64>(1, 2.0);
        let lag = integrate_lagrangian(&s, &tp, 0.0, 2.0, 1e-3).unwrap();
        let ham = integrate_hamiltonian(&s, &legendre_to_cotangent(&s, &tp), 0.0, 2.0, 1e-3).unwrap();
        let last = lag.len() - 1;
        let mapped = legendre_to_tangent(&s, &ham.phase_point(last));
        assert!((mapped.x[0] - lag.x[last][0]).abs() <= 1e-9);
        assert!((mapped.v[0] - lag.y[last][0]).abs() <= 1e-9);
    }
}

#[test]
fn discounted_action_of_constant_curves() {
    let s = sys("pendulum", 0.2);
    let at_zero = integrate_lagrangian(&s, &TangentPoint::new(1, &[0.0], &[0.0]), -10.0, 0.0, 0.01).unwrap();
    assert_abs_diff_eq!(discounted_action(&s, &at_zero, -10.0, 0.0).unwrap(), 0.0);
    let at_pi = integrate_lagrangian(&s, &TangentPoint::new(1, &[PI], &[0.0]), -60.0, 0.0, 0.01).unwrap();
    let action = discounted_action(&s, &at_pi, -60.0, 0.0).unwrap();
    assert!((action - 10.0).abs() <= 1e-4, "action {action}");
}

#[test]
fn energy_dissipation_identity_holds() {
    let mut rng = StartSampler::new(8);
    for (name, lambda) in [("pendulum", 0.2), ("mane2d", 0.1), ("integrable", 0.2)] {
        let s = sys(name, lambda);
        for _ in 0..20 {
            let start = rng.phase_point::<f64>(s.dim(), 2.0);
            let traj = integrate_hamiltonian(&s, &start, 0.0, 5.0, 1e-3).unwrap();
            let r = energy_dissipation_residual(&s, &traj).unwrap();
            assert!(r <= 1e-7, "{name}: residual {r}");
        }
    }
}

#[test]
fn contraction_factor_at_zero_time_is_one() {
    let s = sys("mane2d", 0.1);
    assert_eq!(volume_contraction_factor(&s, &PhasePoint::new(2, &[1.0, 2.0], &[0.3, -0.4]), 0.0, 0.01).unwrap(), 1.0);
}

#[test]
fn pendulum_orbits_settle_on_equilibria() {
    let s = sys("pendulum", 0.2);
    let mut rng = StartSampler::new(99);
    for _ in 0..50 {
        let start = rng.phase_point::<f64>(1, 3.0);
        let end = flow_map(&s, &start, 200.0, 0.01).unwrap();
        let near = |x: f64| dkam::scalar::angle_diff(end.x[0], x).abs() <= 1e-3 && end.p[0].abs() <= 1e-3;
        assert!(near(0.0) || near(PI), "ended at {:?}", end);
    }
}

#[test]
fn backward_integration_returns_increasing_times() {
    let s = sys("pendulum", 0.2);
    let traj = integrate_hamiltonian(&s, &PhasePoint::new(1, &[1.0], &[0.5]), 0.0, -3.0, 0.01).unwrap();
    assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
    assert_abs_diff_eq!(traj.last_time(), 0.0);
    assert_eq!(traj.phase_point(traj.len() - 1), PhasePoint::new(1, &[1.0], &[0.5]));
}

#[test]
fn quadrature_is_exact_for_cubics() {
    let h = 0.1;
    for n in [5usize, 6, 9, 12] {
        let f: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(3) - 2.0 * (i as f64 * h)).collect();
        let b = (n - 1) as f64 * h;
        assert_abs_diff_eq!(simpson(&f, h), b.powi(4) / 4.0 - b * b, epsilon = 1e-12);
        let cum = cumulative_simpson(&f, h);
        for (i, c) in cum.iter().enumerate() {
            let t = i as f64 * h;
            assert_abs_diff_eq!(*c, t.powi(4) / 4.0 - t * t, epsilon = 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn volume_contracts_conformally(which in 0usize..3, seed in any::<u64>(), t in 0.1..2.0f64) {
        let (name, lambda) = [("pendulum", 0.2), ("mane2d", 0.1), ("integrable", 0.2)][which];
        let s = sys(name, lambda);
        let start = StartSampler::new(seed).phase_point::<f64>(s.dim(), 2.0);
        let det = volume_contraction_factor(&s, &start, t, 1e-3).unwrap();
        let expected = (-(s.dim() as f64) * lambda * t).exp();
        prop_assert!((det - expected).abs() / expected <= 1e-4);
    }

    #[test]
    fn forward_then_backward_returns(seed in any::<u64>()) {
        let s = sys("pendulum", 0.2);
        let start = StartSampler::new(seed).phase_point::<f64>(1, 2.0);
        let there = flow_map(&s, &start, 2.0, 1e-3).unwrap();
        let back = flow_map(&s, &there, -2.0, 1e-3).unwrap();
        prop_assert!(dkam::scalar::angle_diff(back.x[0], start.x[0]).abs() <= 1e-8);
        prop_assert!((back.p[0] - start.p[0]).abs() <= 1e-8);
    }
}

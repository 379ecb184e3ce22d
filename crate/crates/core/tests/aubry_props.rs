use std::f64::consts::PI;

use dkam::aubry::*;
use dkam::model::*;
use dkam::scalar::torus_distance;
use dkam::value::*;
use dkam::System;

fn sys(name: &str, lambda: f64) -> System {
    builtin(name, &SystemParams { lambda, ..Default::default() }).unwrap()
}

fn shifted_integrable() -> System {
    let s = builtin("integrable", &SystemParams { lambda: 0.2, eta: Some(vec![0.1]), ..Default::default() }).unwrap();
    cohomology_shift(&s).unwrap()
}

fn approx(s: &System, n: usize, h: f64, sigma_dt: f64) -> (GridField<f64>, AubryApprox<f64>) {
    let grid = TorusGrid::new(s.dim(), &[n]).unwrap();
    let (u, _) = solve_value(s, &grid, h, 1e-6, 100_000).unwrap();
    let du = gradient_field(&u);
    let mut opts = SigmaOptions::for_lambda(s.lambda);
    opts.dt = sigma_dt;
    let (sigma, tail) = sigma_set(s, &u, &du, &opts).unwrap();
    let mut trap = TrapOptions::for_grid(&grid);
    trap.dt = 0.05;
    let a = aubry_set(s, &grid, &sigma, opts.eps, tail, &trap).unwrap();
    (u, a)
}

#[test]
fn pendulum_aubry_is_the_bottom_equilibrium() {
    let s = sys("pendulum", 0.2);
    let (u, a) = approx(&s, 512, 0.01, 0.01);
    let spacing = 2.0 * PI / 512.0;
    assert!(!a.points.is_empty());
    for g in &a.points {
        assert!(torus_distance(1, &g.point.x, &[0.0, 0.0]) <= spacing, "{:?}", g.point);
        assert!(g.point.p[0].abs() <= spacing);
        assert!(g.defect <= a.epsilon);
    }
    // Aubry points sit on the zero level of F
    for g in &a.points {
        let f = s.lambda * u.interpolate(&g.point.x) + s.hamiltonian(&g.point.x, &g.point.p);
        assert!(f.abs() <= 2e-2);
    }
    let (injective, lip) = graph_property_check(&a);
    assert!(injective && lip.is_finite());
}

#[test]
fn integrable_and_mane_aubry_cover_the_torus() {
    let s = shifted_integrable();
    let (_, a) = approx(&s, 128, 0.05, 0.05);
    assert_eq!(a.points.len(), 128);
    assert!(a.points.iter().all(|g| g.point.p[0].abs() <= 1e-6));
    assert!(graph_property_check(&a).0);

    let m = sys("mane2d", 0.1);
    let (_, a) = approx(&m, 32, 0.05, 0.05);
    assert_eq!(a.points.len(), 32 * 32);
    assert!(a.points.iter().all(|g| g.point.p[0] == 0.0 && g.point.p[1] == 0.0));
}

#[test]
fn duplicated_projection_breaks_the_graph_property() {
    let s = shifted_integrable();
    let (_, mut a) = approx(&s, 64, 0.05, 0.05);
    let mut twin = a.points[3];
    twin.point.p[0] += 0.5;
    a.points.push(twin);
    assert!(!graph_property_check(&a).0);
}

#[test]
fn longer_trapping_does_not_change_the_pendulum_set() {
    let s = sys("pendulum", 0.2);
    let grid = TorusGrid::new(1, &[256]).unwrap();
    let (u, _) = solve_value(&s, &grid, 0.02, 1e-6, 100_000).unwrap();
    let du = gradient_field(&u);
    let mut opts = SigmaOptions::for_lambda(0.2);
    opts.dt = 0.05;
    let (sigma, tail) = sigma_set(&s, &u, &du, &opts).unwrap();
    let mut trap = TrapOptions::for_grid(&grid);
    trap.dt = 0.05;
    let short = aubry_nodes(&aubry_set(&s, &grid, &sigma, opts.eps, tail, &trap).unwrap());
    trap.t_fwd *= 2.0;
    let long = aubry_nodes(&aubry_set(&s, &grid, &sigma, opts.eps, tail, &trap).unwrap());
    assert_eq!(short, long);
}

#[test]
fn calibration_defect_off_the_kink_is_small() {
    // away from x = π the backward curve runs down the unstable manifold of
    // the bottom equilibrium and calibrates to within the grid error
    let s = sys("pendulum", 0.2);
    let grid = TorusGrid::new(1, &[2048]).unwrap();
    let (u, _) = solve_value(&s, &grid, 0.0025, 1e-7, 1_000_000).unwrap();
    let du = gradient_field(&u);
    let report = backward_calibrated_curve(&s, &u, &du, &[2.0, 0.0], 40.0, 0.01).unwrap();
    assert!(report.defect <= 5e-3, "defect {}", report.defect);
}

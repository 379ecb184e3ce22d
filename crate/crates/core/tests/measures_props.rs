use std::f64::consts::PI;

use dkam::attractor::{BoxGrid, CellSet};
use dkam::aubry::*;
use dkam::measures::*;
use dkam::model::*;
use dkam::rng::StartSampler;
use dkam::value::*;
use dkam::System;

fn sys(name: &str, lambda: f64) -> System {
    builtin(name, &SystemParams { lambda, ..Default::default() }).unwrap()
}

fn pendulum_value() -> GridField<f64> {
    solve_value(&sys("pendulum", 0.2), &TorusGrid::new(1, &[256]).unwrap(), 0.02, 1e-6, 100_000).unwrap().0
}

fn boxes1() -> BoxGrid<f64> {
    BoxGrid::new(1, 3.0, &[64], &[64]).unwrap()
}

#[test]
fn generic_pendulum_orbits_settle_at_the_energy_minimum() {
    let s = sys("pendulum", 0.2);
    let u = pendulum_value();
    let boxes = boxes1();
    let mut rng = StartSampler::new(9);
    for _ in 0..5 {
        let start = rng.tangent_point::<f64>(1, 1.5);
        let mu = occupation_measure(&s, &start, 50.0, 100.0, &boxes, 0.01).unwrap();
        assert!((mu.total_mass() - 1.0_f64).abs() <= 1e-12);
        let far = mu
            .cells
            .iter()
            .filter(|c| dkam::scalar::torus_distance(1, &c.centroid.x, &[PI, 0.0]) > 0.2)
            .map(|c| c.weight)
            .sum::<f64>();
        assert!(far <= 0.05, "mass away from π: {far}");
        let fun = measure_functionals(&s, &u, &mu);
        // not minimizing: the defect is close to 2 − λū(π)
        assert!((fun.action_defect - (2.0 - 0.2 * u.values[128])).abs() <= 0.1);
        assert!(invariance_residual(&s, &mu, 5.0, 0.01).unwrap() <= 0.15);
    }
}

#[test]
fn the_saddle_is_a_minimizing_dirac() {
    let s = sys("pendulum", 0.2);
    let u = pendulum_value();
    let boxes = boxes1();
    let mu = occupation_measure(&s, &TangentPoint::new(1, &[0.0], &[0.0]), 25.0, 100.0, &boxes, 0.01).unwrap();
    assert!(mu.cells.iter().all(|c| c.centroid.x[0] == 0.0 && c.centroid.v[0] == 0.0));
    let fun = measure_functionals(&s, &u, &mu);
    assert!(fun.action_defect.abs() <= 1e-3 && fun.lplush.abs() <= 1e-12 && fun.momentum_norm == 0.0);
    assert!(invariance_residual(&s, &mu, 5.0, 0.01).unwrap() <= 1e-12);
}

#[test]
fn uniform_measure_is_not_invariant() {
    let s = sys("pendulum", 0.2);
    let boxes = boxes1();
    let cells: Vec<usize> = (0..boxes.len()).step_by(97).collect();
    let mu = OccupationMeasure::uniform(boxes, &cells);
    assert!((mu.total_mass() - 1.0_f64).abs() <= 1e-12);
    assert!(invariance_residual(&s, &mu, 5.0, 0.01).unwrap() >= 0.9);
}

#[test]
fn short_windows_are_rejected() {
    let s = sys("pendulum", 0.2);
    let start = TangentPoint::new(1, &[1.0], &[0.0]);
    assert!(occupation_measure(&s, &start, 10.0, 100.0, &boxes1(), 0.01).is_err());
    assert!(occupation_measure(&s, &start, 25.0, 50.0, &boxes1(), 0.01).is_err());
    let mu = occupation_measure(&s, &start, 25.0, 100.0, &boxes1(), 0.01).unwrap();
    assert!(invariance_residual(&s, &mu, 20.0, 0.01).is_err());
}

#[test]
fn mane_orbits_converge_to_the_circles() {
    let s = sys("mane2d", 0.1);
    let boxes = BoxGrid::new(2, 3.0, &[32, 32], &[32, 32]).unwrap();
    let x = [0.1, 0.0];
    let start = TangentPoint::new(2, &x, &s.dh_dp(&x, &[0.0, 0.0]));
    let mu = occupation_measure(&s, &start, 100.0, 200.0, &boxes, 0.01).unwrap();
    let width = boxes.width(0);
    assert!(mu.cells.iter().all(|c| (c.centroid.x[0] - PI / 2.0).abs() <= width));
    let zero = GridField::constant(TorusGrid::new(2, &[32]).unwrap(), 0.0);
    assert!(measure_functionals(&s, &zero, &mu).action_defect.abs() <= 1e-2);
}

#[test]
fn integrable_mather_set_is_the_rotating_circle() {
    let base =
        builtin("integrable", &SystemParams { lambda: 0.2, eta: Some(vec![0.1]), ..Default::default() }).unwrap();
    let s = cohomology_shift(&base).unwrap();
    let grid = TorusGrid::new(1, &[64]).unwrap();
    let (u, _) = solve_value(&s, &grid, 0.05, 1e-6, 100_000).unwrap();
    let du = gradient_field(&u);
    let mut sigma_opts = SigmaOptions::for_lambda(0.2);
    sigma_opts.dt = 0.05;
    let (sigma, tail) = sigma_set(&s, &u, &du, &sigma_opts).unwrap();
    let aubry = aubry_set(&s, &grid, &sigma, sigma_opts.eps, tail, &TrapOptions::for_grid(&grid)).unwrap();
    let boxes: BoxGrid<f64> = BoxGrid::new(1, 3.0, &[64], &[64]).unwrap();
    let mut opts = MeasureOptions::for_lambda(0.2);
    opts.dt = 0.05;
    let seeds = aubry_seeds(&s, &aubry, 64);
    let (mather, measures) = mather_set(&s, &u, &seeds, &boxes, &opts).unwrap();
    assert_eq!(measures.len(), 64);
    // every position column, one velocity row at the rotation speed η/λ
    let mut columns = vec![0usize; 64];
    for c in mather.indices() {
        let m = boxes.multi(c);
        columns[m[0]] += 1;
        assert!((boxes.center(c).p[0] - 0.5).abs() <= boxes.width(1));
    }
    assert!(columns.iter().all(|k| (1..=2).contains(k)), "{columns:?}");
}

#[test]
fn hausdorff_distance_basics() {
    let boxes = boxes1();
    let a = CellSet::from_cells(boxes, [10, 20, 30]);
    let b = CellSet::from_cells(boxes, [10, 21]);
    assert_eq!(hausdorff_distance(&a, &a), 0.0);
    assert_eq!(hausdorff_distance(&a, &b), hausdorff_distance(&b, &a));
    assert!(hausdorff_distance(&a, &b) > 0.0);
    assert!(hausdorff_distance(&a, &CellSet::empty(boxes)).is_infinite());
}

#[test]
fn limit_study_needs_decreasing_rates() {
    let opts = LimitOptions {
        grid: TorusGrid::new(1, &[128]).unwrap(),
        h: 0.05,
        tol: 1e-6,
        max_iter: 100_000,
        measure_box: boxes1(),
        extra_seeds: vec![],
        sigma_eps: 2e-2,
        sigma_dt: 0.05,
        trap_dt: 0.05,
        probe: None,
    };
    let builder = |lambda: f64| builtin("pendulum", &SystemParams { lambda, ..Default::default() });
    assert!(limit_study(builder, &[0.1, 0.2], &opts).is_err());
    let rows = limit_study(builder, &[0.4, 0.2], &opts).unwrap();
    assert!(rows.iter().all(|r| r.error.is_none() && r.alpha_hat.abs() <= 1e-3));
    assert!(rows[1].sup_lambda_u < rows[0].sup_lambda_u);
}

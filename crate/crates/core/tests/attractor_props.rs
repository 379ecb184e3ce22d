use std::f64::consts::PI;

use dkam::attractor::*;
use dkam::flow::*;
use dkam::model::*;
use dkam::rng::StartSampler;
use dkam::value::*;
use dkam::System;

fn pendulum() -> System {
    builtin("pendulum", &SystemParams { lambda: 0.2, ..Default::default() }).unwrap()
}

fn pendulum_value() -> GridField<f64> {
    solve_value(&pendulum(), &TorusGrid::new(1, &[256]).unwrap(), 0.02, 1e-6, 100_000).unwrap().0
}

#[test]
fn lyapunov_value_at_the_equilibria() {
    let s = pendulum();
    let u = pendulum_value();
    let bottom = lyapunov_value(&s, &u, &PhasePoint::new(1, &[0.0], &[0.0]));
    assert!(bottom.abs() <= 1e-3);
    let top = lyapunov_value(&s, &u, &PhasePoint::new(1, &[PI], &[0.0]));
    assert!((top - (0.2 * u.values[128] - 2.0)).abs() <= 1e-12 && top < -1.2);
}

#[test]
fn z_partition_labels() {
    let s = pendulum();
    let u = pendulum_value();
    let boxes = BoxGrid::new(1, 3.0, &[64], &[64]).unwrap();
    let z = z_partition(&s, &u, &boxes, default_eps0(&s, &u)).unwrap();
    let labels = z.labels.as_ref().unwrap();
    let label_at = |x: f64, p: f64| labels[boxes.locate(&PhasePoint::new(1, &[x], &[p]), 0.0).as_slice()[0]];
    assert_eq!(label_at(PI, 0.01), ZLabel::Zminus);
    assert_eq!(label_at(0.01, 0.01), ZLabel::Z0);
    assert_eq!(label_at(1.0, 2.8), ZLabel::Zplus);
    // members are exactly the non-Zplus cells
    assert!((0..boxes.len()).all(|c| z.members[c] == (labels[c] != ZLabel::Zplus)));
    let z0 = z.with_label(ZLabel::Z0);
    assert!(z0.count() > 0 && z0.is_subset(&z));

    let small = BoxGrid::new(1, 0.5, &[64], &[32]).unwrap();
    match z_partition(&s, &u, &small, 1e-6) {
        Err(dkam::Error::Config(msg)) => assert!(msg.contains("momentum box")),
        other => panic!("expected a box error, got {other:?}"),
    }
}

#[test]
fn lyapunov_decays_and_sublevel_is_invariant() {
    let s = pendulum();
    let u = pendulum_value();
    let mut rng = StartSampler::new(11);
    let eps0 = default_eps0(&s, &u);
    let mut tested = 0;
    for start in rng.phase_points::<f64>(400, 1, 3.0) {
        if lyapunov_value(&s, &u, &start) > 0.0 {
            continue;
        }
        tested += 1;
        let traj = integrate_hamiltonian(&s, &start, 0.0, 20.0, 0.01).unwrap();
        assert!(lyapunov_decay_check(&s, &u, &traj).unwrap() <= 2e-2);
        assert!((0..traj.len()).all(|i| lyapunov_value(&s, &u, &traj.phase_point(i)) <= eps0 + 2e-2));
    }
    assert!(tested >= 100, "only {tested} starts in the sublevel set");
}

#[test]
fn integrable_omega_limit_is_the_rotating_circle() {
    let s = builtin("integrable", &SystemParams { lambda: 0.2, eta: Some(vec![0.1]), ..Default::default() }).unwrap();
    let starts = StartSampler::new(2).phase_points::<f64>(20, 1, 2.0);
    let opts = OmegaOptions { t_transient: 150.0, t_obs: 5.0, cluster_eps: 1e-3, dt: 0.01, momentum_only: true };
    let reps = omega_limit(&s, &starts, &opts).unwrap();
    assert_eq!(reps.len(), 1);
    assert!((reps[0].p[0] - 0.5).abs() <= 1e-3);
    let short = OmegaOptions { t_transient: 10.0, ..opts };
    assert!(omega_limit(&s, &starts, &short).is_err());
}

#[test]
fn attractor_shrinks_under_refinement() {
    let s = pendulum();
    let u = pendulum_value();
    let eps0 = default_eps0(&s, &u);
    let mut volumes = Vec::new();
    for n in [64usize, 128, 256] {
        let boxes = BoxGrid::new(1, 3.0, &[n], &[n]).unwrap();
        let z = z_partition(&s, &u, &boxes, eps0).unwrap();
        let att = maximal_attractor(&s, &z, &CellMapOptions::new(5.0, 0.05)).unwrap();
        assert!(forward_invariance_violations(&att).is_empty());
        assert!(att.cells.is_subset(&z));
        // both equilibria survive
        for x in [0.0, PI] {
            let hits = boxes.locate(&PhasePoint::new(1, &[x], &[0.0]), 1e-9);
            assert!(hits.as_slice().iter().any(|c| att.cells.contains(*c)));
        }
        volumes.push(att.cells.volume());
    }
    assert!(volumes.windows(2).all(|w| w[1] < w[0]), "volumes {volumes:?}");
}

#[test]
fn too_few_cells_are_rejected() {
    assert!(matches!(BoxGrid::<f64>::new(1, 3.0, &[64], &[16]), Err(dkam::Error::Config(_))));
}

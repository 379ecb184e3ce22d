//! Cross-module invariant suite behind `dkam verify`.

use anyhow::Result;
use dkam::attractor::*;
use dkam::flow::integrate_hamiltonian;
use dkam::model::PhasePoint;
use dkam::rng::StartSampler;
use dkam::value::{lax_oleinik_step, GridField};
use serde::Serialize;

use crate::run::Run;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub system: String,
    pub lambda: f64,
    pub pass: bool,
    pub invariants: Vec<Check>,
}

fn check(name: &'static str, value: f64, tolerance: f64, pass: bool, detail: impl Into<String>) -> Check {
    Check { name, pass, value, tolerance, detail: detail.into() }
}

pub fn verify(run: &mut Run) -> Result<VerifyReport> {
    let solved = run.value()?;
    let aubry = run.aubry(&solved)?;
    let (z, att) = run.attractor(&solved)?;
    let measures = run.measures(&solved, &aubry)?;
    let sys = run.sys.clone();
    let dim = sys.dim();
    let mut checks = Vec::new();

    // contraction of the solver's operator on random pairs
    let h = run.cfg.grid.h.unwrap();
    let grid = solved.u.grid;
    let mut rng = StartSampler::new(run.cfg.rng_seed ^ 0x5eed);
    let mut excess = f64::NEG_INFINITY;
    for k in 0..10 {
        let u =
            GridField { grid, values: (0..grid.len()).map(|_| rng.uniform_in(-1.0, 1.0)).collect(), kink_mask: None };
        let shift = rng.uniform_in(-1.0, 1.0);
        let values = if k % 2 == 0 {
            u.values.iter().map(|v| v + shift + rng.uniform_in(-1e-3, 1e-3)).collect()
        } else {
            (0..grid.len()).map(|_| rng.uniform_in(-2.0, 2.0)).collect()
        };
        let w = GridField { grid, values, kink_mask: None };
        let (tu, tw) = (lax_oleinik_step(&sys, &u, h)?, lax_oleinik_step(&sys, &w, h)?);
        let rounding = 4.0 * f64::EPSILON * (tu.sup_norm() + tw.sup_norm() + u.sup_norm() + w.sup_norm());
        excess = excess.max(tu.distance(&tw) - (-sys.lambda * h).exp() * u.distance(&w) - rounding);
    }
    checks.push(check(
        "operator_contraction",
        excess,
        0.0,
        excess <= 0.0,
        "max ‖Tu−Tw‖ − e^(−λh)‖u−w‖ over 10 random pairs, 4-ulp rounding allowance",
    ));

    // inclusion chain Ã ⊆ K ⊆ Z⁰ ∪ Z⁻, K ∩ Z⁰ = Ã up to one cell
    let boxes = z.grid;
    let points: Vec<PhasePoint<f64>> = aubry.points.iter().map(|g| g.point).collect();
    let a_cells = cells_of_points(&boxes, &points);
    let outside = a_cells.difference(&att.cells).len();
    checks.push(check(
        "aubry_in_attractor",
        outside as f64,
        0.0,
        outside == 0,
        format!("{} Aubry cells, {outside} outside the attractor", a_cells.count()),
    ));
    let above = att.cells.difference(&z).len();
    checks.push(check(
        "attractor_in_sublevel",
        above as f64,
        0.0,
        above == 0,
        format!("{} attractor cells, {above} in Zplus", att.cells.count()),
    ));
    let k_z0 = att.cells.intersection(&z.with_label(ZLabel::Z0));
    let extra = k_z0.difference(&a_cells.dilate()).len();
    let missing = a_cells.difference(&k_z0.dilate()).len();
    checks.push(check(
        "attractor_z0_is_aubry",
        (extra + missing) as f64,
        0.0,
        extra == 0 && missing == 0,
        format!(
            "{} cells in K∩Z0: {extra} outside dilated Aubry cells, {missing} Aubry cells not reached",
            k_z0.count()
        ),
    ));
    let violations = forward_invariance_violations(&att).len();
    checks.push(check(
        "attractor_forward_invariant",
        violations as f64,
        0.0,
        violations == 0,
        "cells with no image inside the attractor",
    ));

    // Lyapunov decay along random orbits
    let p_max = run.cfg.attractor.p_max.unwrap();
    let mut rng = StartSampler::new(run.cfg.rng_seed ^ 0x1a);
    let mut worst = f64::NEG_INFINITY;
    for start in rng.phase_points::<f64>(30, dim, p_max) {
        let traj = integrate_hamiltonian(&sys, &start, 0.0, 20.0, 0.01)?;
        worst = worst.max(lyapunov_decay_check(&sys, &solved.u, &traj)?);
    }
    checks.push(check(
        "lyapunov_decay",
        worst,
        2e-2,
        worst <= 2e-2,
        "max F(Φᵗ) − F(0)e^(−λt) over 30 orbits, t ∈ [0, 20]",
    ));

    // measure functionals
    let invariant: Vec<_> = measures.iter().filter(|m| m.invariant).collect();
    let lh = invariant.iter().map(|m| m.functionals.lplush.abs()).fold(0.0, f64::max);
    checks.push(check(
        "measure_energy_identity",
        lh,
        1e-2,
        !invariant.is_empty() && lh <= 1e-2,
        format!("max |∫(L+H)dμ| over {} of {} measures passing the invariance test", invariant.len(), measures.len()),
    ));
    let defect = measures.iter().map(|m| m.functionals.action_defect).fold(f64::INFINITY, f64::min);
    checks.push(check("measure_action_defect", defect, -1e-3, defect >= -1e-3, "min ∫(L − λū)dμ over all measures"));

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { system: run.cfg.system.name.clone(), lambda: sys.lambda, pass, invariants: checks })
}

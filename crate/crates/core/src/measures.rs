//! Occupation measures of long orbits, the minimizing-measure functionals,
//! Mather sets and the vanishing-discount study.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attractor::{BoxGrid, CellSet};
use crate::aubry::{aubry_set, sigma_set, AubryApprox, SigmaOptions, TrapOptions};
use crate::error::{precondition, Error, Result};
use crate::flow::{drive, flow_map, hamiltonian_rhs, step_count, vector_field_jacobian, IntegratorOptions};
use crate::model::{legendre_to_cotangent, PhasePoint, TangentPoint, TonelliSystem};
use crate::scalar::{angle_diff, norm, wrap_angle, Scalar, MAX_DIM};
use crate::value::{gradient_field, solve_value_with, GridField, SolveOptions, TorusGrid};

/// Mass carried by one cell, with the mean state of the samples in it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureCell<T> {
    pub cell: usize,
    pub weight: T,
    pub centroid: TangentPoint<T>,
}

/// Discretised probability measure on the tangent side; `grid` reads its
/// momentum bound as a velocity bound.
#[derive(Clone, Debug)]
pub struct OccupationMeasure<T> {
    pub grid: BoxGrid<T>,
    /// Support cells in increasing cell order.
    pub cells: Vec<MeasureCell<T>>,
    pub start: TangentPoint<T>,
    pub window: [T; 2],
}

impl<T: Scalar> OccupationMeasure<T> {
    pub fn total_mass(&self) -> T {
        self.cells.iter().map(|c| c.weight).sum()
    }

    pub fn support(&self) -> CellSet<T> {
        CellSet::from_cells(self.grid, self.cells.iter().map(|c| c.cell))
    }

    /// Uniform measure over the given cells, located at the cell centres.
    pub fn uniform(grid: BoxGrid<T>, cells: &[usize]) -> Self {
        let w = T::one() / T::from_usize_lossy(cells.len().max(1));
        let mut sorted = cells.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let cells = sorted
            .into_iter()
            .map(|c| {
                let pp = grid.center(c);
                MeasureCell { cell: c, weight: w, centroid: TangentPoint { x: pp.x, v: pp.p } }
            })
            .collect();
        Self { grid, cells, start: TangentPoint::default(), window: [T::zero(); 2] }
    }

    /// Point mass at `tp`.
    pub fn dirac(grid: BoxGrid<T>, tp: &TangentPoint<T>) -> Result<Self> {
        let mut h = Histogram::new(grid);
        h.add(tp)?;
        Ok(h.finish(*tp, [T::zero(); 2]))
    }
}

struct Histogram<T> {
    grid: BoxGrid<T>,
    acc: BTreeMap<usize, (usize, TangentPoint<T>, [T; 2 * MAX_DIM])>,
    total: usize,
}

impl<T: Scalar> Histogram<T> {
    fn new(grid: BoxGrid<T>) -> Self {
        Self { grid, acc: BTreeMap::new(), total: 0 }
    }

    fn add(&mut self, tp: &TangentPoint<T>) -> Result<()> {
        let pp = PhasePoint { x: tp.x, p: tp.v };
        let cell = *self.grid.locate(&pp, T::zero()).as_slice().first().ok_or_else(|| {
            Error::Precondition(format!(
                "state x = {:?}, v = {:?} leaves the measure box |v| ≤ {}",
                &tp.x[..self.grid.dim],
                &tp.v[..self.grid.dim],
                self.grid.p_max
            ))
        })?;
        let dim = self.grid.dim;
        let e = self.acc.entry(cell).or_insert((0, *tp, [T::zero(); 2 * MAX_DIM]));
        e.0 += 1;
        // offsets relative to the first sample keep the mean well defined on the torus
        for i in 0..dim {
            e.2[i] = e.2[i] + angle_diff(tp.x[i], e.1.x[i]);
            e.2[dim + i] = e.2[dim + i] + (tp.v[i] - e.1.v[i]);
        }
        self.total += 1;
        Ok(())
    }

    fn finish(self, start: TangentPoint<T>, window: [T; 2]) -> OccupationMeasure<T> {
        let dim = self.grid.dim;
        let n = T::from_usize_lossy(self.total.max(1));
        let cells = self
            .acc
            .into_iter()
            .map(|(cell, (count, anchor, off))| {
                let k = T::from_usize_lossy(count);
                let mut c = anchor;
                for i in 0..dim {
                    c.x[i] = wrap_angle(anchor.x[i] + off[i] / k);
                    c.v[i] = anchor.v[i] + off[dim + i] / k;
                }
                MeasureCell { cell, weight: k / n, centroid: c }
            })
            .collect();
        OccupationMeasure { grid: self.grid, cells, start, window }
    }
}

/// Histogram of the Lagrangian orbit of `start` over
/// `[t_burn, t_burn + t_obs]`, one sample per step with equal weights.
pub fn occupation_measure<T: Scalar>(
    sys: &TonelliSystem<T>,
    start: &TangentPoint<T>,
    t_burn: T,
    t_obs: T,
    grid: &BoxGrid<T>,
    dt: T,
) -> Result<OccupationMeasure<T>> {
    let slack = T::lit(1.0 - 1e-12);
    precondition(t_burn >= T::lit(5.0) / sys.lambda * slack, || format!("burn-in {t_burn} must be at least 5/lambda"))?;
    precondition(t_obs >= T::lit(20.0) / sys.lambda * slack, || format!("window {t_obs} must be at least 20/lambda"))?;
    precondition(dt > T::zero() && dt <= t_obs, || format!("invalid step {dt}"))?;
    precondition(grid.dim == sys.dim(), || "dimension mismatch".into())?;
    let pp = legendre_to_cotangent(sys, start);
    let opts = IntegratorOptions::default();
    let burn_steps = step_count(t_burn, dt);
    let settled =
        drive(sys, &pp, T::zero(), t_burn / T::from_usize_lossy(burn_steps), burn_steps, &opts, |_, _, _, _| {})?;
    let steps = step_count(t_obs, dt);
    let h = t_obs / T::from_usize_lossy(steps);
    let mut hist = Histogram::new(*grid);
    let mut failure = None;
    drive(sys, &settled, t_burn, h, steps, &opts, |_, x, p, _| {
        if failure.is_none() {
            let tp = TangentPoint { x: *x, v: sys.dh_dp(x, p) };
            if let Err(e) = hist.add(&tp) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(hist.finish(*start, [t_burn, t_burn + t_obs]))
}

/// Integrals of a measure against the three characteristic integrands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureFunctionals<T> {
    /// `∫ (L − λū) dμ`
    pub action_defect: T,
    /// `∫ (L + H∘ℒ) dμ`
    pub lplush: T,
    /// `∫ ‖∂L/∂v‖ dμ`
    pub momentum_norm: T,
    /// `∫ L dμ`
    pub action: T,
}

/// Quadrature of the functionals with each cell's mass at its centroid.
pub fn measure_functionals<T: Scalar>(
    sys: &TonelliSystem<T>,
    u: &GridField<T>,
    mu: &OccupationMeasure<T>,
) -> MeasureFunctionals<T> {
    let mut out =
        MeasureFunctionals { action_defect: T::zero(), lplush: T::zero(), momentum_norm: T::zero(), action: T::zero() };
    for c in &mu.cells {
        let (x, v) = (&c.centroid.x, &c.centroid.v);
        let l = sys.lagrangian(x, v);
        let p = sys.dl_dv(x, v);
        out.action = out.action + c.weight * l;
        out.action_defect = out.action_defect + c.weight * (l - sys.lambda * u.interpolate(x));
        out.lplush = out.lplush + c.weight * (l + sys.hamiltonian(x, &p));
        out.momentum_norm = out.momentum_norm + c.weight * norm(sys.dim(), &p);
    }
    out
}

/// Total-variation distance between `μ` and its push-forward by `Φ^τ_L`,
/// each cell's mass moved along its centroid. Mass leaving the box counts
/// in full.
pub fn invariance_residual<T: Scalar>(sys: &TonelliSystem<T>, mu: &OccupationMeasure<T>, tau: T, dt: T) -> Result<T> {
    let span = mu.window[1] - mu.window[0];
    if span > T::zero() {
        precondition(tau <= span / T::lit(10.0) * T::lit(1.0 + 1e-12), || {
            format!("tau = {tau} exceeds a tenth of the observation window")
        })?;
    }
    let pushed: Vec<(Option<usize>, T)> = mu
        .cells
        .par_iter()
        .map(|c| {
            let pp = legendre_to_cotangent(sys, &c.centroid);
            let img = flow_map(sys, &pp, tau, dt)?;
            let v = sys.dh_dp(&img.x, &img.p);
            let cell = mu.grid.locate(&PhasePoint { x: img.x, p: v }, T::zero()).as_slice().first().copied();
            Ok((cell, c.weight))
        })
        .collect::<Result<_>>()?;
    let mut image: BTreeMap<usize, T> = BTreeMap::new();
    let mut lost = T::zero();
    for (cell, w) in pushed {
        match cell {
            Some(c) => {
                let slot = image.entry(c).or_insert(T::zero());
                *slot = *slot + w;
            }
            None => lost = lost + w,
        }
    }
    let mut l1 = lost;
    let original: BTreeMap<usize, T> = mu.cells.iter().map(|c| (c.cell, c.weight)).collect();
    for (c, w) in &original {
        l1 = l1 + (*w - image.get(c).copied().unwrap_or(T::zero())).abs();
    }
    for (c, w) in &image {
        if !original.contains_key(c) {
            l1 = l1 + w.abs();
        }
    }
    Ok(l1 * T::lit(0.5))
}

/// Newton refinement of a near-equilibrium onto the exact zero of the
/// Hamiltonian vector field. Returns `None` when `pp` is not close to one.
pub fn snap_to_equilibrium<T: Scalar>(sys: &TonelliSystem<T>, pp: &PhasePoint<T>, tol: T) -> Option<PhasePoint<T>> {
    let n = sys.dim();
    let size = 2 * n;
    let residual = |q: &PhasePoint<T>| {
        let (dx, dp) = hamiltonian_rhs(sys, &q.x, &q.p);
        let mut r = [T::zero(); 2 * MAX_DIM];
        r[..n].copy_from_slice(&dx[..n]);
        r[n..size].copy_from_slice(&dp[..n]);
        r
    };
    let rnorm = |r: &[T; 2 * MAX_DIM]| r[..size].iter().fold(T::zero(), |a, b| a.max(b.abs()));
    if rnorm(&residual(pp)) > tol {
        return None;
    }
    let mut q = *pp;
    for _ in 0..20 {
        let r = residual(&q);
        if rnorm(&r) == T::zero() {
            break;
        }
        let j = vector_field_jacobian(sys, &q.x, &q.p);
        let step = solve_linear(j, r, size)?;
        for i in 0..n {
            q.x[i] = q.x[i] - step[i];
            q.p[i] = q.p[i] - step[n + i];
        }
    }
    for i in 0..n {
        q.x[i] = wrap_angle(q.x[i]);
    }
    let dist = crate::scalar::torus_distance(n, &q.x, &pp.x)
        + norm(n, &{
            let mut d = q.p;
            for i in 0..n {
                d[i] = d[i] - pp.p[i];
            }
            d
        });
    (rnorm(&residual(&q)) <= tol && dist <= T::lit(1e3) * tol.max(T::epsilon())).then_some(q)
}

fn solve_linear<T: Scalar>(
    mut a: [[T; 2 * MAX_DIM]; 2 * MAX_DIM],
    mut b: [T; 2 * MAX_DIM],
    size: usize,
) -> Option<[T; 2 * MAX_DIM]> {
    for col in 0..size {
        let pivot = (col..size)
            .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap_or(std::cmp::Ordering::Equal))?;
        if a[pivot][col] == T::zero() {
            return None;
        }
        a.swap(pivot, col);
        b.swap(pivot, col);
        for r in col + 1..size {
            let f = a[r][col] / a[col][col];
            for c in col..size {
                a[r][c] = a[r][c] - f * a[col][c];
            }
            b[r] = b[r] - f * b[col];
        }
    }
    let mut x = [T::zero(); 2 * MAX_DIM];
    for r in (0..size).rev() {
        let mut s = b[r];
        for c in r + 1..size {
            s = s - a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

/// Knobs of the seeded measure computations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureOptions<T> {
    pub t_burn: T,
    pub t_obs: T,
    pub dt: T,
    /// Largest admissible action defect of a minimizing measure.
    pub tol_min: T,
    /// Seeds within this vector-field residual are snapped to the exact
    /// equilibrium first.
    pub snap_tol: T,
    /// Cap on seeds drawn from the Aubry set.
    pub max_seeds: usize,
}

impl<T: Scalar> MeasureOptions<T> {
    pub fn for_lambda(lambda: T) -> Self {
        Self {
            t_burn: T::lit(10.0) / lambda,
            t_obs: T::lit(20.0) / lambda,
            dt: T::lit(0.01),
            tol_min: T::lit(1e-2),
            snap_tol: T::lit(1e-6),
            max_seeds: 16,
        }
    }
}

/// Measure started from one seed, with its functionals.
#[derive(Clone, Debug)]
pub struct SeededMeasure<T> {
    pub seed: TangentPoint<T>,
    pub measure: OccupationMeasure<T>,
    pub functionals: MeasureFunctionals<T>,
}

/// Up to `max` Aubry points mapped to the tangent side, evenly subsampled.
pub fn aubry_seeds<T: Scalar>(sys: &TonelliSystem<T>, approx: &AubryApprox<T>, max: usize) -> Vec<TangentPoint<T>> {
    let n = approx.points.len();
    let take = max.max(1).min(n);
    (0..take)
        .map(|k| {
            let p = &approx.points[k * n / take].point;
            TangentPoint { x: p.x, v: sys.dh_dp(&p.x, &p.p) }
        })
        .collect()
}

/// Occupation measures of every seed (snapped to equilibria when close).
pub fn seeded_measures<T: Scalar>(
    sys: &TonelliSystem<T>,
    u: &GridField<T>,
    seeds: &[TangentPoint<T>],
    grid: &BoxGrid<T>,
    opts: &MeasureOptions<T>,
) -> Result<Vec<SeededMeasure<T>>> {
    seeds
        .par_iter()
        .map(|seed| {
            let pp = legendre_to_cotangent(sys, seed);
            let start = match snap_to_equilibrium(sys, &pp, opts.snap_tol) {
                Some(q) => TangentPoint { x: q.x, v: sys.dh_dp(&q.x, &q.p) },
                None => *seed,
            };
            let measure = occupation_measure(sys, &start, opts.t_burn, opts.t_obs, grid, opts.dt)?;
            let functionals = measure_functionals(sys, u, &measure);
            Ok(SeededMeasure { seed: *seed, measure, functionals })
        })
        .collect()
}

/// Union of the supports of the seeded measures whose action defect is at
/// most `tol_min`.
pub fn mather_set<T: Scalar>(
    sys: &TonelliSystem<T>,
    u: &GridField<T>,
    seeds: &[TangentPoint<T>],
    grid: &BoxGrid<T>,
    opts: &MeasureOptions<T>,
) -> Result<(CellSet<T>, Vec<SeededMeasure<T>>)> {
    let measures = seeded_measures(sys, u, seeds, grid, opts)?;
    let mut cells = CellSet::empty(*grid);
    for m in measures.iter().filter(|m| m.functionals.action_defect <= opts.tol_min) {
        for c in &m.measure.cells {
            cells.members[c.cell] = true;
        }
    }
    if cells.count() == 0 {
        return Err(Error::Empty("no seeded measure is minimizing; loosen tol_min or add seeds".into()));
    }
    Ok((cells, measures))
}

/// Hausdorff distance between the centres of two cell sets, with the torus
/// metric on positions and the Euclidean one on velocities.
pub fn hausdorff_distance<T: Scalar>(a: &CellSet<T>, b: &CellSet<T>) -> T {
    let ca: Vec<PhasePoint<T>> = a.indices().into_iter().map(|i| a.grid.center(i)).collect();
    let cb: Vec<PhasePoint<T>> = b.indices().into_iter().map(|i| b.grid.center(i)).collect();
    if ca.is_empty() || cb.is_empty() {
        return if ca.is_empty() && cb.is_empty() { T::zero() } else { T::infinity() };
    }
    let n = a.grid.dim;
    let d = |p: &PhasePoint<T>, q: &PhasePoint<T>| {
        let mut s = T::zero();
        for i in 0..n {
            let dx = angle_diff(p.x[i], q.x[i]);
            let dv = p.p[i] - q.p[i];
            s = s + dx * dx + dv * dv;
        }
        s.sqrt()
    };
    let directed = |from: &[PhasePoint<T>], to: &[PhasePoint<T>]| {
        from.iter().map(|p| to.iter().map(|q| d(p, q)).fold(T::infinity(), T::min)).fold(T::zero(), T::max)
    };
    directed(&ca, &cb).max(directed(&cb, &ca))
}

/// One row of the vanishing-discount study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitStudyRow {
    pub lambda: f64,
    /// `‖λū_λ + α̂(0)‖_∞`
    pub sup_lambda_u: f64,
    pub alpha_hat: f64,
    pub mather_distance: f64,
    pub iterations: usize,
    pub error: Option<String>,
    /// `ū_λ` at the grid node nearest to `probe`, when requested.
    pub probe_value: Option<f64>,
}

/// Per-λ pipeline settings of [`limit_study`].
#[derive(Clone, Debug)]
pub struct LimitOptions<T> {
    pub grid: TorusGrid<T>,
    /// Solver step, shared by every λ.
    pub h: T,
    pub tol: T,
    pub max_iter: usize,
    pub measure_box: BoxGrid<T>,
    pub extra_seeds: Vec<TangentPoint<T>>,
    pub sigma_eps: T,
    pub sigma_dt: T,
    pub trap_dt: T,
    pub probe: Option<crate::scalar::Vector<T>>,
}

struct LimitRun<T: Scalar> {
    row: LimitStudyRow,
    mather: Option<CellSet<T>>,
}

/// Solves `ū_λ` for each λ (decreasing), estimates `α̂(0) = −min ∫L dμ` over
/// seeded measures and compares Mather cells with the smallest-λ run.
pub fn limit_study<T: Scalar>(
    builder: impl Fn(T) -> Result<TonelliSystem<T>> + Sync,
    lambdas: &[T],
    opts: &LimitOptions<T>,
) -> Result<Vec<LimitStudyRow>> {
    precondition(!lambdas.is_empty(), || "no lambdas given".into())?;
    precondition(lambdas.windows(2).all(|w| w[1] < w[0]), || "lambdas must be strictly decreasing".into())?;
    let run_one = |lambda: T| -> LimitRun<T> {
        let mut row = LimitStudyRow {
            lambda: lambda.as_f64(),
            sup_lambda_u: f64::NAN,
            alpha_hat: f64::NAN,
            mather_distance: f64::NAN,
            iterations: 0,
            error: None,
            probe_value: None,
        };
        let result = (|| -> Result<CellSet<T>> {
            let sys = builder(lambda)?;
            let solve = SolveOptions::new(opts.h, opts.tol, opts.max_iter);
            let (u, report) = solve_value_with(&sys, &opts.grid, &solve)?;
            row.iterations = report.iterations;
            row.probe_value = opts.probe.map(|p| u.values[opts.grid.nearest(&p)].as_f64());
            let du = gradient_field(&u);
            let sigma_opts = SigmaOptions { eps: opts.sigma_eps, t_back: T::lit(8.0) / lambda, dt: opts.sigma_dt };
            let (sigma, tail) = sigma_set(&sys, &u, &du, &sigma_opts)?;
            let mut trap = TrapOptions::for_grid(&opts.grid);
            trap.dt = opts.trap_dt;
            let approx = aubry_set(&sys, &opts.grid, &sigma, opts.sigma_eps, tail, &trap)?;
            let mopts = MeasureOptions::for_lambda(lambda);
            let mut seeds = aubry_seeds(&sys, &approx, mopts.max_seeds);
            seeds.extend(opts.extra_seeds.iter().copied());
            let (mather, measures) = mather_set(&sys, &u, &seeds, &opts.measure_box, &mopts)?;
            let min_action = measures.iter().map(|m| m.functionals.action).fold(T::infinity(), T::min);
            let alpha = T::zero() - min_action;
            row.alpha_hat = alpha.as_f64();
            row.sup_lambda_u = u.values.iter().fold(T::zero(), |a, v| a.max((lambda * *v + alpha).abs())).as_f64();
            Ok(mather)
        })();
        match result {
            Ok(m) => LimitRun { row, mather: Some(m) },
            Err(e) => {
                row.error = Some(e.to_string());
                LimitRun { row, mather: None }
            }
        }
    };
    let runs: Vec<LimitRun<T>> = lambdas.par_iter().map(|l| run_one(*l)).collect();
    let reference = runs.last().and_then(|r| r.mather.clone());
    Ok(runs
        .into_iter()
        .map(|mut r| {
            if let (Some(m), Some(reference)) = (&r.mather, &reference) {
                r.row.mather_distance = hausdorff_distance(m, reference).as_f64();
            }
            r.row
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, SystemParams};

    fn pendulum() -> TonelliSystem<f64> {
        builtin("pendulum", &SystemParams { lambda: 0.2, ..Default::default() }).unwrap()
    }

    #[test]
    fn snapping_recovers_saddle() {
        let sys = pendulum();
        let q = snap_to_equilibrium(&sys, &PhasePoint::new(1, &[1e-9], &[2e-16]), 1e-6).unwrap();
        assert_eq!(q.x[0], 0.0);
        assert_eq!(q.p[0], 0.0);
        assert!(snap_to_equilibrium(&sys, &PhasePoint::new(1, &[1.0], &[0.0]), 1e-6).is_none());
    }

    #[test]
    fn dirac_functionals_at_saddle() {
        let sys = pendulum();
        let grid = BoxGrid::new(1, 3.0, &[64], &[64]).unwrap();
        let u = GridField::constant(TorusGrid::new(1, &[64]).unwrap(), 0.0);
        let mu = OccupationMeasure::dirac(grid, &TangentPoint::new(1, &[0.0], &[0.0])).unwrap();
        assert!((mu.total_mass() - 1.0_f64).abs() < 1e-15);
        let f = measure_functionals(&sys, &u, &mu);
        assert_eq!(f.action_defect, 0.0);
        assert_eq!(f.lplush, 0.0);
    }

    #[test]
    fn leaving_the_box_is_an_error() {
        let sys = pendulum();
        let grid = BoxGrid::new(1, 0.01, &[32], &[32]).unwrap();
        let start = TangentPoint::new(1, &[0.5], &[2.0]);
        assert!(matches!(occupation_measure(&sys, &start, 25.0, 100.0, &grid, 0.01), Err(Error::Precondition(_))));
    }

    #[test]
    fn hausdorff_of_identical_sets_is_zero() {
        let grid = BoxGrid::<f64>::new(1, 3.0, &[32], &[32]).unwrap();
        let a = CellSet::from_cells(grid, [3, 70, 500]);
        assert_eq!(hausdorff_distance(&a, &a), 0.0);
        let b = CellSet::from_cells(grid, [3]);
        assert!(hausdorff_distance(&a, &b) > 0.0);
    }
}

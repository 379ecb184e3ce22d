//! Calibrated curves, the calibrated graph Σ̃ and the Aubry set obtained by
//! forward trapping near it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::flow::{discounted_action, rk4_step, step_count, FlowKind, Trajectory};
use crate::model::{PhasePoint, TonelliSystem};
use crate::scalar::{angle_diff, norm, wrap_angle_counting, Scalar, Vector, MAX_DIM};
use crate::value::{GridField, TorusGrid, VectorField};

/// Backward curve through a point together with its calibration defect.
#[derive(Clone, Debug)]
pub struct CalibrationReport<T> {
    pub curve: Trajectory<T>,
    /// `|u(γ(b)) e^{λb} − u(γ(a)) e^{λa} − ∫ₐᵇ e^{λt} L|`
    pub defect: T,
    pub span: [T; 2],
    /// `max |H(γ, I[du](γ))|` along the curve.
    pub max_energy: T,
    /// `e^{λa} |H|` at the far end; the calibrated graph needs it to vanish.
    pub energy_tail: T,
}

/// Graph point `(x, du(x))` over grid node `node`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphPoint<T> {
    pub node: usize,
    pub point: PhasePoint<T>,
    pub defect: T,
    /// Largest distance to the calibrated cloud seen along the forward orbit
    /// (zero before trapping).
    pub fwd_dist: T,
}

/// Discrete approximation of the Aubry set.
#[derive(Clone, Debug)]
pub struct AubryApprox<T> {
    pub grid: TorusGrid<T>,
    pub points: Vec<GraphPoint<T>>,
    pub epsilon: T,
    pub eps_graph: T,
    pub horizon: T,
    /// Largest backward energy tail over the calibrated points used.
    pub energy_tail: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaOptions<T> {
    pub eps: T,
    pub t_back: T,
    pub dt: T,
}

impl<T: Scalar> SigmaOptions<T> {
    /// Defaults for rate `lambda`: horizon `8/λ`.
    pub fn for_lambda(lambda: T) -> Self {
        Self { eps: T::lit(2e-2), t_back: T::lit(8.0) / lambda, dt: T::lit(0.01) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapOptions<T> {
    /// Allowed phase-space distance to the calibrated cloud.
    pub eps_graph: T,
    pub t_fwd: T,
    pub dt: T,
    /// Distance checks happen every `check_every` steps.
    pub check_every: usize,
    /// The orbit restarts from the nearest cloud point after this much time,
    /// so that transversal instability of the graph does not amplify grid
    /// noise over long horizons.
    pub anchor_interval: T,
}

impl<T: Scalar> TrapOptions<T> {
    /// Defaults on `grid`: two cells of slack, horizon 50.
    pub fn for_grid(grid: &TorusGrid<T>) -> Self {
        Self {
            eps_graph: T::lit(2.0) * grid.max_spacing(),
            t_fwd: T::lit(50.0),
            dt: T::lit(0.01),
            check_every: 10,
            anchor_interval: T::one(),
        }
    }
}

/// Backward curve through `x` along the graph of `du`:
/// `γ̇ = ∂H/∂p(γ, I[du](γ))` on `[−T, 0]` with `γ(0) = x`.
///
/// Following the graph rather than the raw Hamiltonian flow keeps the curve
/// on the calibrated branch; the raw backward flow is transversally unstable
/// at hyperbolic points and loses the graph within a few time units.
pub fn backward_calibrated_curve<T: Scalar>(
    sys: &TonelliSystem<T>,
    u: &GridField<T>,
    du: &VectorField<T>,
    x: &Vector<T>,
    horizon: T,
    dt: T,
) -> Result<CalibrationReport<T>> {
    precondition(horizon > T::zero() && dt > T::zero() && dt <= horizon, || {
        format!("invalid horizon {horizon} or step {dt}")
    })?;
    if du.near_kink(x) {
        return Err(Error::IllPosedStart(format!("{:?} lies on the kink locus", &x[..sys.dim()])));
    }
    let n = sys.dim();
    let steps = step_count(horizon, dt);
    let h = -horizon / T::from_usize_lossy(steps);
    let velocity = |y: &Vector<T>| sys.dh_dp(y, &du.interpolate_vec(y));

    let mut times = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut vs = Vec::with_capacity(steps + 1);
    let mut winding = Vec::with_capacity(steps + 1);
    let mut cur = *x;
    let mut turns = [0i64; MAX_DIM];
    let mut max_energy = T::zero();
    times.push(T::zero());
    xs.push(cur);
    vs.push(velocity(&cur));
    winding.push(turns);
    let energy = |y: &Vector<T>| sys.hamiltonian(y, &du.interpolate_vec(y)).abs();
    max_energy = max_energy.max(energy(&cur));
    let half = h * T::lit(0.5);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    for s in 1..=steps {
        let shifted = |k: &Vector<T>, c: T| {
            let mut y = cur;
            for i in 0..n {
                y[i] = cur[i] + c * k[i];
            }
            y
        };
        let k1 = velocity(&cur);
        let k2 = velocity(&shifted(&k1, half));
        let k3 = velocity(&shifted(&k2, half));
        let k4 = velocity(&shifted(&k3, h));
        for i in 0..n {
            let (r, k) = wrap_angle_counting(cur[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]));
            cur[i] = r;
            turns[i] += k;
        }
        times.push(h * T::from_usize_lossy(s));
        xs.push(cur);
        vs.push(velocity(&cur));
        winding.push(turns);
        max_energy = max_energy.max(energy(&cur));
    }
    times.reverse();
    xs.reverse();
    vs.reverse();
    winding.reverse();
    let curve = Trajectory { kind: FlowKind::Lagrangian, dim: n, dt: h.abs(), times, x: xs, y: vs, winding };
    let a = curve.first_time();
    let action = discounted_action(sys, &curve, a, T::zero())?;
    let lhs = u.interpolate(x) - (sys.lambda * a).exp() * u.interpolate(&curve.x[0]);
    let energy_tail = (sys.lambda * a).exp() * energy(&curve.x[0]);
    Ok(CalibrationReport { defect: (lhs - action).abs(), span: [a, T::zero()], curve, max_energy, energy_tail })
}

/// Graph points over non-kink nodes whose backward curve is calibrated to
/// within `opts.eps`.
pub fn sigma_set<T: Scalar>(
    sys: &TonelliSystem<T>,
    u: &GridField<T>,
    du: &VectorField<T>,
    opts: &SigmaOptions<T>,
) -> Result<(Vec<GraphPoint<T>>, T)> {
    let grid = u.grid;
    let results: Vec<Option<(GraphPoint<T>, T)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if du.is_kink(i) {
                return Ok(None);
            }
            let x = grid.node(i);
            let rep = backward_calibrated_curve(sys, u, du, &x, opts.t_back, opts.dt)?;
            Ok((rep.defect <= opts.eps).then(|| {
                let point = PhasePoint { x, p: du.values[i] };
                (GraphPoint { node: i, point, defect: rep.defect, fwd_dist: T::zero() }, rep.energy_tail)
            }))
        })
        .collect::<Result<_>>()?;
    let mut tail = T::zero();
    let mut points = Vec::new();
    for (pt, e) in results.into_iter().flatten() {
        tail = tail.max(e);
        points.push(pt);
    }
    Ok((points, tail))
}

/// Nearest-point lookup into a point cloud attached to grid nodes.
struct Cloud<'a, T> {
    grid: &'a TorusGrid<T>,
    slot: Vec<Option<usize>>,
    points: &'a [GraphPoint<T>],
    reach: [isize; MAX_DIM],
}

impl<'a, T: Scalar> Cloud<'a, T> {
    fn new(grid: &'a TorusGrid<T>, points: &'a [GraphPoint<T>], radius: T) -> Self {
        let mut slot = vec![None; grid.len()];
        for (k, p) in points.iter().enumerate() {
            slot[p.node] = Some(k);
        }
        let mut reach = [0isize; MAX_DIM];
        for (i, r) in reach.iter_mut().enumerate().take(grid.dim) {
            *r = (radius / grid.spacing[i]).ceil().to_isize().unwrap_or(1).max(1);
        }
        Self { grid, slot, points, reach }
    }

    /// `(distance, point index)` of the nearest cloud point within reach.
    fn nearest(&self, pp: &PhasePoint<T>) -> Option<(T, usize)> {
        let g = self.grid;
        let n = g.dim;
        let centre = g.nearest(&pp.x);
        let mut best: Option<(T, usize)> = None;
        let mut visit = |idx: usize| {
            if let Some(k) = self.slot[idx] {
                let q = &self.points[k].point;
                let mut d2 = T::zero();
                for i in 0..n {
                    let dx = angle_diff(pp.x[i], q.x[i]);
                    let dp = pp.p[i] - q.p[i];
                    d2 = d2 + dx * dx + dp * dp;
                }
                if best.is_none_or(|(b, _)| d2 < b) {
                    best = Some((d2, k));
                }
            }
        };
        if n == 1 {
            for s in -self.reach[0]..=self.reach[0] {
                visit(g.neighbour(centre, 0, s));
            }
        } else {
            for s in -self.reach[0]..=self.reach[0] {
                let row = g.neighbour(centre, 0, s);
                for t in -self.reach[1]..=self.reach[1] {
                    visit(g.neighbour(row, 1, t));
                }
            }
        }
        best.map(|(d2, k)| (d2.sqrt(), k))
    }
}

/// Keeps the calibrated points whose forward Hamiltonian orbit stays within
/// `eps_graph` of the calibrated cloud over `[0, t_fwd]`.
pub fn aubry_set<T: Scalar>(
    sys: &TonelliSystem<T>,
    grid: &TorusGrid<T>,
    sigma: &[GraphPoint<T>],
    eps_cal: T,
    energy_tail: T,
    opts: &TrapOptions<T>,
) -> Result<AubryApprox<T>> {
    precondition(opts.dt > T::zero() && opts.t_fwd >= T::zero(), || "invalid trapping horizon".into())?;
    let cloud = Cloud::new(grid, sigma, opts.eps_graph);
    let steps = if opts.t_fwd > T::zero() { step_count(opts.t_fwd, opts.dt) } else { 0 };
    let h = if steps > 0 { opts.t_fwd / T::from_usize_lossy(steps) } else { opts.dt };
    let anchor_steps = step_count(opts.anchor_interval.max(h), h);
    let check_every = opts.check_every.max(1);
    let n = sys.dim();
    let blowup = T::lit(crate::flow::DEFAULT_BLOWUP);

    let kept: Vec<Option<GraphPoint<T>>> = sigma
        .par_iter()
        .map(|start| {
            let mut x = start.point.x;
            let mut p = start.point.p;
            let mut worst = T::zero();
            for s in 1..=steps {
                let (mut xn, pn) = rk4_step(sys, &x, &p, h);
                for i in 0..n {
                    xn[i] = wrap_angle_counting(xn[i]).0;
                }
                if !(norm(n, &pn) <= blowup) {
                    return None;
                }
                x = xn;
                p = pn;
                if s % check_every == 0 || s == steps || s % anchor_steps == 0 {
                    let (d, k) = cloud.nearest(&PhasePoint { x, p })?;
                    worst = worst.max(d);
                    if d > opts.eps_graph {
                        return None;
                    }
                    if s % anchor_steps == 0 {
                        x = sigma[k].point.x;
                        p = sigma[k].point.p;
                    }
                }
            }
            Some(GraphPoint { fwd_dist: worst, ..*start })
        })
        .collect();
    let points: Vec<_> = kept.into_iter().flatten().collect();
    if points.is_empty() {
        return Err(Error::Empty(
            "no calibrated point stays near the calibrated graph; loosen eps_graph or eps".into(),
        ));
    }
    Ok(AubryApprox {
        grid: *grid,
        points,
        epsilon: eps_cal,
        eps_graph: opts.eps_graph,
        horizon: opts.t_fwd,
        energy_tail,
    })
}

/// Injectivity of the projection and a local Lipschitz estimate of `x ↦ p`
/// over pairs at most three cells apart.
pub fn graph_property_check<T: Scalar>(approx: &AubryApprox<T>) -> (bool, T) {
    let grid = &approx.grid;
    let n = grid.dim;
    let mut slot: Vec<Vec<usize>> = vec![Vec::new(); grid.len()];
    let mut injective = true;
    for (k, p) in approx.points.iter().enumerate() {
        let node = grid.nearest(&p.point.x);
        if !slot[node].is_empty() {
            injective = false;
        }
        slot[node].push(k);
    }
    let reach = 3isize;
    let limit = T::lit(3.0) * grid.max_spacing() * T::lit(1.0 + 1e-9);
    let mut lip = T::zero();
    for a in &approx.points {
        let centre = grid.nearest(&a.point.x);
        let mut others = Vec::new();
        if n == 1 {
            for s in -reach..=reach {
                others.push(grid.neighbour(centre, 0, s));
            }
        } else {
            for s in -reach..=reach {
                let row = grid.neighbour(centre, 0, s);
                for t in -reach..=reach {
                    others.push(grid.neighbour(row, 1, t));
                }
            }
        }
        for node in others {
            for &k in &slot[node] {
                let b = &approx.points[k];
                let d = crate::scalar::torus_distance(n, &a.point.x, &b.point.x);
                if d > T::zero() && d <= limit {
                    let mut dp = [T::zero(); MAX_DIM];
                    for i in 0..n {
                        dp[i] = a.point.p[i] - b.point.p[i];
                    }
                    lip = lip.max(norm(n, &dp) / d);
                }
            }
        }
    }
    (injective, lip)
}

/// Grid nodes carrying an Aubry point.
pub fn aubry_nodes<T: Scalar>(approx: &AubryApprox<T>) -> Vec<usize> {
    approx.points.iter().map(|p| p.node).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, SystemParams};

    #[test]
    fn duplicated_projection_is_not_injective() {
        let grid = TorusGrid::<f64>::new(1, &[32]).unwrap();
        let pt = |p: f64| GraphPoint {
            node: 3,
            point: PhasePoint::new(1, &[grid.node(3)[0]], &[p]),
            defect: 0.0,
            fwd_dist: 0.0,
        };
        let approx = AubryApprox {
            grid,
            points: vec![pt(0.0), pt(1.0)],
            epsilon: 0.0,
            eps_graph: 0.0,
            horizon: 0.0,
            energy_tail: 0.0,
        };
        assert!(!graph_property_check(&approx).0);
    }

    #[test]
    fn kink_start_is_rejected() {
        let sys = builtin::<f64>("pendulum", &SystemParams { lambda: 0.2, ..Default::default() }).unwrap();
        let grid = TorusGrid::new(1, &[64]).unwrap();
        let u =
            GridField::from_fn(grid, |x: &[f64; 2]| 1.0 - (x[0] - std::f64::consts::PI).abs() / std::f64::consts::PI);
        let du = crate::value::gradient_field(&u);
        let err = backward_calibrated_curve(&sys, &u, &du, &grid.node(32), 10.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::IllPosedStart(_)));
    }

    #[test]
    fn rest_at_saddle_is_calibrated() {
        let sys = builtin::<f64>("pendulum", &SystemParams { lambda: 0.2, ..Default::default() }).unwrap();
        let grid = TorusGrid::new(1, &[64]).unwrap();
        let u = GridField::constant(grid, 0.0);
        let du = crate::value::gradient_field(&u);
        let rep = backward_calibrated_curve(&sys, &u, &du, &[0.0, 0.0], 20.0, 0.01).unwrap();
        assert!(rep.defect < 1e-12);
        assert!(rep.curve.x.iter().all(|x| x[0] == 0.0));
        assert!((rep.span[0] + 20.0).abs() < 1e-12);
    }
}

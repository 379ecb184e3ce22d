//! The Lyapunov function `F = λū + H`, its sign partition, and the maximal
//! global attractor by set-oriented cell mapping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::flow::{drive, flow_map, integrate_hamiltonian, step_count, FlowKind, IntegratorOptions, Trajectory};
use crate::model::{PhasePoint, TonelliSystem};
use crate::scalar::{angle_diff, wrap_angle, zero_vec, Scalar, Vector, MAX_DIM};
use crate::value::{max_residual_off_kinks, subsolution_residual, GridField};

/// Phase-space axes: positions first, then momenta.
pub const MAX_AXES: usize = 2 * MAX_DIM;
/// Minimum cells per axis.
pub const MIN_CELLS: usize = 32;

/// Box `T^dim × [−P, P]^dim` split into congruent cells, row-major over
/// `(x0[, x1], p0[, p1])`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxGrid<T> {
    pub dim: usize,
    pub p_max: T,
    pub cells: [usize; MAX_AXES],
}

impl<T: Scalar> BoxGrid<T> {
    /// `x_cells` and `p_cells` each give one count per axis or a single count
    /// used for every axis.
    pub fn new(dim: usize, p_max: T, x_cells: &[usize], p_cells: &[usize]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!("unsupported box dimension {dim}")));
        }
        if !(p_max > T::zero()) || !p_max.is_finite() {
            return Err(Error::Config(format!("momentum bound must be positive, got {p_max}")));
        }
        let pick = |v: &[usize], i: usize| -> Result<usize> {
            let n = *v
                .get(i)
                .or_else(|| v.first().filter(|_| v.len() == 1))
                .ok_or_else(|| Error::Config(format!("cell counts {v:?} do not match dimension {dim}")))?;
            if n < MIN_CELLS {
                return Err(Error::Config(format!("need at least {MIN_CELLS} cells per axis, got {n}")));
            }
            Ok(n)
        };
        let mut cells = [1usize; MAX_AXES];
        for i in 0..dim {
            cells[i] = pick(x_cells, i)?;
            cells[dim + i] = pick(p_cells, i)?;
        }
        Ok(Self { dim, p_max, cells })
    }

    #[inline]
    pub fn axes(&self) -> usize {
        2 * self.dim
    }

    #[inline]
    fn is_x(&self, axis: usize) -> bool {
        axis < self.dim
    }

    pub fn len(&self) -> usize {
        self.cells[..self.axes()].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn width(&self, axis: usize) -> T {
        if self.is_x(axis) {
            T::two_pi() / T::from_usize_lossy(self.cells[axis])
        } else {
            T::lit(2.0) * self.p_max / T::from_usize_lossy(self.cells[axis])
        }
    }

    #[inline]
    fn lower(&self, axis: usize) -> T {
        if self.is_x(axis) {
            T::zero()
        } else {
            -self.p_max
        }
    }

    pub fn half_widths(&self) -> [T; MAX_AXES] {
        let mut out = [T::zero(); MAX_AXES];
        for (a, o) in out.iter_mut().enumerate().take(self.axes()) {
            *o = self.width(a) * T::lit(0.5);
        }
        out
    }

    #[inline]
    pub fn multi(&self, mut idx: usize) -> [usize; MAX_AXES] {
        let mut m = [0usize; MAX_AXES];
        for a in (0..self.axes()).rev() {
            m[a] = idx % self.cells[a];
            idx /= self.cells[a];
        }
        m
    }

    #[inline]
    pub fn flat(&self, m: &[usize; MAX_AXES]) -> usize {
        let mut idx = 0;
        for a in 0..self.axes() {
            idx = idx * self.cells[a] + m[a];
        }
        idx
    }

    /// Phase point at relative position `frac ∈ [0,1]^axes` inside a cell.
    #[inline]
    pub fn point_in(&self, m: &[usize; MAX_AXES], frac: &[T; MAX_AXES]) -> PhasePoint<T> {
        let mut pp = PhasePoint::default();
        for a in 0..self.axes() {
            let c = self.lower(a) + (T::from_usize_lossy(m[a]) + frac[a]) * self.width(a);
            if self.is_x(a) {
                pp.x[a] = wrap_angle(c);
            } else {
                pp.p[a - self.dim] = c;
            }
        }
        pp
    }

    pub fn center(&self, idx: usize) -> PhasePoint<T> {
        self.point_in(&self.multi(idx), &[T::lit(0.5); MAX_AXES])
    }

    #[inline]
    fn coord(&self, pp: &PhasePoint<T>, axis: usize) -> T {
        if self.is_x(axis) {
            pp.x[axis]
        } else {
            pp.p[axis - self.dim]
        }
    }

    /// Cells whose closure contains `pp`: a point within `tol` (relative to
    /// the cell width) of a face belongs to the cells on both sides.
    pub fn locate(&self, pp: &PhasePoint<T>, tol: T) -> CellHits {
        let mut per_axis = [[0usize; 2]; MAX_AXES];
        let mut count = [0usize; MAX_AXES];
        let one = T::one();
        for a in 0..self.axes() {
            let n = self.cells[a];
            let mut c = self.coord(pp, a);
            if self.is_x(a) {
                c = wrap_angle(c);
            }
            let s = (c - self.lower(a)) / self.width(a);
            if !s.is_finite() {
                return CellHits::default();
            }
            let k = s.floor();
            let frac = s - k;
            let k = k.to_i64().unwrap_or(i64::MIN);
            let mut push = |j: i64| {
                let j = if self.is_x(a) {
                    Some(j.rem_euclid(n as i64) as usize)
                } else if (0..n as i64).contains(&j) {
                    Some(j as usize)
                } else {
                    None
                };
                if let Some(j) = j {
                    if count[a] < 2 && !per_axis[a][..count[a]].contains(&j) {
                        per_axis[a][count[a]] = j;
                        count[a] += 1;
                    }
                }
            };
            push(k);
            if frac <= tol {
                push(k - 1);
            } else if frac >= one - tol {
                push(k + 1);
            }
            if count[a] == 0 {
                return CellHits::default();
            }
        }
        let mut hits = CellHits::default();
        let axes = self.axes();
        let total: usize = count[..axes].iter().product();
        for combo in 0..total {
            let mut m = [0usize; MAX_AXES];
            let mut r = combo;
            for a in 0..axes {
                m[a] = per_axis[a][r % count[a]];
                r /= count[a];
            }
            hits.cells[hits.len] = self.flat(&m);
            hits.len += 1;
        }
        hits
    }

    /// All cells within one step (Chebyshev) of `idx`, including itself.
    pub fn neighbourhood(&self, idx: usize) -> Vec<usize> {
        let m = self.multi(idx);
        let axes = self.axes();
        let mut out = Vec::with_capacity(3usize.pow(axes as u32));
        for combo in 0..3usize.pow(axes as u32) {
            let mut r = combo;
            let mut q = m;
            let mut ok = true;
            for a in 0..axes {
                let off = (r % 3) as i64 - 1;
                r /= 3;
                let n = self.cells[a] as i64;
                let j = q[a] as i64 + off;
                if self.is_x(a) {
                    q[a] = j.rem_euclid(n) as usize;
                } else if (0..n).contains(&j) {
                    q[a] = j as usize;
                } else {
                    ok = false;
                }
            }
            if ok {
                out.push(self.flat(&q));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Image separation of two points in cell units (max over axes).
    fn separation(&self, a: &PhasePoint<T>, b: &PhasePoint<T>) -> T {
        let mut s = T::zero();
        for ax in 0..self.axes() {
            let d = if self.is_x(ax) { angle_diff(a.x[ax], b.x[ax]) } else { a.p[ax - self.dim] - b.p[ax - self.dim] };
            s = s.max(d.abs() / self.width(ax));
        }
        s
    }
}

/// Up to `2^axes` cells sharing a point.
#[derive(Clone, Copy, Debug, Default)]
pub struct CellHits {
    pub cells: [usize; 1 << MAX_AXES],
    pub len: usize,
}

impl CellHits {
    pub fn as_slice(&self) -> &[usize] {
        &self.cells[..self.len]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZLabel {
    Z0,
    Zplus,
    Zminus,
}

impl ZLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ZLabel::Z0 => "Z0",
            ZLabel::Zplus => "Zplus",
            ZLabel::Zminus => "Zminus",
        }
    }
}

/// Subset of the cells of a [`BoxGrid`].
#[derive(Clone, Debug)]
pub struct CellSet<T> {
    pub grid: BoxGrid<T>,
    pub members: Vec<bool>,
    pub labels: Option<Vec<ZLabel>>,
}

impl<T: Scalar> CellSet<T> {
    pub fn empty(grid: BoxGrid<T>) -> Self {
        Self { members: vec![false; grid.len()], grid, labels: None }
    }

    pub fn from_cells(grid: BoxGrid<T>, cells: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(grid);
        for c in cells {
            s.members[c] = true;
        }
        s
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.members.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.members[idx]
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.members.iter().zip(&other.members).all(|(a, b)| !*a || *b)
    }

    /// Members of `self` missing from `other`.
    pub fn difference(&self, other: &Self) -> Vec<usize> {
        self.members.iter().zip(&other.members).enumerate().filter(|(_, (a, b))| **a && !**b).map(|(i, _)| i).collect()
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let members = self.members.iter().zip(&other.members).map(|(a, b)| *a && *b).collect();
        Self { grid: self.grid, members, labels: None }
    }

    pub fn union(&self, other: &Self) -> Self {
        let members = self.members.iter().zip(&other.members).map(|(a, b)| *a || *b).collect();
        Self { grid: self.grid, members, labels: None }
    }

    /// Chebyshev one-cell dilation.
    pub fn dilate(&self) -> Self {
        let mut out = Self::empty(self.grid);
        for i in self.indices() {
            for j in self.grid.neighbourhood(i) {
                out.members[j] = true;
            }
        }
        out
    }

    /// Cells carrying `label` (empty when unlabelled).
    pub fn with_label(&self, label: ZLabel) -> Self {
        let mut out = Self::empty(self.grid);
        if let Some(l) = &self.labels {
            for (i, m) in out.members.iter_mut().enumerate() {
                *m = l[i] == label;
            }
        }
        out
    }

    /// Total phase-space volume of the member cells.
    pub fn volume(&self) -> T {
        let cell: T = (0..self.grid.axes()).map(|a| self.grid.width(a)).fold(T::one(), |a, b| a * b);
        cell * T::from_usize_lossy(self.count())
    }
}

/// `F(x, p) = λ·I[ū](x) + H(x, p)`.
#[inline]
pub fn lyapunov_value<T: Scalar>(sys: &TonelliSystem<T>, u: &GridField<T>, pp: &PhasePoint<T>) -> T {
    sys.lambda * u.interpolate(&pp.x) + sys.hamiltonian(&pp.x, &pp.p)
}

/// Smallest Z⁰ thickness [`default_eps0`] returns.
pub const EPS0_FLOOR: f64 = 1e-6;

/// Default Z⁰ thickness: twice the consistency residual of the value
/// solve off the kinks, floored at [`EPS0_FLOOR`].
pub fn default_eps0<T: Scalar>(sys: &TonelliSystem<T>, u: &GridField<T>) -> T {
    (T::lit(2.0) * max_residual_off_kinks(&subsolution_residual(sys, u))).max(T::lit(EPS0_FLOOR))
}

/// Labels every cell by the range of `F` over its corners and centre:
/// `Zminus` when the whole range is below `−eps0`, `Zplus` when it is above
/// `eps0`, `Z0` otherwise.
pub fn z_partition<T: Scalar>(
    sys: &TonelliSystem<T>,
    u: &GridField<T>,
    grid: &BoxGrid<T>,
    eps0: T,
) -> Result<CellSet<T>> {
    precondition(grid.dim == sys.dim() && u.grid.dim == sys.dim(), || "dimension mismatch".into())?;
    precondition(eps0 >= T::zero(), || format!("eps0 must be non-negative, got {eps0}"))?;
    let vgrid = VertexGrid::new(grid);
    let fv: Vec<T> = (0..vgrid.len()).into_par_iter().map(|v| lyapunov_value(sys, u, &vgrid.point(v))).collect();
    // box must enclose {F ≤ 0}
    for v in 0..vgrid.len() {
        if vgrid.on_momentum_boundary(v) && fv[v] <= T::zero() {
            let pp = vgrid.point(v);
            return Err(Error::Config(format!(
                "momentum box P = {} is too small: F = {} ≤ 0 at x = {:?}, p = {:?}",
                grid.p_max,
                fv[v],
                &pp.x[..grid.dim],
                &pp.p[..grid.dim]
            )));
        }
    }
    let labels: Vec<ZLabel> = (0..grid.len())
        .into_par_iter()
        .map(|c| {
            let m = grid.multi(c);
            let centre = lyapunov_value(sys, u, &grid.point_in(&m, &[T::lit(0.5); MAX_AXES]));
            let (mut lo, mut hi) = (centre, centre);
            for corner in 0..(1usize << grid.axes()) {
                let f = fv[vgrid.corner(&m, corner)];
                lo = lo.min(f);
                hi = hi.max(f);
            }
            if hi < -eps0 {
                ZLabel::Zminus
            } else if lo > eps0 {
                ZLabel::Zplus
            } else {
                ZLabel::Z0
            }
        })
        .collect();
    let members = labels.iter().map(|l| *l != ZLabel::Zplus).collect();
    Ok(CellSet { grid: *grid, members, labels: Some(labels) })
}

/// Cell vertices; position axes are periodic, momentum axes have `n + 1`.
struct VertexGrid<'a, T> {
    grid: &'a BoxGrid<T>,
    counts: [usize; MAX_AXES],
}

impl<'a, T: Scalar> VertexGrid<'a, T> {
    fn new(grid: &'a BoxGrid<T>) -> Self {
        let mut counts = [1usize; MAX_AXES];
        for a in 0..grid.axes() {
            counts[a] = if grid.is_x(a) { grid.cells[a] } else { grid.cells[a] + 1 };
        }
        Self { grid, counts }
    }

    fn len(&self) -> usize {
        self.counts[..self.grid.axes()].iter().product()
    }

    fn multi(&self, mut v: usize) -> [usize; MAX_AXES] {
        let mut m = [0usize; MAX_AXES];
        for a in (0..self.grid.axes()).rev() {
            m[a] = v % self.counts[a];
            v /= self.counts[a];
        }
        m
    }

    fn point(&self, v: usize) -> PhasePoint<T> {
        self.grid.point_in(&self.multi(v), &[T::zero(); MAX_AXES])
    }

    fn on_momentum_boundary(&self, v: usize) -> bool {
        let m = self.multi(v);
        (self.grid.dim..self.grid.axes()).any(|a| m[a] == 0 || m[a] == self.counts[a] - 1)
    }

    /// Vertex index of corner `bits` of cell `m`.
    fn corner(&self, m: &[usize; MAX_AXES], bits: usize) -> usize {
        let mut idx = 0;
        for a in 0..self.grid.axes() {
            let mut j = m[a] + ((bits >> a) & 1);
            if self.grid.is_x(a) && j == self.counts[a] {
                j = 0;
            }
            idx = idx * self.counts[a] + j;
        }
        idx
    }
}

/// `max_t F(Φ^t) − F(start)·e^{−λ(t − t₀)}` along a forward trajectory.
pub fn lyapunov_decay_check<T: Scalar>(sys: &TonelliSystem<T>, u: &GridField<T>, traj: &Trajectory<T>) -> Result<T> {
    precondition(traj.kind == FlowKind::Hamiltonian, || "decay check needs a hamiltonian trajectory".into())?;
    precondition(!traj.is_empty(), || "empty trajectory".into())?;
    let f0 = lyapunov_value(sys, u, &traj.phase_point(0));
    let t0 = traj.times[0];
    Ok((0..traj.len())
        .map(|i| lyapunov_value(sys, u, &traj.phase_point(i)) - f0 * (-sys.lambda * (traj.times[i] - t0)).exp())
        .fold(T::neg_infinity(), T::max))
}

/// Cell-mapping knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMapOptions<T> {
    pub tau: T,
    pub dt: T,
    /// Largest number of sub-intervals per axis when refining the samples.
    pub max_refine: usize,
    /// Cap on samples per cell.
    pub max_samples: usize,
    /// Relative face tolerance for the closed-cell hit rule.
    pub face_tol: T,
}

impl<T: Scalar> CellMapOptions<T> {
    pub fn new(tau: T, dt: T) -> Self {
        Self { tau, dt, max_refine: 8, max_samples: 4096, face_tol: T::lit(1e-9) }
    }
}

/// Outcome of the cell-mapping iteration.
#[derive(Clone, Debug)]
pub struct Attractor<T> {
    pub cells: CellSet<T>,
    /// Cells that survived, and the image cells of each start cell.
    pub transitions: Vec<(usize, Vec<usize>)>,
    pub rounds: usize,
    pub samples: usize,
}

/// Outer approximation of `⋂_{t≥0} Φ^t(Z⁰ ∪ Z⁻)`: starting from the
/// non-`Zplus` cells of `zsets`, repeatedly drops cells not hit by any
/// remaining cell under `Φ^τ`.
pub fn maximal_attractor<T: Scalar>(
    sys: &TonelliSystem<T>,
    zsets: &CellSet<T>,
    opts: &CellMapOptions<T>,
) -> Result<Attractor<T>> {
    let grid = zsets.grid;
    precondition(grid.dim == sys.dim(), || "dimension mismatch".into())?;
    precondition(opts.tau > T::zero() && opts.dt > T::zero(), || "tau and dt must be positive".into())?;
    let start = zsets.indices();
    let vgrid = VertexGrid::new(&grid);
    let axes = grid.axes();
    let n_corners = 1usize << axes;

    // images of all vertices touching the start set
    let mut needed = vec![false; vgrid.len()];
    for &c in &start {
        let m = grid.multi(c);
        for b in 0..n_corners {
            needed[vgrid.corner(&m, b)] = true;
        }
    }
    let needed_idx: Vec<usize> = needed.iter().enumerate().filter(|(_, n)| **n).map(|(i, _)| i).collect();
    let image = |pp: &PhasePoint<T>| flow_map(sys, pp, opts.tau, opts.dt).ok();
    let computed: Vec<Option<PhasePoint<T>>> = needed_idx.par_iter().map(|&v| image(&vgrid.point(v))).collect();
    let mut vimg: Vec<Option<PhasePoint<T>>> = vec![None; vgrid.len()];
    for (k, v) in needed_idx.iter().enumerate() {
        vimg[*v] = computed[k];
    }

    let results: Vec<(Vec<usize>, usize)> = start
        .par_iter()
        .map(|&c| {
            let m = grid.multi(c);
            let corners: Vec<Option<PhasePoint<T>>> = (0..n_corners).map(|b| vimg[vgrid.corner(&m, b)]).collect();
            // refinement per axis from corner image spread
            let mut refine = [1usize; MAX_AXES];
            for a in 0..axes {
                let mut spread = T::zero();
                for b in 0..n_corners {
                    if b & (1 << a) == 0 {
                        match (&corners[b], &corners[b | (1 << a)]) {
                            (Some(p), Some(q)) => spread = spread.max(grid.separation(p, q)),
                            _ => spread = T::lit(opts.max_refine as f64),
                        }
                    }
                }
                refine[a] = spread.ceil().to_usize().unwrap_or(opts.max_refine).clamp(1, opts.max_refine.max(1));
            }
            loop {
                let total: usize = refine[..axes].iter().map(|r| r + 1).product();
                if total <= opts.max_samples.max(n_corners + 1) {
                    break;
                }
                let (a, _) = refine[..axes].iter().enumerate().max_by_key(|(_, r)| **r).unwrap();
                refine[a] -= 1;
            }
            let mut targets = Vec::new();
            let mut record = |pp: &PhasePoint<T>| {
                for &t in grid.locate(pp, opts.face_tol).as_slice() {
                    if zsets.members[t] {
                        targets.push(t);
                    }
                }
            };
            for p in corners.iter().flatten() {
                record(p);
            }
            let mut samples = n_corners;
            let mut extra = vec![[T::lit(0.5); MAX_AXES]];
            if refine[..axes].iter().any(|r| *r > 1) {
                let total: usize = refine[..axes].iter().map(|r| r + 1).product();
                for combo in 0..total {
                    let mut r = combo;
                    let mut frac = [T::zero(); MAX_AXES];
                    let mut is_corner = true;
                    for a in 0..axes {
                        let k = r % (refine[a] + 1);
                        r /= refine[a] + 1;
                        if k != 0 && k != refine[a] {
                            is_corner = false;
                        }
                        frac[a] = T::from_usize_lossy(k) / T::from_usize_lossy(refine[a]);
                    }
                    if !is_corner {
                        extra.push(frac);
                    }
                }
            }
            for frac in &extra {
                if let Some(q) = image(&grid.point_in(&m, frac)) {
                    record(&q);
                }
                samples += 1;
            }
            targets.sort_unstable();
            targets.dedup();
            (targets, samples)
        })
        .collect();

    // in-degree pruning by rounds
    let mut slot = vec![usize::MAX; grid.len()];
    for (k, &c) in start.iter().enumerate() {
        slot[c] = k;
    }
    let mut indeg = vec![0usize; start.len()];
    for (targets, _) in &results {
        for &t in targets {
            indeg[slot[t]] += 1;
        }
    }
    let mut alive = vec![true; start.len()];
    let mut frontier: Vec<usize> = (0..start.len()).filter(|&k| indeg[k] == 0).collect();
    let mut rounds = 0;
    while !frontier.is_empty() {
        rounds += 1;
        if rounds > 1000 {
            return Err(Error::Internal("cell mapping did not stabilise within 1000 rounds".into()));
        }
        let mut next = Vec::new();
        for &k in &frontier {
            alive[k] = false;
        }
        for &k in &frontier {
            for &t in &results[k].0 {
                let j = slot[t];
                if alive[j] {
                    indeg[j] -= 1;
                    if indeg[j] == 0 {
                        next.push(j);
                    }
                }
            }
        }
        next.sort_unstable();
        next.dedup();
        next.retain(|&j| alive[j]);
        frontier = next;
    }
    let samples = results.iter().map(|r| r.1).sum();
    let cells = CellSet::from_cells(grid, start.iter().zip(&alive).filter(|(_, a)| **a).map(|(c, _)| *c));
    let transitions =
        start.iter().zip(results).filter(|(c, _)| cells.members[**c]).map(|(c, (t, _))| (*c, t)).collect();
    Ok(Attractor { cells, transitions, rounds: rounds + 1, samples })
}

/// Forward invariance of the attractor under its cell map: every surviving
/// cell has an image cell inside the set. Returns the offending cells.
pub fn forward_invariance_violations<T: Scalar>(att: &Attractor<T>) -> Vec<usize> {
    att.transitions.iter().filter(|(_, t)| !t.iter().any(|c| att.cells.members[*c])).map(|(c, _)| *c).collect()
}

/// Cells containing the given phase points (closed-cell rule).
pub fn cells_of_points<T: Scalar>(grid: &BoxGrid<T>, points: &[PhasePoint<T>]) -> CellSet<T> {
    let mut s = CellSet::empty(*grid);
    for p in points {
        for &c in grid.locate(p, T::lit(1e-9)).as_slice() {
            s.members[c] = true;
        }
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaOptions<T> {
    pub t_transient: T,
    pub t_obs: T,
    pub cluster_eps: T,
    pub dt: T,
    /// Cluster on momenta only (rotating invariant tori).
    pub momentum_only: bool,
}

/// Representatives of the ω-limit sets of the given starts, in order of first
/// appearance.
pub fn omega_limit<T: Scalar>(
    sys: &TonelliSystem<T>,
    starts: &[PhasePoint<T>],
    opts: &OmegaOptions<T>,
) -> Result<Vec<PhasePoint<T>>> {
    precondition(opts.t_transient >= T::lit(5.0) / sys.lambda * T::lit(1.0 - 1e-12), || {
        format!("transient {} must be at least 5/lambda", opts.t_transient)
    })?;
    precondition(opts.t_obs >= T::zero() && opts.cluster_eps > T::zero(), || "invalid observation window".into())?;
    let n = sys.dim();
    let per_start: Vec<Vec<PhasePoint<T>>> = starts
        .par_iter()
        .map(|s| {
            let steps = step_count(opts.t_transient, opts.dt);
            let h = opts.t_transient / T::from_usize_lossy(steps);
            let settled = drive(sys, s, T::zero(), h, steps, &IntegratorOptions::default(), |_, _, _, _| {})?;
            if opts.t_obs > T::zero() {
                let obs = integrate_hamiltonian(sys, &settled, T::zero(), opts.t_obs, opts.dt.min(opts.t_obs))?;
                Ok((0..obs.len()).map(|i| obs.phase_point(i)).collect())
            } else {
                Ok(vec![settled])
            }
        })
        .collect::<Result<_>>()?;
    let dist = |a: &PhasePoint<T>, b: &PhasePoint<T>| {
        let mut d2 = T::zero();
        for i in 0..n {
            if !opts.momentum_only {
                let dx = angle_diff(a.x[i], b.x[i]);
                d2 = d2 + dx * dx;
            }
            let dp = a.p[i] - b.p[i];
            d2 = d2 + dp * dp;
        }
        d2.sqrt()
    };
    let mut reps: Vec<PhasePoint<T>> = Vec::new();
    for states in &per_start {
        for s in states {
            if !reps.iter().any(|r| dist(r, s) <= opts.cluster_eps) {
                reps.push(*s);
            }
        }
    }
    Ok(reps)
}

/// Default momentum box half-width `max(3, 2‖η‖/λ + 2)`.
pub fn default_box_bound<T: Scalar>(sys: &TonelliSystem<T>) -> T {
    let drift = sys.drift.unwrap_or_else(zero_vec::<T>);
    let mut shift: Vector<T> = zero_vec();
    for i in 0..sys.dim() {
        shift[i] = drift[i] / sys.lambda;
    }
    let eta = crate::scalar::norm(sys.dim(), &shift) + crate::scalar::norm(sys.dim(), &sys.momentum_offset);
    T::lit(3.0).max(T::lit(2.0) * eta + T::lit(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_indexing_roundtrip() {
        let g = BoxGrid::<f64>::new(2, 3.0, &[32, 40], &[34, 36]).unwrap();
        assert_eq!(g.len(), 32 * 40 * 34 * 36);
        let m = g.multi(123_457);
        assert_eq!(g.flat(&m), 123_457);
        assert!(BoxGrid::<f64>::new(1, 3.0, &[16], &[32]).is_err());
        assert!(BoxGrid::<f64>::new(1, -1.0, &[32], &[32]).is_err());
    }

    #[test]
    fn closed_cell_rule() {
        let g = BoxGrid::<f64>::new(1, 3.0, &[32], &[32]).unwrap();
        // the origin is a corner shared by four cells (x wraps)
        let hits = g.locate(&PhasePoint::new(1, &[0.0], &[0.0]), 1e-9);
        assert_eq!(hits.len, 4);
        let inner = g.locate(&PhasePoint::new(1, &[0.1], &[0.1]), 1e-9);
        assert_eq!(inner.len, 1);
        let outside = g.locate(&PhasePoint::new(1, &[0.1], &[3.5]), 1e-9);
        assert_eq!(outside.len, 0);
    }

    #[test]
    fn dilation_and_subsets() {
        let g = BoxGrid::<f64>::new(1, 3.0, &[32], &[32]).unwrap();
        let s = CellSet::from_cells(g, [g.flat(&[5, 0, 0, 0])]);
        let d = s.dilate();
        // bottom momentum row: 3 × 2 neighbourhood
        assert_eq!(d.count(), 6);
        assert!(s.is_subset(&d));
        assert!(!d.is_subset(&s));
        assert_eq!(d.difference(&s).len(), 5);
    }
}

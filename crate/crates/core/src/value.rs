//! Semi-Lagrangian discounted Lax–Oleinik iteration for `λu + H(x, du) = 0`
//! on a periodic grid, gradient extraction and domination checks.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::flow::{integrate_samples, FlowKind, Trajectory};
use crate::model::TonelliSystem;
use crate::scalar::{norm, zero_vec, Scalar, Vector, MAX_DIM};

/// Minimum nodes per axis.
pub const MIN_RESOLUTION: usize = 16;

/// Uniform periodic grid on `T^dim`; node `(j, k)` sits at `(j·h₀, k·h₁)` and
/// is stored row-major with axis 0 slowest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusGrid<T> {
    pub dim: usize,
    pub n: [usize; MAX_DIM],
    pub spacing: [T; MAX_DIM],
}

impl<T: Scalar> TorusGrid<T> {
    pub fn new(dim: usize, resolution: &[usize]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!("unsupported grid dimension {dim}")));
        }
        if resolution.len() != dim && resolution.len() != 1 {
            return Err(Error::Config(format!("grid resolution {resolution:?} does not match dimension {dim}")));
        }
        let mut n = [1usize; MAX_DIM];
        let mut spacing = [T::zero(); MAX_DIM];
        for i in 0..dim {
            let ni = resolution[i.min(resolution.len() - 1)];
            if ni < MIN_RESOLUTION {
                return Err(Error::Config(format!(
                    "grid resolution must be at least {MIN_RESOLUTION} per axis, got {ni}"
                )));
            }
            n[i] = ni;
            spacing[i] = T::two_pi() / T::from_usize_lossy(ni);
        }
        Ok(Self { dim, n, spacing })
    }

    pub fn len(&self) -> usize {
        self.n[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_spacing(&self) -> T {
        self.spacing[..self.dim].iter().fold(T::zero(), |a, b| a.max(*b))
    }

    /// Per-axis indices of a flat node index.
    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; MAX_DIM] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / self.n[1], idx % self.n[1]]
        }
    }

    #[inline]
    pub fn flat_index(&self, m: [usize; MAX_DIM]) -> usize {
        if self.dim == 1 {
            m[0]
        } else {
            m[0] * self.n[1] + m[1]
        }
    }

    /// Coordinates of node `idx`.
    #[inline]
    pub fn node(&self, idx: usize) -> Vector<T> {
        let m = self.multi_index(idx);
        let mut x = zero_vec();
        for i in 0..self.dim {
            x[i] = T::from_usize_lossy(m[i]) * self.spacing[i];
        }
        x
    }

    /// Neighbour of `idx` shifted by `step` along `axis`, periodically.
    #[inline]
    pub fn neighbour(&self, idx: usize, axis: usize, step: isize) -> usize {
        let mut m = self.multi_index(idx);
        let n = self.n[axis] as isize;
        m[axis] = (m[axis] as isize + step).rem_euclid(n) as usize;
        self.flat_index(m)
    }

    /// Nearest node to `x` (any real coordinates).
    pub fn nearest(&self, x: &Vector<T>) -> usize {
        let mut m = [0usize; MAX_DIM];
        for i in 0..self.dim {
            let s = (x[i] / self.spacing[i]).round().to_i64().unwrap_or(0);
            m[i] = s.rem_euclid(self.n[i] as i64) as usize;
        }
        self.flat_index(m)
    }

    /// Multilinear interpolation stencil: node indices, weights and count.
    #[inline]
    pub fn stencil(&self, x: &Vector<T>) -> ([usize; 4], [T; 4], usize) {
        let mut lo = [0usize; MAX_DIM];
        let mut hi = [0usize; MAX_DIM];
        let mut frac = [T::zero(); MAX_DIM];
        for i in 0..self.dim {
            let s = x[i] / self.spacing[i];
            let f = s.floor();
            let j = f.to_i64().unwrap_or(0).rem_euclid(self.n[i] as i64) as usize;
            lo[i] = j;
            hi[i] = if j + 1 == self.n[i] { 0 } else { j + 1 };
            frac[i] = s - f;
        }
        let one = T::one();
        if self.dim == 1 {
            ([lo[0], hi[0], 0, 0], [one - frac[0], frac[0], T::zero(), T::zero()], 2)
        } else {
            let n1 = self.n[1];
            let (a, b) = (frac[0], frac[1]);
            (
                [lo[0] * n1 + lo[1], lo[0] * n1 + hi[1], hi[0] * n1 + lo[1], hi[0] * n1 + hi[1]],
                [(one - a) * (one - b), (one - a) * b, a * (one - b), a * b],
                4,
            )
        }
    }
}

/// Values on a [`TorusGrid`]; `V` is `T` for scalar fields and `Vector<T>`
/// for gradients.
#[derive(Clone, Debug)]
pub struct GridField<T, V = T> {
    pub grid: TorusGrid<T>,
    pub values: Vec<V>,
    pub kink_mask: Option<Vec<bool>>,
}

pub type VectorField<T> = GridField<T, Vector<T>>;

impl<T: Scalar> GridField<T, T> {
    pub fn constant(grid: TorusGrid<T>, c: T) -> Self {
        Self { grid, values: vec![c; grid.len()], kink_mask: None }
    }

    pub fn from_fn(grid: TorusGrid<T>, f: impl Fn(&Vector<T>) -> T) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self { grid, values, kink_mask: None }
    }

    /// Periodic multilinear interpolation.
    #[inline]
    pub fn interpolate(&self, x: &Vector<T>) -> T {
        let (idx, w, k) = self.grid.stencil(x);
        let mut s = T::zero();
        for j in 0..k {
            s = s + w[j] * self.values[idx[j]];
        }
        s
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a.max(v.abs()))
    }

    pub fn min(&self) -> T {
        self.values.iter().fold(T::infinity(), |a, v| a.min(*v))
    }

    pub fn max(&self) -> T {
        self.values.iter().fold(T::neg_infinity(), |a, v| a.max(*v))
    }

    /// `max |self − other|` over the nodes.
    pub fn distance(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).fold(T::zero(), |a, (u, w)| a.max((*u - *w).abs()))
    }
}

impl<T: Scalar> GridField<T, Vector<T>> {
    /// Componentwise periodic multilinear interpolation.
    #[inline]
    pub fn interpolate_vec(&self, x: &Vector<T>) -> Vector<T> {
        let (idx, w, k) = self.grid.stencil(x);
        let mut s = zero_vec();
        for j in 0..k {
            let v = &self.values[idx[j]];
            for d in 0..self.grid.dim {
                s[d] = s[d] + w[j] * v[d];
            }
        }
        s
    }

    pub fn is_kink(&self, idx: usize) -> bool {
        self.kink_mask.as_ref().is_some_and(|m| m[idx])
    }

    /// True when any node of the interpolation stencil at `x` is a kink.
    pub fn near_kink(&self, x: &Vector<T>) -> bool {
        let Some(mask) = &self.kink_mask else { return false };
        let (idx, w, k) = self.grid.stencil(x);
        (0..k).any(|j| w[j] > T::zero() && mask[idx[j]])
    }

    pub fn kink_count(&self) -> usize {
        self.kink_mask.as_ref().map_or(0, |m| m.iter().filter(|k| **k).count())
    }
}

/// Outcome of a value solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Sup-norm of the last successive difference.
    pub final_residual: f64,
    /// `final_residual / (1 − e^{−λh})`, a bound on the distance to the
    /// discrete fixed point.
    pub guaranteed_error: f64,
    pub wall_time: f64,
}

/// How the Lax–Oleinik step minimises over velocities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocitySearch {
    /// Exact minimum over the velocity box `[−A, A]^dim` of the objective
    /// built on piecewise-linear interpolation (segments in 1D, Kuhn
    /// triangles in 2D). The search set does not depend on `u`, so the
    /// operator is an exact sup-norm contraction.
    Exact,
    /// Minimum over a `(2m+1)^dim` velocity lattice followed by a local
    /// polish inside the winning lattice cell, on multilinear
    /// interpolation. Cheaper per node, but the polish makes the search set
    /// depend on `u`.
    Lattice,
}

/// Velocity search knobs of the Lax–Oleinik step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepOptions {
    pub search: VelocitySearch,
    /// Half-width `m` of the lattice (lattice search only).
    pub velocity_samples: usize,
    /// Local refinement inside the winning lattice cell (lattice search only).
    pub polish: bool,
    pub polish_sweeps: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { search: VelocitySearch::Exact, velocity_samples: 12, polish: true, polish_sweeps: 2 }
    }
}

fn check_step<T: Scalar>(sys: &TonelliSystem<T>, grid: &TorusGrid<T>, h: T) -> Result<()> {
    precondition(grid.dim == sys.dim(), || {
        format!("grid dimension {} does not match system dimension {}", grid.dim, sys.dim())
    })?;
    precondition(h > T::zero() && h.is_finite(), || format!("time step h must be positive, got {h}"))?;
    precondition(h <= T::lit(0.5) / sys.lambda, || {
        format!("time step h = {h} exceeds 0.5/lambda = {}", T::lit(0.5) / sys.lambda)
    })?;
    // characteristics must not wrap around the torus within one step
    precondition(h * sys.velocity_bound < T::PI(), || format!("h·A = {} must stay below π", h * sys.velocity_bound))
}

struct Searcher<T> {
    lattice: Vec<Vector<T>>,
    delta: T,
    bound: T,
    modulus: T,
    opts: StepOptions,
}

impl<T: Scalar> Searcher<T> {
    fn new(sys: &TonelliSystem<T>, opts: StepOptions) -> Self {
        let dim = sys.dim();
        let bound = sys.velocity_bound;
        let modulus = sys.convexity_modulus().max(T::zero());
        if opts.search == VelocitySearch::Exact {
            return Self { lattice: Vec::new(), delta: T::zero(), bound, modulus, opts };
        }
        let m = opts.velocity_samples.max(1);
        let side = 2 * m + 1;
        let delta = bound / T::from_usize_lossy(m);
        let coord = |k: usize| (T::from_usize_lossy(k) - T::from_usize_lossy(m)) * delta;
        let lattice = if dim == 1 {
            (0..side).map(|k| [coord(k), T::zero()]).collect()
        } else {
            (0..side * side).map(|k| [coord(k / side), coord(k % side)]).collect()
        };
        Self { lattice, delta, bound, modulus, opts }
    }

    /// `min_v disc·I[u](x − h v) + h L(x, v)` over the search set, at node
    /// `node` with position `x`.
    #[inline]
    fn minimize(&self, sys: &TonelliSystem<T>, u: &GridField<T>, node: usize, x: &Vector<T>, h: T, disc: T) -> T {
        match (self.opts.search, u.grid.dim) {
            (VelocitySearch::Exact, 1) => self.exact_1d(sys, u, node, x, h, disc),
            (VelocitySearch::Exact, _) => self.exact_2d(sys, u, node, x, h, disc),
            (VelocitySearch::Lattice, _) => self.lattice_min(sys, u, x, h, disc),
        }
    }

    fn lattice_min(&self, sys: &TonelliSystem<T>, u: &GridField<T>, x: &Vector<T>, h: T, disc: T) -> T {
        let dim = u.grid.dim;
        let objective = |v: &Vector<T>| {
            let mut y = *x;
            for i in 0..dim {
                y[i] = x[i] - h * v[i];
            }
            disc * u.interpolate(&y) + h * sys.lagrangian(x, v)
        };
        let mut best = T::infinity();
        let mut arg = self.lattice[0];
        for v in &self.lattice {
            let g = objective(v);
            if g < best {
                best = g;
                arg = *v;
            }
        }
        if !self.opts.polish {
            return best;
        }
        let mut cur = arg;
        let mut cur_val = best;
        let sweeps = if dim == 1 { 1 } else { self.opts.polish_sweeps.max(1) };
        for _ in 0..sweeps {
            for axis in 0..dim {
                let (a, b) = (arg[axis] - self.delta, arg[axis] + self.delta);
                let (t, val) = golden_section(
                    |s| {
                        let mut v = cur;
                        v[axis] = s;
                        objective(&v)
                    },
                    a,
                    b,
                );
                if val < cur_val {
                    cur[axis] = t;
                    cur_val = val;
                }
            }
        }
        cur_val.min(best)
    }
}

/// Lower bound of `h·L(x, v)` over velocities within `dist2` (squared) of
/// the minimiser `v̂` of `L(x, ·)`.
#[inline]
fn lagrangian_floor<T: Scalar>(h: T, l_min: T, modulus: T, dist2: T) -> T {
    h * (l_min + T::lit(0.5) * modulus * dist2)
}

#[inline]
fn interval_dist2<T: Scalar>(c: T, lo: T, hi: T) -> T {
    let d = if c < lo {
        lo - c
    } else if c > hi {
        c - hi
    } else {
        T::zero()
    };
    d * d
}

#[inline]
fn clamp01<T: Scalar>(t: T) -> T {
    t.max(T::zero()).min(T::one())
}

/// One Kuhn triangle of the interpolation cell at offset `cell` (grid
/// units, relative to the node): `upper` selects the half `t ≥ s`.
#[derive(Clone, Copy)]
struct Piece<T> {
    lb: T,
    cell: [i64; 2],
    upper: bool,
    vals: [T; 3],
}

impl<T: Scalar> Searcher<T> {
    fn exact_1d(&self, sys: &TonelliSystem<T>, u: &GridField<T>, node: usize, x: &Vector<T>, h: T, disc: T) -> T {
        let grid = &u.grid;
        let n = grid.n[0] as i64;
        let dx = grid.spacing[0];
        let r = h / dx;
        let a_bound = self.bound;
        let zero = zero_vec::<T>();
        let v_hat = sys.dh_dp(x, &zero);
        let l_min = sys.lagrangian(x, &v_hat);
        let i = node as i64;
        let j_lo = (-a_bound * r).floor().to_i64().unwrap_or(0);
        let j_hi = (a_bound * r).floor().to_i64().unwrap_or(0);
        // segment j: v ∈ [j/r, (j+1)/r], y runs from node i−j to node i−j−1
        let mut pieces: Vec<(T, i64, T, T)> = Vec::with_capacity((j_hi - j_lo + 1) as usize);
        for j in j_lo..=j_hi {
            let a = (T::from_i64(j).unwrap() / r).max(-a_bound);
            let b = (T::from_i64(j + 1).unwrap() / r).min(a_bound);
            if b < a {
                continue;
            }
            let ua = u.values[(i - j).rem_euclid(n) as usize];
            let ub = u.values[(i - j - 1).rem_euclid(n) as usize];
            let lb = disc * ua.min(ub) + lagrangian_floor(h, l_min, self.modulus, interval_dist2(v_hat[0], a, b));
            pieces.push((lb, j, ua, ub));
        }
        pieces.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap_or(std::cmp::Ordering::Equal).then(p.1.cmp(&q.1)));
        let mut best = T::infinity();
        for &(lb, j, ua, ub) in &pieces {
            if lb >= best {
                break;
            }
            let jt = T::from_i64(j).unwrap();
            let a = (jt / r).max(-a_bound);
            let b = ((jt + T::one()) / r).min(a_bound);
            // stationary point: ∂L/∂v = disc·(slope of the interpolant in y)
            let p = [disc * (ua - ub) / dx, T::zero()];
            let v = sys.dh_dp(x, &p)[0].max(a).min(b);
            let theta = clamp01(v * r - jt);
            let f = h * sys.lagrangian(x, &[v, T::zero()]) + disc * ((T::one() - theta) * ua + theta * ub);
            if f < best {
                best = f;
            }
        }
        best
    }

    fn exact_2d(&self, sys: &TonelliSystem<T>, u: &GridField<T>, node: usize, x: &Vector<T>, h: T, disc: T) -> T {
        let grid = &u.grid;
        let (n0, n1) = (grid.n[0] as i64, grid.n[1] as i64);
        let r = [h / grid.spacing[0], h / grid.spacing[1]];
        let a_bound = self.bound;
        let zero = zero_vec::<T>();
        let v_hat = sys.dh_dp(x, &zero);
        let l_min = sys.lagrangian(x, &v_hat);
        let m = grid.multi_index(node);
        let (i0, i1) = (m[0] as i64, m[1] as i64);
        let at = |c0: i64, c1: i64| u.values[((i0 + c0).rem_euclid(n0) * n1 + (i1 + c1).rem_euclid(n1)) as usize];
        // w = −r·v in grid units; cells [c, c+1] covering |w_k| ≤ A·r_k
        let range = |k: usize| {
            let lo = (-a_bound * r[k]).floor().to_i64().unwrap_or(0);
            let hi = (a_bound * r[k]).floor().to_i64().unwrap_or(0);
            (lo, hi)
        };
        let (lo0, hi0) = range(0);
        let (lo1, hi1) = range(1);
        // v-range of cell c along axis k
        let v_span = |k: usize, c: i64| {
            let ct = T::from_i64(c).unwrap();
            ((-(ct + T::one()) / r[k]).max(-a_bound), (-ct / r[k]).min(a_bound))
        };
        let mut pieces: Vec<Piece<T>> = Vec::with_capacity(2 * ((hi0 - lo0 + 1) * (hi1 - lo1 + 1)) as usize);
        for c0 in lo0..=hi0 {
            let (a0, b0) = v_span(0, c0);
            if b0 < a0 {
                continue;
            }
            for c1 in lo1..=hi1 {
                let (a1, b1) = v_span(1, c1);
                if b1 < a1 {
                    continue;
                }
                let floor = lagrangian_floor(
                    h,
                    l_min,
                    self.modulus,
                    interval_dist2(v_hat[0], a0, b0) + interval_dist2(v_hat[1], a1, b1),
                );
                let (u00, u10, u01, u11) = (at(c0, c1), at(c0 + 1, c1), at(c0, c1 + 1), at(c0 + 1, c1 + 1));
                for (upper, vals) in [(false, [u00, u10, u11]), (true, [u00, u01, u11])] {
                    let lb = disc * vals[0].min(vals[1]).min(vals[2]) + floor;
                    pieces.push(Piece { lb, cell: [c0, c1], upper, vals });
                }
            }
        }
        pieces.sort_by(|p, q| {
            p.lb.partial_cmp(&q.lb)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(p.cell.cmp(&q.cell))
                .then(p.upper.cmp(&q.upper))
        });
        let mut best = T::infinity();
        for piece in &pieces {
            if piece.lb >= best {
                break;
            }
            let f = self.triangle_min(sys, x, h, disc, r, piece);
            if f < best {
                best = f;
            }
        }
        best
    }

    /// Minimum over the part of one triangle inside the velocity box. The
    /// objective is convex there: either its stationary point is feasible,
    /// or the minimum lies on the boundary polygon.
    fn triangle_min(&self, sys: &TonelliSystem<T>, x: &Vector<T>, h: T, disc: T, r: [T; 2], piece: &Piece<T>) -> T {
        let one = T::one();
        let [c0, c1] = piece.cell;
        let (c0t, c1t) = (T::from_i64(c0).unwrap(), T::from_i64(c1).unwrap());
        let [va, vb, vc] = piece.vals;
        // barycentric value and (s, t)-gradient of the linear piece
        let (gs, gt) = if piece.upper { (vc - vb, vb - va) } else { (vb - va, vc - vb) };
        let value = |v: &Vector<T>| {
            let mut s = clamp01(-v[0] * r[0] - c0t);
            let mut t = clamp01(-v[1] * r[1] - c1t);
            let interp = if piece.upper {
                s = s.min(t);
                (one - t) * va + (t - s) * vb + s * vc
            } else {
                t = t.min(s);
                (one - s) * va + (s - t) * vb + t * vc
            };
            h * sys.lagrangian(x, v) + disc * interp
        };
        // ∂I/∂v_k = −r_k·g_k, so the stationary point solves ∂L/∂v = disc·g/Δ
        let beta = [-r[0] * gs, -r[1] * gt];
        let p = [disc * gs * r[0] / h, disc * gt * r[1] / h];
        let v_star = sys.dh_dp(x, &p);
        let s_star = -v_star[0] * r[0] - c0t;
        let t_star = -v_star[1] * r[1] - c1t;
        let in_triangle = s_star >= T::zero()
            && t_star >= T::zero()
            && s_star <= one
            && t_star <= one
            && if piece.upper { t_star >= s_star } else { s_star >= t_star };
        let a_bound = self.bound;
        if in_triangle && v_star[0].abs() <= a_bound && v_star[1].abs() <= a_bound {
            return value(&v_star);
        }
        // triangle vertices in velocity coordinates, clipped to the box
        let to_v = |s: T, t: T| [-(c0t + s) / r[0], -(c1t + t) / r[1]];
        let tri = if piece.upper {
            [to_v(T::zero(), T::zero()), to_v(T::zero(), one), to_v(one, one)]
        } else {
            [to_v(T::zero(), T::zero()), to_v(one, T::zero()), to_v(one, one)]
        };
        let poly = clip_to_box(&tri, a_bound);
        if poly.is_empty() {
            return T::infinity();
        }
        let mut best = value(&poly[0]);
        let k = poly.len();
        for e in 0..k {
            let (a, b) = (poly[e], poly[(e + 1) % k]);
            let d = [b[0] - a[0], b[1] - a[1]];
            if d[0] == T::zero() && d[1] == T::zero() {
                continue;
            }
            let lin = disc * (beta[0] * d[0] + beta[1] * d[1]);
            let slope = |tau: T| {
                let v = [a[0] + tau * d[0], a[1] + tau * d[1]];
                let g = sys.dl_dv(x, &v);
                h * (g[0] * d[0] + g[1] * d[1]) + lin
            };
            let tau = if slope(T::zero()) >= T::zero() {
                T::zero()
            } else if slope(one) <= T::zero() {
                one
            } else {
                let (mut lo, mut hi) = (T::zero(), one);
                for _ in 0..64 {
                    let mid = T::lit(0.5) * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if slope(mid) > T::zero() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                T::lit(0.5) * (lo + hi)
            };
            let f = value(&[a[0] + tau * d[0], a[1] + tau * d[1]]);
            if f < best {
                best = f;
            }
        }
        best
    }
}

/// Sutherland–Hodgman clip of a convex polygon to `[−a, a]²`.
fn clip_to_box<T: Scalar>(poly: &[Vector<T>], a: T) -> Vec<Vector<T>> {
    let mut out: Vec<Vector<T>> = poly.to_vec();
    for (axis, sign) in [(0usize, T::one()), (0, -T::one()), (1, T::one()), (1, -T::one())] {
        if out.is_empty() {
            break;
        }
        // keep sign·v[axis] ≤ a
        let inside = |v: &Vector<T>| sign * v[axis] <= a;
        let input = std::mem::take(&mut out);
        let k = input.len();
        for idx in 0..k {
            let cur = input[idx];
            let prev = input[(idx + k - 1) % k];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (sign * a - prev[axis]) / (cur[axis] - prev[axis]);
                let mut q = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])];
                q[axis] = sign * a;
                out.push(q);
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

/// Golden-section search on `[a, b]`; returns the best abscissa and value seen.
pub(crate) fn golden_section<T: Scalar>(f: impl Fn(T) -> T, mut a: T, mut b: T) -> (T, T) {
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(16.0) * (a.abs() + b.abs() + T::one()));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..80 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// One application of the discounted Lax–Oleinik operator
/// `u ↦ min_v e^{−λh}·I[u](x − h v) + h L(x, v)`.
pub fn lax_oleinik_step<T: Scalar>(sys: &TonelliSystem<T>, u: &GridField<T>, h: T) -> Result<GridField<T>> {
    lax_oleinik_step_with(sys, u, h, &StepOptions::default())
}

pub fn lax_oleinik_step_with<T: Scalar>(
    sys: &TonelliSystem<T>,
    u: &GridField<T>,
    h: T,
    opts: &StepOptions,
) -> Result<GridField<T>> {
    check_step(sys, &u.grid, h)?;
    let searcher = Searcher::new(sys, *opts);
    Ok(apply(sys, u, h, &searcher))
}

fn apply<T: Scalar>(sys: &TonelliSystem<T>, u: &GridField<T>, h: T, searcher: &Searcher<T>) -> GridField<T> {
    let disc = (-sys.lambda * h).exp();
    let grid = u.grid;
    let values =
        (0..grid.len()).into_par_iter().map(|i| searcher.minimize(sys, u, i, &grid.node(i), h, disc)).collect();
    GridField { grid, values, kink_mask: None }
}

/// Solver configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions<T> {
    pub h: T,
    pub tol: T,
    pub max_iter: usize,
    pub step: StepOptions,
}

impl<T: Scalar> SolveOptions<T> {
    pub fn new(h: T, tol: T, max_iter: usize) -> Self {
        Self { h, tol, max_iter, step: StepOptions::default() }
    }
}

/// Fixed-point iteration from `u₀ ≡ 0` until the successive difference drops
/// below `tol·(1 − e^{−λh})`.
pub fn solve_value<T: Scalar>(
    sys: &TonelliSystem<T>,
    grid: &TorusGrid<T>,
    h: T,
    tol: T,
    max_iter: usize,
) -> Result<(GridField<T>, SolveReport)> {
    solve_value_with(sys, grid, &SolveOptions::new(h, tol, max_iter))
}

pub fn solve_value_with<T: Scalar>(
    sys: &TonelliSystem<T>,
    grid: &TorusGrid<T>,
    opts: &SolveOptions<T>,
) -> Result<(GridField<T>, SolveReport)> {
    solve_value_from(sys, GridField::constant(*grid, T::zero()), opts)
}

/// As [`solve_value_with`] but starting from a given field.
pub fn solve_value_from<T: Scalar>(
    sys: &TonelliSystem<T>,
    start: GridField<T>,
    opts: &SolveOptions<T>,
) -> Result<(GridField<T>, SolveReport)> {
    check_step(sys, &start.grid, opts.h)?;
    precondition(opts.tol > T::zero(), || format!("tolerance must be positive, got {}", opts.tol))?;
    precondition(opts.max_iter > 0, || "max_iter must be positive".into())?;
    let clock = Instant::now();
    let searcher = Searcher::new(sys, opts.step);
    let gap = T::one() - (-sys.lambda * opts.h).exp();
    let threshold = opts.tol * gap;
    let mut u = start;
    let mut report = SolveReport::default();
    for k in 1..=opts.max_iter {
        let next = apply(sys, &u, opts.h, &searcher);
        let residual = next.distance(&u);
        u = next;
        report.iterations = k;
        report.final_residual = residual.as_f64();
        report.guaranteed_error = (residual / gap).as_f64();
        if !residual.is_finite() {
            break;
        }
        if residual <= threshold {
            report.wall_time = clock.elapsed().as_secs_f64();
            return Ok((u, report));
        }
    }
    report.wall_time = clock.elapsed().as_secs_f64();
    Err(Error::NonConvergence(report))
}

/// Kink detection knobs: a node is a kink when a one-sided difference
/// discrepancy exceeds `max(factor × median, floor)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinkOptions<T> {
    pub factor: T,
    pub floor: T,
}

impl<T: Scalar> Default for KinkOptions<T> {
    fn default() -> Self {
        Self { factor: T::lit(10.0), floor: T::lit(1e-6) }
    }
}

pub fn gradient_field<T: Scalar>(u: &GridField<T>) -> VectorField<T> {
    gradient_field_with(u, &KinkOptions::default())
}

/// Central differences per axis plus the kink mask. At kinks the gradient
/// takes, per axis, the one-sided difference of smaller magnitude.
pub fn gradient_field_with<T: Scalar>(u: &GridField<T>, opts: &KinkOptions<T>) -> VectorField<T> {
    let grid = u.grid;
    let n = grid.len();
    let mut fwd = vec![zero_vec::<T>(); n];
    let mut bwd = vec![zero_vec::<T>(); n];
    let mut gap = vec![T::zero(); n];
    for i in 0..n {
        for axis in 0..grid.dim {
            let h = grid.spacing[axis];
            let up = u.values[grid.neighbour(i, axis, 1)];
            let down = u.values[grid.neighbour(i, axis, -1)];
            fwd[i][axis] = (up - u.values[i]) / h;
            bwd[i][axis] = (u.values[i] - down) / h;
            gap[i] = gap[i].max((fwd[i][axis] - bwd[i][axis]).abs());
        }
    }
    let mut sorted = gap.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) * T::lit(0.5) };
    let threshold = (opts.factor * median).max(opts.floor);
    let mut mask = vec![false; n];
    let mut values = vec![zero_vec::<T>(); n];
    let half = T::lit(0.5);
    for i in 0..n {
        mask[i] = gap[i] > threshold;
        for axis in 0..grid.dim {
            values[i][axis] = if mask[i] {
                if fwd[i][axis].abs() <= bwd[i][axis].abs() {
                    fwd[i][axis]
                } else {
                    bwd[i][axis]
                }
            } else {
                (fwd[i][axis] + bwd[i][axis]) * half
            };
        }
    }
    GridField { grid, values, kink_mask: Some(mask) }
}

/// Node-wise `λu + H(x, du)`, carrying the kink mask of `du`.
pub fn subsolution_residual<T: Scalar>(sys: &TonelliSystem<T>, u: &GridField<T>) -> GridField<T> {
    let du = gradient_field(u);
    residual_with_gradient(sys, u, &du)
}

pub fn residual_with_gradient<T: Scalar>(
    sys: &TonelliSystem<T>,
    u: &GridField<T>,
    du: &VectorField<T>,
) -> GridField<T> {
    let grid = u.grid;
    let values =
        (0..grid.len()).map(|i| sys.lambda * u.values[i] + sys.hamiltonian(&grid.node(i), &du.values[i])).collect();
    GridField { grid, values, kink_mask: du.kink_mask.clone() }
}

/// `max |residual|` over nodes outside the kink mask.
pub fn max_residual_off_kinks<T: Scalar>(res: &GridField<T>) -> T {
    res.values
        .iter()
        .enumerate()
        .filter(|(i, _)| !res.kink_mask.as_ref().is_some_and(|m| m[*i]))
        .fold(T::zero(), |a, (_, r)| a.max(r.abs()))
}

/// `sup ‖∂H/∂p(x, du(x))‖` over non-kink nodes; should not exceed the
/// system's velocity bound.
pub fn calibrated_speed<T: Scalar>(sys: &TonelliSystem<T>, du: &VectorField<T>) -> T {
    (0..du.grid.len())
        .filter(|i| !du.is_kink(*i))
        .map(|i| norm(sys.dim(), &sys.dh_dp(&du.grid.node(i), &du.values[i])))
        .fold(T::zero(), T::max)
}

/// `max over curves of e^{λb}u(γ(b)) − e^{λa}u(γ(a)) − ∫ₐᵇ e^{λt}L dt`.
pub fn domination_check<T: Scalar>(sys: &TonelliSystem<T>, u: &GridField<T>, curves: &[Trajectory<T>]) -> Result<T> {
    let mut worst = T::neg_infinity();
    for c in curves {
        worst = worst.max(domination_defect(sys, u, c)?);
    }
    Ok(worst)
}

/// Signed domination defect of `u` along one Lagrangian curve.
pub fn domination_defect<T: Scalar>(sys: &TonelliSystem<T>, u: &GridField<T>, curve: &Trajectory<T>) -> Result<T> {
    precondition(curve.kind == FlowKind::Lagrangian, || "domination needs lagrangian curves".into())?;
    precondition(curve.len() >= 2, || "curve needs at least two samples".into())?;
    let (a, b) = (curve.first_time(), curve.last_time());
    let action = {
        let f: Vec<T> = (0..curve.len())
            .map(|i| (sys.lambda * curve.times[i]).exp() * sys.lagrangian(&curve.x[i], &curve.y[i]))
            .collect();
        integrate_samples(&curve.times, &f, curve.dt, a, b)?
    };
    let last = curve.len() - 1;
    let lhs =
        (sys.lambda * b).exp() * u.interpolate(&curve.x[last]) - (sys.lambda * a).exp() * u.interpolate(&curve.x[0]);
    Ok(lhs - action)
}

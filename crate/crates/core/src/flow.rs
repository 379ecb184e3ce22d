//! Fixed-step RK4 integration of the conformally symplectic flow, discounted
//! actions and the dissipation identities.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::model::{legendre_to_cotangent, PhasePoint, TangentPoint, TonelliSystem};
use crate::scalar::{dot, norm, wrap_angle_counting, zero_vec, Scalar, Vector, MAX_DIM};

/// Default momentum norm above which an orbit is declared divergent.
pub const DEFAULT_BLOWUP: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Hamiltonian,
    Lagrangian,
}

/// Time-stamped orbit. `y` holds momenta or velocities depending on `kind`;
/// `x` is reduced to `[0, 2π)` and `winding` counts the turns removed.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub kind: FlowKind,
    pub dim: usize,
    pub dt: T,
    pub times: Vec<T>,
    pub x: Vec<Vector<T>>,
    pub y: Vec<Vector<T>>,
    pub winding: Vec<[i64; MAX_DIM]>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Unwrapped position at sample `i`.
    pub fn lift(&self, i: usize) -> Vector<T> {
        let mut out = self.x[i];
        for d in 0..self.dim {
            out[d] = out[d] + T::from_i64(self.winding[i][d]).unwrap_or_else(T::zero) * T::two_pi();
        }
        out
    }

    pub fn phase_point(&self, i: usize) -> PhasePoint<T> {
        PhasePoint { x: self.x[i], p: self.y[i] }
    }

    pub fn tangent_point(&self, i: usize) -> TangentPoint<T> {
        TangentPoint { x: self.x[i], v: self.y[i] }
    }

    pub fn first_time(&self) -> T {
        self.times[0]
    }

    pub fn last_time(&self) -> T {
        self.times[self.times.len() - 1]
    }

    fn reverse(&mut self) {
        self.times.reverse();
        self.x.reverse();
        self.y.reverse();
        self.winding.reverse();
    }
}

/// Knobs shared by every integration routine.
#[derive(Clone, Copy, Debug)]
pub struct IntegratorOptions<T> {
    pub blowup: T,
}

impl<T: Scalar> Default for IntegratorOptions<T> {
    fn default() -> Self {
        Self { blowup: T::lit(DEFAULT_BLOWUP) }
    }
}

/// `(ẋ, ṗ) = (∂H/∂p, −∂H/∂x − λp − η_c)`.
#[inline]
pub fn hamiltonian_rhs<T: Scalar>(sys: &TonelliSystem<T>, x: &Vector<T>, p: &Vector<T>) -> (Vector<T>, Vector<T>) {
    let dx = sys.dh_dp(x, p);
    let hx = sys.dh_dx(x, p);
    let drift = sys.drift.unwrap_or_else(zero_vec);
    let mut dp = zero_vec();
    for i in 0..sys.dim() {
        dp[i] = -hx[i] - sys.lambda * p[i] - drift[i];
    }
    (dx, dp)
}

#[inline]
fn axpy<T: Scalar>(dim: usize, a: &Vector<T>, s: T, b: &Vector<T>) -> Vector<T> {
    let mut out = *a;
    for i in 0..dim {
        out[i] = a[i] + s * b[i];
    }
    out
}

/// One classical RK4 step of size `h` (negative for backward time). The
/// returned position is not reduced.
#[inline]
pub fn rk4_step<T: Scalar>(sys: &TonelliSystem<T>, x: &Vector<T>, p: &Vector<T>, h: T) -> (Vector<T>, Vector<T>) {
    let n = sys.dim();
    let half = h * T::lit(0.5);
    let (k1x, k1p) = hamiltonian_rhs(sys, x, p);
    let (k2x, k2p) = hamiltonian_rhs(sys, &axpy(n, x, half, &k1x), &axpy(n, p, half, &k1p));
    let (k3x, k3p) = hamiltonian_rhs(sys, &axpy(n, x, half, &k2x), &axpy(n, p, half, &k2p));
    let (k4x, k4p) = hamiltonian_rhs(sys, &axpy(n, x, h, &k3x), &axpy(n, p, h, &k3p));
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let mut xo = *x;
    let mut po = *p;
    for i in 0..n {
        xo[i] = x[i] + sixth * (k1x[i] + two * k2x[i] + two * k3x[i] + k4x[i]);
        po[i] = p[i] + sixth * (k1p[i] + two * k2p[i] + two * k3p[i] + k4p[i]);
    }
    (xo, po)
}

/// Splits `[t0, t1]` into equal steps no longer than `dt`.
pub(crate) fn step_count<T: Scalar>(span: T, dt: T) -> usize {
    let ratio = (span.abs() / dt).as_f64();
    let n = (ratio - 1e-9).ceil().max(1.0);
    n as usize
}

/// Low-level driver: integrates from a (reduced) state for `steps` steps of
/// size `h`, calling `visit(step_index, x, p, winding)` after every step.
pub(crate) fn drive<T: Scalar>(
    sys: &TonelliSystem<T>,
    start: &PhasePoint<T>,
    t0: T,
    h: T,
    steps: usize,
    opts: &IntegratorOptions<T>,
    mut visit: impl FnMut(usize, &Vector<T>, &Vector<T>, &[i64; MAX_DIM]),
) -> Result<PhasePoint<T>> {
    let n = sys.dim();
    let mut x = start.x;
    let mut p = start.p;
    let mut winding = [0i64; MAX_DIM];
    for s in 1..=steps {
        let (mut xn, pn) = rk4_step(sys, &x, &p, h);
        for i in 0..n {
            let (r, k) = wrap_angle_counting(xn[i]);
            xn[i] = r;
            winding[i] += k;
        }
        let pnorm = norm(n, &pn);
        if !(pnorm <= opts.blowup) || xn[..n].iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: (t0 + h * T::from_usize_lossy(s)).as_f64(), norm: pnorm.as_f64() });
        }
        x = xn;
        p = pn;
        visit(s, &x, &p, &winding);
    }
    Ok(PhasePoint { x, p })
}

fn check_span<T: Scalar>(sys: &TonelliSystem<T>, t0: T, t1: T, dt: T) -> Result<()> {
    precondition(dt > T::zero() && dt.is_finite(), || format!("dt must be positive, got {dt}"))?;
    precondition(dt <= (t1 - t0).abs() * T::lit(1.0 + 1e-12), || format!("dt = {dt} exceeds the span |{t1} - {t0}|"))?;
    precondition(dt <= T::lit(0.1) / sys.lambda, || {
        format!("dt = {dt} exceeds 0.1/lambda = {}", T::lit(0.1) / sys.lambda)
    })
}

pub fn integrate_hamiltonian<T: Scalar>(
    sys: &TonelliSystem<T>,
    start: &PhasePoint<T>,
    t0: T,
    t1: T,
    dt: T,
) -> Result<Trajectory<T>> {
    integrate_hamiltonian_with(sys, start, t0, t1, dt, &IntegratorOptions::default())
}

/// Integrates `Φ_H` from `t0` to `t1` (either direction). The returned
/// samples are ordered by increasing time.
pub fn integrate_hamiltonian_with<T: Scalar>(
    sys: &TonelliSystem<T>,
    start: &PhasePoint<T>,
    t0: T,
    t1: T,
    dt: T,
    opts: &IntegratorOptions<T>,
) -> Result<Trajectory<T>> {
    check_span(sys, t0, t1, dt)?;
    precondition(start.is_finite(), || "start state is not finite".into())?;
    let steps = step_count(t1 - t0, dt);
    let h = (t1 - t0) / T::from_usize_lossy(steps);
    let mut traj = Trajectory {
        kind: FlowKind::Hamiltonian,
        dim: sys.dim(),
        dt: h.abs(),
        times: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        winding: Vec::with_capacity(steps + 1),
    };
    let start = PhasePoint::new(sys.dim(), &start.x, &start.p);
    traj.times.push(t0);
    traj.x.push(start.x);
    traj.y.push(start.p);
    traj.winding.push([0; MAX_DIM]);
    drive(sys, &start, t0, h, steps, opts, |s, x, p, w| {
        traj.times.push(t0 + h * T::from_usize_lossy(s));
        traj.x.push(*x);
        traj.y.push(*p);
        traj.winding.push(*w);
    })?;
    if h < T::zero() {
        traj.reverse();
    }
    Ok(traj)
}

/// Discounted Euler–Lagrange flow, realised by conjugating `Φ_H` with the
/// Legendre transform.
pub fn integrate_lagrangian<T: Scalar>(
    sys: &TonelliSystem<T>,
    start: &TangentPoint<T>,
    t0: T,
    t1: T,
    dt: T,
) -> Result<Trajectory<T>> {
    let pp = legendre_to_cotangent(sys, start);
    let mut traj = integrate_hamiltonian(sys, &pp, t0, t1, dt)?;
    to_tangent(sys, &mut traj);
    Ok(traj)
}

/// Rewrites a Hamiltonian trajectory on the tangent side in place.
pub fn to_tangent<T: Scalar>(sys: &TonelliSystem<T>, traj: &mut Trajectory<T>) {
    if traj.kind == FlowKind::Lagrangian {
        return;
    }
    for (x, y) in traj.x.iter().zip(traj.y.iter_mut()) {
        *y = sys.dh_dp(x, y);
    }
    traj.kind = FlowKind::Lagrangian;
}

/// Endpoint of `Φ^t_H` without storing intermediate states.
pub fn flow_map<T: Scalar>(sys: &TonelliSystem<T>, start: &PhasePoint<T>, t: T, dt: T) -> Result<PhasePoint<T>> {
    if t == T::zero() {
        return Ok(*start);
    }
    let steps = step_count(t, dt);
    let h = t / T::from_usize_lossy(steps);
    drive(sys, start, T::zero(), h, steps, &IntegratorOptions::default(), |_, _, _, _| {})
}

/// Composite Simpson rule on equally spaced samples, with a 3/8 panel when the
/// interval count is odd.
pub fn simpson<T: Scalar>(f: &[T], h: T) -> T {
    let n = f.len().saturating_sub(1);
    match n {
        0 => T::zero(),
        1 => h * (f[0] + f[1]) * T::lit(0.5),
        2 => h / T::lit(3.0) * (f[0] + T::lit(4.0) * f[1] + f[2]),
        _ => {
            let even = if n.is_multiple_of(2) { n } else { n - 3 };
            let mut s = T::zero();
            let four = T::lit(4.0);
            for i in (0..even).step_by(2) {
                s = s + f[i] + four * f[i + 1] + f[i + 2];
            }
            let mut total = s * h / T::lit(3.0);
            if even < n {
                let e = even;
                total = total
                    + T::lit(3.0) * h / T::lit(8.0)
                        * (f[e] + T::lit(3.0) * f[e + 1] + T::lit(3.0) * f[e + 2] + f[e + 3]);
            }
            total
        }
    }
}

/// Running integral `∫_{t_0}^{t_i} f` for every sample, fourth order.
pub fn cumulative_simpson<T: Scalar>(f: &[T], h: T) -> Vec<T> {
    let n = f.len();
    let mut out = vec![T::zero(); n];
    if n < 2 {
        return out;
    }
    let third = h / T::lit(3.0);
    // even prefixes by Simpson
    for i in (2..n).step_by(2) {
        out[i] = out[i - 2] + third * (f[i - 2] + T::lit(4.0) * f[i - 1] + f[i]);
    }
    if n < 4 {
        out[1] = h * (f[0] + f[1]) * T::lit(0.5);
        return out;
    }
    out[1] = h / T::lit(24.0) * (T::lit(9.0) * f[0] + T::lit(19.0) * f[1] - T::lit(5.0) * f[2] + f[3]);
    let eighth = T::lit(3.0) * h / T::lit(8.0);
    for i in (3..n).step_by(2) {
        out[i] = out[i - 3] + eighth * (f[i - 3] + T::lit(3.0) * f[i - 2] + T::lit(3.0) * f[i - 1] + f[i]);
    }
    out
}

/// `∫ₐᵇ w(t) f(t) dt` of per-sample integrand values over a uniform time grid,
/// with linear end pieces when `a`, `b` fall between samples.
pub(crate) fn integrate_samples<T: Scalar>(times: &[T], f: &[T], dt: T, a: T, b: T) -> Result<T> {
    let t0 = times[0];
    let tn = times[times.len() - 1];
    let slack = dt * T::lit(1e-9);
    precondition(a <= b, || format!("interval [{a}, {b}] is reversed"))?;
    precondition(a >= t0 - slack && b <= tn + slack, || {
        format!("interval [{a}, {b}] lies outside the trajectory span [{t0}, {tn}]")
    })?;
    let last = times.len() - 1;
    let index = |t: T| ((t - t0) / dt).as_f64();
    let snap = |r: f64| -> Option<usize> {
        let k = r.round();
        ((r - k).abs() < 1e-7).then_some(k.clamp(0.0, last as f64) as usize)
    };
    let ra = index(a);
    let rb = index(b);
    let ia = snap(ra).unwrap_or_else(|| (ra.ceil() as usize).min(last));
    let ib = snap(rb).unwrap_or_else(|| (rb.floor() as usize).min(last));
    if ia > ib {
        // a and b in the same cell
        let k = ib;
        let lerp = |t: T| {
            let s = (t - times[k]) / dt;
            f[k] + (f[(k + 1).min(last)] - f[k]) * s
        };
        return Ok((lerp(a) + lerp(b)) * T::lit(0.5) * (b - a));
    }
    let mut total = simpson(&f[ia..=ib], dt);
    if times[ia] - a > slack && ia > 0 {
        let s = (a - times[ia - 1]) / dt;
        let fa = f[ia - 1] + (f[ia] - f[ia - 1]) * s;
        total = total + (fa + f[ia]) * T::lit(0.5) * (times[ia] - a);
    }
    if b - times[ib] > slack && ib < last {
        let s = (b - times[ib]) / dt;
        let fb = f[ib] + (f[ib + 1] - f[ib]) * s;
        total = total + (fb + f[ib]) * T::lit(0.5) * (b - times[ib]);
    }
    Ok(total)
}

/// `∫ₐᵇ e^{λt} L(γ, γ̇) dt` along a Lagrangian trajectory.
pub fn discounted_action<T: Scalar>(sys: &TonelliSystem<T>, traj: &Trajectory<T>, a: T, b: T) -> Result<T> {
    precondition(traj.kind == FlowKind::Lagrangian, || "discounted action needs a lagrangian trajectory".into())?;
    precondition(!traj.is_empty(), || "empty trajectory".into())?;
    let f: Vec<T> =
        (0..traj.len()).map(|i| (sys.lambda * traj.times[i]).exp() * sys.lagrangian(&traj.x[i], &traj.y[i])).collect();
    if traj.len() == 1 {
        precondition(a == b && a == traj.times[0], || "interval outside a single-sample trajectory".into())?;
        return Ok(T::zero());
    }
    integrate_samples(&traj.times, &f, traj.dt, a, b)
}

/// `max_t |H(t) − H(0) + ∫₀ᵗ ⟨λp + η_c, ∂H/∂p⟩ ds|`; with no drift this is the
/// classical `dH/dt = −λ⟨p, ∂H/∂p⟩` balance.
pub fn energy_dissipation_residual<T: Scalar>(sys: &TonelliSystem<T>, traj: &Trajectory<T>) -> Result<T> {
    precondition(traj.kind == FlowKind::Hamiltonian, || "energy balance needs a hamiltonian trajectory".into())?;
    precondition(!traj.is_empty(), || "empty trajectory".into())?;
    let n = sys.dim();
    let drift = sys.drift.unwrap_or_else(zero_vec);
    let rate: Vec<T> = (0..traj.len())
        .map(|i| {
            let (x, p) = (&traj.x[i], &traj.y[i]);
            let mut force = zero_vec();
            for d in 0..n {
                force[d] = sys.lambda * p[d] + drift[d];
            }
            dot(n, &force, &sys.dh_dp(x, p))
        })
        .collect();
    let dissipated = cumulative_simpson(&rate, traj.dt);
    let h0 = sys.hamiltonian(&traj.x[0], &traj.y[0]);
    Ok((0..traj.len())
        .map(|i| (sys.hamiltonian(&traj.x[i], &traj.y[i]) - h0 + dissipated[i]).abs())
        .fold(T::zero(), T::max))
}

/// Jacobian of the Hamiltonian vector field in `(x, p)` ordering.
pub(crate) fn vector_field_jacobian<T: Scalar>(
    sys: &TonelliSystem<T>,
    x: &Vector<T>,
    p: &Vector<T>,
) -> [[T; 2 * MAX_DIM]; 2 * MAX_DIM] {
    let n = sys.dim();
    let hs = sys.hessian(x, p);
    let mut j = [[T::zero(); 2 * MAX_DIM]; 2 * MAX_DIM];
    for r in 0..n {
        for c in 0..n {
            j[r][c] = hs.xp[c][r];
            j[r][n + c] = hs.pp[r][c];
            j[n + r][c] = -hs.xx[r][c];
            j[n + r][n + c] = -hs.xp[r][c];
        }
        j[n + r][n + r] = j[n + r][n + r] - sys.lambda;
    }
    j
}

/// Determinant of a small square matrix by Gaussian elimination with
/// partial pivoting.
pub fn determinant<T: Scalar, const N: usize>(m: &[[T; N]; N], size: usize) -> T {
    let mut a = *m;
    let mut det = T::one();
    for col in 0..size {
        let pivot = (col..size)
            .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(col);
        if a[pivot][col] == T::zero() {
            return T::zero();
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det = det * a[col][col];
        for r in col + 1..size {
            let f = a[r][col] / a[col][col];
            for c in col..size {
                a[r][c] = a[r][c] - f * a[col][c];
            }
        }
    }
    det
}

/// `det DΦ^t` at `pp`, from RK4 on the orbit coupled with its variational
/// equation.
pub fn volume_contraction_factor<T: Scalar>(sys: &TonelliSystem<T>, pp: &PhasePoint<T>, t: T, dt: T) -> Result<T> {
    precondition(t >= T::zero(), || format!("horizon must be non-negative, got {t}"))?;
    precondition(dt > T::zero(), || format!("dt must be positive, got {dt}"))?;
    if t == T::zero() {
        return Ok(T::one());
    }
    const M: usize = 2 * MAX_DIM;
    type Mat<T> = [[T; M]; M];
    let n = sys.dim();
    let size = 2 * n;
    let steps = step_count(t, dt);
    let h = t / T::from_usize_lossy(steps);
    let blowup = T::lit(DEFAULT_BLOWUP);

    let deriv = |x: &Vector<T>, p: &Vector<T>, m: &Mat<T>| -> (Vector<T>, Vector<T>, Mat<T>) {
        let (dx, dp) = hamiltonian_rhs(sys, x, p);
        let j = vector_field_jacobian(sys, x, p);
        let mut dm = [[T::zero(); M]; M];
        for r in 0..size {
            for c in 0..size {
                let mut s = T::zero();
                for k in 0..size {
                    s = s + j[r][k] * m[k][c];
                }
                dm[r][c] = s;
            }
        }
        (dx, dp, dm)
    };
    let shift = |x: &Vector<T>, p: &Vector<T>, m: &Mat<T>, s: T, k: &(Vector<T>, Vector<T>, Mat<T>)| {
        let xs = axpy(n, x, s, &k.0);
        let ps = axpy(n, p, s, &k.1);
        let mut ms = *m;
        for r in 0..size {
            for c in 0..size {
                ms[r][c] = m[r][c] + s * k.2[r][c];
            }
        }
        (xs, ps, ms)
    };

    let mut x = pp.x;
    let mut p = pp.p;
    let mut m: Mat<T> = [[T::zero(); M]; M];
    for (i, row) in m.iter_mut().enumerate().take(size) {
        row[i] = T::one();
    }
    let half = h * T::lit(0.5);
    let two = T::lit(2.0);
    let sixth = h / T::lit(6.0);
    for s in 1..=steps {
        let k1 = deriv(&x, &p, &m);
        let (a, b, c) = shift(&x, &p, &m, half, &k1);
        let k2 = deriv(&a, &b, &c);
        let (a, b, c) = shift(&x, &p, &m, half, &k2);
        let k3 = deriv(&a, &b, &c);
        let (a, b, c) = shift(&x, &p, &m, h, &k3);
        let k4 = deriv(&a, &b, &c);
        for i in 0..n {
            x[i] = x[i] + sixth * (k1.0[i] + two * k2.0[i] + two * k3.0[i] + k4.0[i]);
            p[i] = p[i] + sixth * (k1.1[i] + two * k2.1[i] + two * k3.1[i] + k4.1[i]);
        }
        for r in 0..size {
            for c in 0..size {
                m[r][c] = m[r][c] + sixth * (k1.2[r][c] + two * k2.2[r][c] + two * k3.2[r][c] + k4.2[r][c]);
            }
        }
        let pn = norm(n, &p);
        if !(pn <= blowup) {
            return Err(Error::Divergence { time: (h * T::from_usize_lossy(s)).as_f64(), norm: pn.as_f64() });
        }
    }
    Ok(determinant(&m, size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, SystemParams};
    use std::f64::consts::PI;

    fn pendulum(lambda: f64) -> TonelliSystem<f64> {
        builtin("pendulum", &SystemParams { lambda, ..Default::default() }).unwrap()
    }

    fn integrable() -> TonelliSystem<f64> {
        builtin("integrable", &SystemParams { lambda: 0.2, eta: Some(vec![0.1]), ..Default::default() }).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let sys = pendulum(0.2);
        let (dx, dp) = hamiltonian_rhs(&sys, &[PI, 0.0], &[0.0, 0.0]);
        assert!(dx[0].abs() < 1e-15 && dp[0].abs() < 1e-15);
        let (dx, dp) = hamiltonian_rhs(&sys, &[0.0, 0.0], &[1.0, 0.0]);
        assert_eq!((dx[0], dp[0]), (1.0, -0.2));
        let (dx, dp) = hamiltonian_rhs(&integrable(), &[1.0, 0.0], &[0.5, 0.0]);
        assert_eq!(dx[0], 0.5);
        assert!(dp[0].abs() < 1e-16);
    }

    #[test]
    fn integrable_closed_form_at_one() {
        let sys = integrable();
        let traj = integrate_hamiltonian(&sys, &PhasePoint::new(1, &[0.0], &[1.0]), 0.0, 1.0, 1e-3).unwrap();
        assert_eq!(traj.len(), 1001);
        let p1 = traj.y.last().unwrap()[0];
        assert!((p1 - 0.909365).abs() < 1e-6, "{p1}");
    }

    #[test]
    fn backward_trajectories_are_time_ordered() {
        let sys = pendulum(0.2);
        let traj = integrate_hamiltonian(&sys, &PhasePoint::new(1, &[2.0], &[1.0]), 0.0, -3.0, 0.01).unwrap();
        assert!((traj.first_time() + 3.0).abs() < 1e-12);
        assert_eq!(traj.last_time(), 0.0);
        assert!(traj.times.windows(2).all(|w| (w[1] - w[0] - 0.01).abs() < 1e-12));
        assert_eq!(traj.x.last().unwrap()[0], 2.0);
    }

    #[test]
    fn equilibrium_is_constant() {
        let sys = pendulum(0.2);
        let traj = integrate_hamiltonian(&sys, &PhasePoint::new(1, &[PI], &[0.0]), 0.0, 5.0, 0.01).unwrap();
        assert!(traj.x.iter().all(|x| (x[0] - PI).abs() < 1e-14));
        assert!(energy_dissipation_residual(&sys, &traj).unwrap() < 1e-20);
    }

    #[test]
    fn winding_is_tracked() {
        let sys = integrable();
        // rotor at p = 0.5 advances 0.5 rad per unit time
        let traj = integrate_hamiltonian(&sys, &PhasePoint::new(1, &[0.0], &[0.5]), 0.0, 30.0, 0.01).unwrap();
        let lift = traj.lift(traj.len() - 1);
        assert!((lift[0] - 15.0).abs() < 1e-9, "{lift:?}");
        assert_eq!(traj.winding.last().unwrap()[0], 2);
    }

    #[test]
    fn action_of_saddle_rest() {
        let sys = pendulum(0.2);
        let rest = integrate_lagrangian(&sys, &TangentPoint::new(1, &[PI], &[0.0]), 0.0, -60.0, 0.01).unwrap();
        let a = discounted_action(&sys, &rest, -60.0, 0.0).unwrap();
        assert!((a - 10.0).abs() < 1e-4, "{a}");
        let zero = integrate_lagrangian(&sys, &TangentPoint::new(1, &[0.0], &[0.0]), 0.0, -10.0, 0.01).unwrap();
        assert_eq!(discounted_action(&sys, &zero, -10.0, 0.0).unwrap(), 0.0);
        assert!(matches!(discounted_action(&sys, &zero, -11.0, 0.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn action_between_samples() {
        let sys = pendulum(0.2);
        let rest = integrate_lagrangian(&sys, &TangentPoint::new(1, &[PI], &[0.0]), 0.0, 1.0, 0.01).unwrap();
        let a = discounted_action(&sys, &rest, 0.123, 0.877).unwrap();
        let exact = 2.0 * ((0.2f64 * 0.877).exp() - (0.2f64 * 0.123).exp()) / 0.2;
        assert!((a - exact).abs() < 1e-6, "{a} vs {exact}");
    }

    #[test]
    fn quadrature_rules() {
        let h = 0.1;
        for n in 1..12 {
            let f: Vec<f64> = (0..=n).map(|i| (i as f64 * h).powi(3)).collect();
            let exact = (n as f64 * h).powi(4) / 4.0;
            if n >= 2 {
                assert!((simpson(&f, h) - exact).abs() < 1e-13, "n = {n}");
            }
            let cum = cumulative_simpson(&f, h);
            if n >= 3 {
                for (i, c) in cum.iter().enumerate() {
                    assert!((c - (i as f64 * h).powi(4) / 4.0).abs() < 1e-13, "n = {n}, i = {i}");
                }
            }
        }
    }

    #[test]
    fn determinant_small() {
        let m: [[f64; 3]; 3] = [[2.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 4.0]];
        assert!((determinant(&m, 3) - 20.0).abs() < 1e-12);
        let s: [[f64; 2]; 2] = [[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(determinant(&s, 2), -1.0);
    }

    #[test]
    fn volume_identity_and_trivial_horizon() {
        let sys = pendulum(0.2);
        let pp = PhasePoint::new(1, &[1.0], &[0.7]);
        assert_eq!(volume_contraction_factor(&sys, &pp, 0.0, 1e-3).unwrap(), 1.0);
        let d = volume_contraction_factor(&sys, &pp, 1.0, 1e-3).unwrap();
        assert!((d - (-0.2f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn divergence_reports_time() {
        let sys = pendulum(0.2);
        let opts = IntegratorOptions { blowup: 1.5 };
        let err =
            integrate_hamiltonian_with(&sys, &PhasePoint::new(1, &[0.0], &[2.0]), 0.0, -10.0, 0.01, &opts).unwrap_err();
        assert!(matches!(err, Error::Divergence { time, .. } if time < 0.0));
    }

    #[test]
    fn span_preconditions() {
        let sys = pendulum(0.2);
        let pp = PhasePoint::new(1, &[0.0], &[0.0]);
        assert!(integrate_hamiltonian(&sys, &pp, 0.0, 0.001, 0.01).is_err());
        assert!(integrate_hamiltonian(&sys, &pp, 0.0, 10.0, 0.6).is_err());
    }
}

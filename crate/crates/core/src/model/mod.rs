//! Tonelli systems on flat tori, the Legendre correspondence and the
//! cohomology shift that turns a drifted system into an exact one.

mod builtin;

use std::fmt;
use std::sync::Arc;

pub use builtin::{builtin, FourierTerm, Integrable, Mane2d, Mechanical, Pendulum, SystemParams};

use crate::error::{Error, Result};
use crate::scalar::{dot, wrap_angle, zero_vec, Scalar, Vector, MAX_DIM};

/// Second derivatives of a Hamiltonian, each block row-major `dim × dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hessian<T> {
    pub xx: [[T; MAX_DIM]; MAX_DIM],
    /// `xp[i][j] = ∂²H / ∂x_i ∂p_j`
    pub xp: [[T; MAX_DIM]; MAX_DIM],
    pub pp: [[T; MAX_DIM]; MAX_DIM],
}

/// Closed-form evaluators of a Tonelli Hamiltonian and its Lagrangian.
///
/// Implementations must be pure: every method depends only on its arguments.
pub trait TonelliModel<T: Scalar>: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn hamiltonian(&self, x: &Vector<T>, p: &Vector<T>) -> T;
    fn lagrangian(&self, x: &Vector<T>, v: &Vector<T>) -> T;
    fn dh_dx(&self, x: &Vector<T>, p: &Vector<T>) -> Vector<T>;
    fn dh_dp(&self, x: &Vector<T>, p: &Vector<T>) -> Vector<T>;
    fn dl_dx(&self, x: &Vector<T>, v: &Vector<T>) -> Vector<T>;
    fn dl_dv(&self, x: &Vector<T>, v: &Vector<T>) -> Vector<T>;

    /// A lower bound `c ≥ 0` on the eigenvalues of `∂²L/∂v²`, uniform in
    /// `(x, v)`. Zero is always valid; a positive value lets the value
    /// solver discard velocity regions early.
    fn convexity_modulus(&self) -> T {
        T::zero()
    }

    /// Hessian blocks of `H`. The default uses central differences of the
    /// first derivatives; built-in models override it with closed forms.
    fn hessian(&self, x: &Vector<T>, p: &Vector<T>) -> Hessian<T> {
        let n = self.dim();
        let step = T::lit(1e-5);
        let two = T::lit(2.0);
        let mut out = Hessian {
            xx: [[T::zero(); MAX_DIM]; MAX_DIM],
            xp: [[T::zero(); MAX_DIM]; MAX_DIM],
            pp: [[T::zero(); MAX_DIM]; MAX_DIM],
        };
        for i in 0..n {
            let (mut xa, mut xb) = (*x, *x);
            xa[i] = xa[i] + step;
            xb[i] = xb[i] - step;
            let ga = self.dh_dx(&xa, p);
            let gb = self.dh_dx(&xb, p);
            let pa = self.dh_dp(&xa, p);
            let pb = self.dh_dp(&xb, p);
            for j in 0..n {
                out.xx[i][j] = (ga[j] - gb[j]) / (two * step);
                out.xp[i][j] = (pa[j] - pb[j]) / (two * step);
            }
            let (mut qa, mut qb) = (*p, *p);
            qa[i] = qa[i] + step;
            qb[i] = qb[i] - step;
            let ha = self.dh_dp(x, &qa);
            let hb = self.dh_dp(x, &qb);
            for j in 0..n {
                out.pp[i][j] = (ha[j] - hb[j]) / (two * step);
            }
        }
        out
    }
}

/// A point `(x, p)` of the cotangent bundle; `x` is reduced to `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PhasePoint<T> {
    pub x: Vector<T>,
    pub p: Vector<T>,
}

/// A point `(x, v)` of the tangent bundle; `x` is reduced to `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TangentPoint<T> {
    pub x: Vector<T>,
    pub v: Vector<T>,
}

fn pack<T: Scalar>(dim: usize, xs: &[T], wrap: bool) -> Vector<T> {
    let mut out = zero_vec();
    for i in 0..dim.min(xs.len()) {
        out[i] = if wrap { wrap_angle(xs[i]) } else { xs[i] };
    }
    out
}

impl<T: Scalar> PhasePoint<T> {
    pub fn new(dim: usize, x: &[T], p: &[T]) -> Self {
        Self { x: pack(dim, x, true), p: pack(dim, p, false) }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
}

impl<T: Scalar> TangentPoint<T> {
    pub fn new(dim: usize, x: &[T], v: &[T]) -> Self {
        Self { x: pack(dim, x, true), v: pack(dim, v, false) }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.v.iter()).all(|v| v.is_finite())
    }
}

/// A Tonelli system with discount rate `lambda` and an optional constant
/// drift covector `η_c` entering the momentum equation.
#[derive(Clone)]
pub struct TonelliSystem<T: Scalar> {
    model: Arc<dyn TonelliModel<T>>,
    pub lambda: T,
    pub drift: Option<Vector<T>>,
    pub velocity_bound: T,
    pub name: String,
    /// Momentum offset `η_c/λ` already absorbed by a cohomology shift, so
    /// original momenta are `P - momentum_offset`.
    pub momentum_offset: Vector<T>,
}

impl<T: Scalar> fmt::Debug for TonelliSystem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TonelliSystem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("lambda", &self.lambda)
            .field("drift", &self.drift)
            .field("velocity_bound", &self.velocity_bound)
            .finish()
    }
}

impl<T: Scalar> TonelliSystem<T> {
    pub fn new(
        name: impl Into<String>,
        model: Arc<dyn TonelliModel<T>>,
        lambda: T,
        drift: Option<Vector<T>>,
        velocity_bound: T,
    ) -> Result<Self> {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        if !(velocity_bound > T::zero()) {
            return Err(Error::Config(format!("velocity_bound must be positive, got {velocity_bound}")));
        }
        let dim = model.dim();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!("unsupported dimension {dim}")));
        }
        Ok(Self { model, lambda, drift, velocity_bound, name: name.into(), momentum_offset: zero_vec() })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn model(&self) -> &Arc<dyn TonelliModel<T>> {
        &self.model
    }

    /// True when there is no drift or the drift vanishes.
    pub fn is_exact(&self) -> bool {
        match &self.drift {
            None => true,
            Some(d) => d[..self.dim()].iter().all(|c| *c == T::zero()),
        }
    }

    #[inline]
    pub fn hamiltonian(&self, x: &Vector<T>, p: &Vector<T>) -> T {
        self.model.hamiltonian(x, p)
    }
    #[inline]
    pub fn lagrangian(&self, x: &Vector<T>, v: &Vector<T>) -> T {
        self.model.lagrangian(x, v)
    }
    #[inline]
    pub fn dh_dx(&self, x: &Vector<T>, p: &Vector<T>) -> Vector<T> {
        self.model.dh_dx(x, p)
    }
    #[inline]
    pub fn dh_dp(&self, x: &Vector<T>, p: &Vector<T>) -> Vector<T> {
        self.model.dh_dp(x, p)
    }
    #[inline]
    pub fn dl_dx(&self, x: &Vector<T>, v: &Vector<T>) -> Vector<T> {
        self.model.dl_dx(x, v)
    }
    #[inline]
    pub fn dl_dv(&self, x: &Vector<T>, v: &Vector<T>) -> Vector<T> {
        self.model.dl_dv(x, v)
    }
    #[inline]
    pub fn convexity_modulus(&self) -> T {
        self.model.convexity_modulus()
    }

    pub fn hessian(&self, x: &Vector<T>, p: &Vector<T>) -> Hessian<T> {
        self.model.hessian(x, p)
    }

    /// Midpoint convexity probe of `p ↦ H(x, p)` on the supplied samples.
    pub fn probe_convexity(&self, samples: &[(Vector<T>, Vector<T>, Vector<T>)], tol: T) -> bool {
        let half = T::lit(0.5);
        samples.iter().all(|(x, p, q)| {
            let mut mid = zero_vec();
            for i in 0..self.dim() {
                mid[i] = (p[i] + q[i]) * half;
            }
            self.hamiltonian(x, &mid) <= (self.hamiltonian(x, p) + self.hamiltonian(x, q)) * half + tol
        })
    }
}

/// `(x, v) ↦ (x, ∂L/∂v(x, v))`.
pub fn legendre_to_cotangent<T: Scalar>(sys: &TonelliSystem<T>, tp: &TangentPoint<T>) -> PhasePoint<T> {
    PhasePoint { x: tp.x, p: sys.dl_dv(&tp.x, &tp.v) }
}

/// `(x, p) ↦ (x, ∂H/∂p(x, p))`.
pub fn legendre_to_tangent<T: Scalar>(sys: &TonelliSystem<T>, pp: &PhasePoint<T>) -> TangentPoint<T> {
    TangentPoint { x: pp.x, v: sys.dh_dp(&pp.x, &pp.p) }
}

/// `L(x, v) + H(x, p) - ⟨p, v⟩`, non-negative with equality exactly on the
/// Legendre graph.
pub fn fenchel_gap<T: Scalar>(sys: &TonelliSystem<T>, x: &Vector<T>, v: &Vector<T>, p: &Vector<T>) -> T {
    sys.lagrangian(x, v) + sys.hamiltonian(x, p) - dot(sys.dim(), p, v)
}

/// Model `H(x, p + θ)`, whose Lagrangian is `L(x, v) - ⟨θ, v⟩`.
#[derive(Debug)]
struct MomentumShift<T: Scalar> {
    inner: Arc<dyn TonelliModel<T>>,
    theta: Vector<T>,
}

impl<T: Scalar> MomentumShift<T> {
    #[inline]
    fn shifted(&self, p: &Vector<T>) -> Vector<T> {
        let mut q = *p;
        for i in 0..self.inner.dim() {
            q[i] = q[i] + self.theta[i];
        }
        q
    }
}

impl<T: Scalar> TonelliModel<T> for MomentumShift<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn hamiltonian(&self, x: &Vector<T>, p: &Vector<T>) -> T {
        self.inner.hamiltonian(x, &self.shifted(p))
    }
    fn lagrangian(&self, x: &Vector<T>, v: &Vector<T>) -> T {
        self.inner.lagrangian(x, v) - dot(self.dim(), &self.theta, v)
    }
    fn dh_dx(&self, x: &Vector<T>, p: &Vector<T>) -> Vector<T> {
        self.inner.dh_dx(x, &self.shifted(p))
    }
    fn dh_dp(&self, x: &Vector<T>, p: &Vector<T>) -> Vector<T> {
        self.inner.dh_dp(x, &self.shifted(p))
    }
    fn dl_dx(&self, x: &Vector<T>, v: &Vector<T>) -> Vector<T> {
        self.inner.dl_dx(x, v)
    }
    fn dl_dv(&self, x: &Vector<T>, v: &Vector<T>) -> Vector<T> {
        let mut g = self.inner.dl_dv(x, v);
        for i in 0..self.dim() {
            g[i] = g[i] - self.theta[i];
        }
        g
    }
    fn convexity_modulus(&self) -> T {
        self.inner.convexity_modulus()
    }
    fn hessian(&self, x: &Vector<T>, p: &Vector<T>) -> Hessian<T> {
        self.inner.hessian(x, &self.shifted(p))
    }
}

/// Absorbs the drift into the momentum, `P = p + η_c/λ`, returning the
/// exact system `Ĥ(x, P) = H(x, P - η_c/λ)`.
pub fn cohomology_shift<T: Scalar>(sys: &TonelliSystem<T>) -> Result<TonelliSystem<T>> {
    let drift = sys.drift.ok_or_else(|| Error::Precondition("cohomology shift needs a drift covector".into()))?;
    let dim = sys.dim();
    let mut out = sys.clone();
    out.drift = None;
    if drift[..dim].iter().all(|c| *c == T::zero()) {
        return Ok(out);
    }
    let mut theta = zero_vec();
    for i in 0..dim {
        theta[i] = -drift[i] / sys.lambda;
        out.momentum_offset[i] = sys.momentum_offset[i] - theta[i];
    }
    out.model = Arc::new(MomentumShift { inner: sys.model.clone(), theta });
    out.name = format!("{}-shifted", sys.name);
    Ok(out)
}

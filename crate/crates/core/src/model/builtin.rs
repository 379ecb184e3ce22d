use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Hessian, TonelliModel, TonelliSystem};
use crate::error::{Error, Result};
use crate::scalar::{dot, zero_vec, Scalar, Vector, MAX_DIM};

/// Largest Fourier mode accepted per axis in a mechanical potential.
pub const MAX_MODE: i32 = 8;

/// One term `a·cos⟨k,x⟩ + b·sin⟨k,x⟩` of a potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub k: Vec<i32>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Parameters accepted by [`builtin`]. Unused fields are ignored per system.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemParams {
    pub lambda: f64,
    /// Rotation covector of the integrable system.
    pub eta: Option<Vec<f64>>,
    /// Fourier series of the mechanical potential `V`.
    pub potential: Vec<FourierTerm>,
    /// Dimension for mechanical systems with no potential terms.
    pub dim: Option<usize>,
    pub velocity_bound: Option<f64>,
}

fn zeros<T: Scalar>() -> [[T; MAX_DIM]; MAX_DIM] {
    [[T::zero(); MAX_DIM]; MAX_DIM]
}

fn identity<T: Scalar>(dim: usize) -> [[T; MAX_DIM]; MAX_DIM] {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate().take(dim) {
        row[i] = T::one();
    }
    m
}

/// `H = ½p² − (1 − cos x)` on the circle.
#[derive(Clone, Copy, Debug, Default)]
pub struct Pendulum;

impl<T: Scalar> TonelliModel<T> for Pendulum {
    fn dim(&self) -> usize {
        1
    }
    fn hamiltonian(&self, x: &Vector<T>, p: &Vector<T>) -> T {
        T::lit(0.5) * p[0] * p[0] - (T::one() - x[0].cos())
    }
    fn lagrangian(&self, x: &Vector<T>, v: &Vector<T>) -> T {
        T::lit(0.5) * v[0] * v[0] + (T::one() - x[0].cos())
    }
    fn dh_dx(&self, x: &Vector<T>, _p: &Vector<T>) -> Vector<T> {
        [-x[0].sin(), T::zero()]
    }
    fn dh_dp(&self, _x: &Vector<T>, p: &Vector<T>) -> Vector<T> {
        [p[0], T::zero()]
    }
    fn dl_dx(&self, x: &Vector<T>, _v: &Vector<T>) -> Vector<T> {
        [x[0].sin(), T::zero()]
    }
    fn dl_dv(&self, _x: &Vector<T>, v: &Vector<T>) -> Vector<T> {
        [v[0], T::zero()]
    }
    fn convexity_modulus(&self) -> T {
        T::one()
    }
    fn hessian(&self, x: &Vector<T>, _p: &Vector<T>) -> Hessian<T> {
        let mut xx = zeros();
        xx[0][0] = -x[0].cos();
        Hessian { xx, xp: zeros(), pp: identity(1) }
    }
}

/// Mañé Lagrangian `½|v − X(x)|²` of the field `X = (cos x₁, sin x₁)` on T².
#[derive(Clone, Copy, Debug, Default)]
pub struct Mane2d;

impl Mane2d {
    #[inline]
    fn field<T: Scalar>(x: &Vector<T>) -> Vector<T> {
        [x[0].cos(), x[0].sin()]
    }
}

impl<T: Scalar> TonelliModel<T> for Mane2d {
    fn dim(&self) -> usize {
        2
    }
    fn hamiltonian(&self, x: &Vector<T>, p: &Vector<T>) -> T {
        let f = Self::field(x);
        T::lit(0.5) * dot(2, p, p) + dot(2, p, &f)
    }
    fn lagrangian(&self, x: &Vector<T>, v: &Vector<T>) -> T {
        let f = Self::field(x);
        let (a, b) = (v[0] - f[0], v[1] - f[1]);
        T::lit(0.5) * (a * a + b * b)
    }
    fn dh_dx(&self, x: &Vector<T>, p: &Vector<T>) -> Vector<T> {
        let (s, c) = x[0].sin_cos();
        [-p[0] * s + p[1] * c, T::zero()]
    }
    fn dh_dp(&self, x: &Vector<T>, p: &Vector<T>) -> Vector<T> {
        let f = Self::field(x);
        [p[0] + f[0], p[1] + f[1]]
    }
    fn dl_dx(&self, x: &Vector<T>, v: &Vector<T>) -> Vector<T> {
        let (s, c) = x[0].sin_cos();
        [(v[0] - c) * s - (v[1] - s) * c, T::zero()]
    }
    fn dl_dv(&self, x: &Vector<T>, v: &Vector<T>) -> Vector<T> {
        let f = Self::field(x);
        [v[0] - f[0], v[1] - f[1]]
    }
    fn convexity_modulus(&self) -> T {
        T::one()
    }
    fn hessian(&self, x: &Vector<T>, p: &Vector<T>) -> Hessian<T> {
        let (s, c) = x[0].sin_cos();
        let mut xx = zeros();
        xx[0][0] = -p[0] * c - p[1] * s;
        let mut xp = zeros();
        xp[0][0] = -s;
        xp[0][1] = c;
        Hessian { xx, xp, pp: identity(2) }
    }
}

/// Mechanical system `½|p|² + V(x)` with a trigonometric polynomial `V`.
#[derive(Clone, Debug)]
pub struct Mechanical<T> {
    dim: usize,
    // (k, a, b)
    terms: Vec<(Vector<T>, T, T)>,
}

impl<T: Scalar> Mechanical<T> {
    pub fn new(dim: usize, terms: &[FourierTerm]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!("unsupported dimension {dim}")));
        }
        let mut out = Vec::with_capacity(terms.len());
        for t in terms {
            if t.k.len() != dim {
                return Err(Error::Config(format!("potential mode {:?} does not match dimension {dim}", t.k)));
            }
            if t.k.iter().any(|k| k.abs() > MAX_MODE) {
                return Err(Error::Config(format!("potential mode {:?} exceeds cutoff {MAX_MODE}", t.k)));
            }
            if !t.cos.is_finite() || !t.sin.is_finite() {
                return Err(Error::Config("potential coefficients must be finite".into()));
            }
            let mut k = zero_vec();
            for (i, ki) in t.k.iter().enumerate() {
                k[i] = T::lit(*ki as f64);
            }
            out.push((k, T::lit(t.cos), T::lit(t.sin)));
        }
        Ok(Self { dim, terms: out })
    }

    /// Upper bound on `max V − min V`.
    pub fn oscillation_bound(&self) -> T {
        self.terms.iter().fold(T::zero(), |acc, (_, a, b)| acc + T::lit(2.0) * (a.abs() + b.abs()))
    }

    fn potential(&self, x: &Vector<T>) -> T {
        self.terms.iter().fold(T::zero(), |acc, (k, a, b)| {
            let (s, c) = dot(self.dim, k, x).sin_cos();
            acc + *a * c + *b * s
        })
    }

    fn potential_grad(&self, x: &Vector<T>) -> Vector<T> {
        let mut g = zero_vec();
        for (k, a, b) in &self.terms {
            let (s, c) = dot(self.dim, k, x).sin_cos();
            let w = *b * c - *a * s;
            for i in 0..self.dim {
                g[i] = g[i] + k[i] * w;
            }
        }
        g
    }
}

impl<T: Scalar> TonelliModel<T> for Mechanical<T> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn hamiltonian(&self, x: &Vector<T>, p: &Vector<T>) -> T {
        T::lit(0.5) * dot(self.dim, p, p) + self.potential(x)
    }
    fn lagrangian(&self, x: &Vector<T>, v: &Vector<T>) -> T {
        T::lit(0.5) * dot(self.dim, v, v) - self.potential(x)
    }
    fn dh_dx(&self, x: &Vector<T>, _p: &Vector<T>) -> Vector<T> {
        self.potential_grad(x)
    }
    fn dh_dp(&self, _x: &Vector<T>, p: &Vector<T>) -> Vector<T> {
        *p
    }
    fn dl_dx(&self, x: &Vector<T>, _v: &Vector<T>) -> Vector<T> {
        let g = self.potential_grad(x);
        [-g[0], -g[1]]
    }
    fn dl_dv(&self, _x: &Vector<T>, v: &Vector<T>) -> Vector<T> {
        *v
    }
    fn convexity_modulus(&self) -> T {
        T::one()
    }
    fn hessian(&self, x: &Vector<T>, _p: &Vector<T>) -> Hessian<T> {
        let mut xx = zeros();
        for (k, a, b) in &self.terms {
            let (s, c) = dot(self.dim, k, x).sin_cos();
            let w = *a * c + *b * s;
            for i in 0..self.dim {
                for j in 0..self.dim {
                    xx[i][j] = xx[i][j] - k[i] * k[j] * w;
                }
            }
        }
        Hessian { xx, xp: zeros(), pp: identity(self.dim) }
    }
}

/// Free rotor `½|p|²`; the rotation comes from the drift covector.
pub type Integrable<T> = Mechanical<T>;

/// Builds one of the named example systems.
pub fn builtin<T: Scalar>(name: &str, params: &SystemParams) -> Result<TonelliSystem<T>> {
    if !(params.lambda > 0.0) || !params.lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be positive, got {}", params.lambda)));
    }
    let lambda = T::lit(params.lambda);
    let bound = |default: f64| T::lit(params.velocity_bound.unwrap_or(default));
    match name {
        "pendulum" => TonelliSystem::new(name, Arc::new(Pendulum), lambda, None, bound(3.0)),
        "mane2d" => TonelliSystem::new(name, Arc::new(Mane2d), lambda, None, bound(3.0)),
        "integrable" => {
            let eta = params.eta.clone().unwrap_or_else(|| vec![0.0; params.dim.unwrap_or(1)]);
            if eta.is_empty() || eta.len() > MAX_DIM || eta.iter().any(|e| !e.is_finite()) {
                return Err(Error::Config(format!("eta must hold 1 or 2 finite entries, got {eta:?}")));
            }
            let dim = eta.len();
            // the drift enters as ṗ = −λp − η_c, so the torus p = η/λ needs η_c = −η
            let mut drift = zero_vec();
            for (i, e) in eta.iter().enumerate() {
                drift[i] = T::lit(-e);
            }
            let eta_norm = eta.iter().map(|e| e * e).sum::<f64>().sqrt();
            let model = Mechanical::new(dim, &[])?;
            TonelliSystem::new(name, Arc::new(model), lambda, Some(drift), bound(eta_norm / params.lambda + 2.0))
        }
        "mechanical" => {
            let dim = params.potential.first().map(|t| t.k.len()).or(params.dim).unwrap_or(1);
            let model = Mechanical::<T>::new(dim, &params.potential)?;
            // calibrated speeds obey ½|v|² ≤ osc V
            let default = (2.0 * model.oscillation_bound().as_f64()).sqrt() + 1.0;
            let drift = params.eta.as_ref().map(|eta| {
                let mut d = zero_vec();
                for (i, e) in eta.iter().take(dim).enumerate() {
                    d[i] = T::lit(-e);
                }
                d
            });
            TonelliSystem::new(name, Arc::new(model), lambda, drift, bound(default))
        }
        other => Err(Error::Config(format!(
            "unknown system `{other}` (expected pendulum, mane2d, integrable or mechanical)"
        ))),
    }
}

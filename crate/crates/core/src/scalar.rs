//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive};

/// Largest supported torus dimension.
pub const MAX_DIM: usize = 2;

/// Fixed-capacity coordinate vector; only the first `dim` entries are used.
pub type Vector<T> = [T; MAX_DIM];

/// Real scalar type the toolkit is generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FloatConst + FromPrimitive + Sum + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn two_pi() -> Self {
        Self::TAU()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// All-zero vector.
#[inline]
pub fn zero_vec<T: Scalar>() -> Vector<T> {
    [T::zero(); MAX_DIM]
}

#[inline]
pub fn dot<T: Scalar>(dim: usize, a: &Vector<T>, b: &Vector<T>) -> T {
    (0..dim).fold(T::zero(), |acc, i| acc + a[i] * b[i])
}

#[inline]
pub fn norm<T: Scalar>(dim: usize, a: &Vector<T>) -> T {
    dot(dim, a, a).sqrt()
}

/// Reduces an angle to `[0, 2π)`.
#[inline]
pub fn wrap_angle<T: Scalar>(x: T) -> T {
    let tau = T::two_pi();
    let mut r = x - (x / tau).floor() * tau;
    // floor can leave r == tau after rounding
    if r >= tau {
        r = r - tau;
    }
    if r < T::zero() {
        r = T::zero();
    }
    r
}

/// Reduces an angle and returns the number of whole turns removed.
#[inline]
pub fn wrap_angle_counting<T: Scalar>(x: T) -> (T, i64) {
    let tau = T::two_pi();
    let turns = (x / tau).floor();
    let mut r = x - turns * tau;
    let mut k = turns.to_i64().unwrap_or(0);
    if r >= tau {
        r = r - tau;
        k += 1;
    }
    if r < T::zero() {
        r = T::zero();
    }
    (r, k)
}

/// Signed shortest displacement between two angles, in `[-π, π)`.
#[inline]
pub fn angle_diff<T: Scalar>(a: T, b: T) -> T {
    let tau = T::two_pi();
    let d = a - b;
    d - ((d + T::PI()) / tau).floor() * tau
}

/// Flat-torus distance between two points of `T^dim`.
#[inline]
pub fn torus_distance<T: Scalar>(dim: usize, a: &Vector<T>, b: &Vector<T>) -> T {
    (0..dim)
        .map(|i| {
            let d = angle_diff(a[i], b[i]);
            d * d
        })
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_range() {
        for &x in
            &[-7.0, -1e-18, 0.0, 3.0, std::f64::consts::TAU, f64::from_bits(std::f64::consts::TAU.to_bits() + 1), 20.0]
        {
            let r = wrap_angle(x);
            assert!((0.0..std::f64::consts::TAU).contains(&r), "{x} -> {r}");
        }
        let (r, k) = wrap_angle_counting(-0.5_f64);
        assert_eq!(k, -1);
        assert!((r - (std::f64::consts::TAU - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn torus_distance_wraps() {
        let a = [0.1_f64, 0.0];
        let b = [std::f64::consts::TAU - 0.1, 0.0];
        assert!((torus_distance(1, &a, &b) - 0.2).abs() < 1e-12);
        assert!((angle_diff(0.1_f64, 6.2) - (0.1 - 6.2 + std::f64::consts::TAU)).abs() < 1e-12);
    }
}

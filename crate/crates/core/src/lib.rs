//! Numerical weak KAM toolkit for discounted (conformally symplectic)
//! Tonelli systems on the flat tori `T¹` and `T²`.
//!
//! The core is generic over the scalar type; the aliases at the crate root
//! fix it to `f64`, which is what the command-line front end uses.

// index loops mirror the formulas; `!(a < b)` comparisons deliberately reject NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod attractor;
pub mod aubry;
pub mod error;
pub mod export;
pub mod flow;
pub mod measures;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod value;

pub use error::{Error, Result};
pub use scalar::{Scalar, Vector, MAX_DIM};

/// Crate version, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type System = model::TonelliSystem<f64>;
pub type Phase = model::PhasePoint<f64>;
pub type Tangent = model::TangentPoint<f64>;
pub type Grid = value::TorusGrid<f64>;
pub type Field = value::GridField<f64>;
pub type Gradient = value::VectorField<f64>;
pub type Orbit = flow::Trajectory<f64>;
pub type Measure = measures::OccupationMeasure<f64>;

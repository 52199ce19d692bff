//! Numerical laboratory for discrete maximal averages along integral hypersurfaces
//! `{x ∈ Z^n : Q(x) = λ}`: representation counts, complete exponential sums, main-term
//! multipliers, averaging operators on grids, and lacunary sequences built from restricted
//! counts.
//!
//! Floating-point code is generic over [`Real`] (`f32` or `f64`); the aliases below fix the
//! scalar for the common cases.

pub mod arith;
pub mod counting;
pub mod dft;
pub mod experiments;
pub mod expsums;
pub mod error;
pub mod forms;
pub mod multipliers;
pub mod operators;
pub mod scalar;
pub mod sequences;
pub mod special;

pub use error::{Budget, Error, Result};
pub use forms::{BirchReport, BirchVerdict, CutoffPsi, FormKind, IntegralForm, Monomial};
pub use scalar::Real;

pub type GridFunction64 = operators::GridFunction<f64>;
pub type GridFunction32 = operators::GridFunction<f32>;
pub type SurfaceMeasure64 = multipliers::SurfaceMeasure<f64>;
pub type SurfaceMeasure32 = multipliers::SurfaceMeasure<f32>;
pub type OmegaHat64 = multipliers::OmegaHat<f64>;
pub type OmegaHat32 = multipliers::OmegaHat<f32>;
pub type MultiplierContext64<'a> = multipliers::MultiplierContext<'a, f64>;
pub type MultiplierContext32<'a> = multipliers::MultiplierContext<'a, f32>;
pub type WeylValue64 = expsums::WeylValue<f64>;
pub type WeylValue32 = expsums::WeylValue<f32>;

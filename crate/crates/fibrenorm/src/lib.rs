//! Numerical laboratory for the renormalization of circle maps with a flat
//! interval and Fibonacci (golden-mean) rotation number.
//!
//! The library works on normalized map data: a point of the model space
//! carries four marked coordinates `x1 < 0 < x3 < x4 < 1`, a critical value
//! `x2`, a parameter `s` for the power-law piece, and three diffeomorphisms
//! of `[0,1]` kept as exact expression DAGs. On such points it provides
//!
//! * the renormalization operator (first-return map, rescaled and flipped),
//!   both as closed-form coordinate recursions ([`renorm`]) and as a direct
//!   dynamical oracle ([`dynamics`]);
//! * the asymptotically linear model of the cascade: the matrix `L`, its
//!   eigendata and the affine fixed point ([`spectral`]);
//! * extraction of the three geometric invariants `C_u`, `C_s`, `C_-` that
//!   grade how the Cantor-attractor geometry degenerates ([`invariants`]);
//! * regularity classification of the conjugacy between two maps from those
//!   invariants, with empirical length-ratio diagnostics ([`conjugacy`]);
//! * bisection location of the Fibonacci parameter inside a one-parameter
//!   family ([`fibsearch`]).
//!
//! All arithmetic runs at explicit, user-chosen precision ([`numerics`]);
//! computations that detect catastrophic cancellation abort and are restarted
//! at doubled precision by their drivers.

pub mod conjugacy;
pub mod diag;
pub mod dynamics;
pub mod fibsearch;
pub mod flatmap;
pub mod invariants;
pub mod numerics;
pub mod renorm;
pub mod spectral;

mod error;

pub use error::{Error, Result};
pub use numerics::{PrecisionContext, Real};

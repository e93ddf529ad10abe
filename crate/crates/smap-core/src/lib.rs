//! Numerical laboratory for the 1-equivariant Schrödinger map flow
//! `∂_t u = u ∧ Δu` near the harmonic map `Q`: corrector profiles of the
//! slowly modulated approximate solution, modulation ODEs with shooting, a
//! sphere-valued radial solver with orthogonality-based decomposition, and
//! the diagnostics used to check the scaling laws numerically.

// `!(x > 0.0)` guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops over parallel arrays
#![allow(clippy::needless_range_loop)]

pub mod decompose;
pub mod diagnostics;
pub mod error;
pub mod evolve;
pub mod grid;
pub mod modulation_ode;
pub mod ground_state;
pub mod operators;
pub mod profiles;

pub use error::{Result, SmapError};
pub use grid::{DiffOrder, Field, GridSpec, RadialGrid};
pub use operators::{FieldTriple, Operators};

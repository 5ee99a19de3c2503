//! Exact cylinder-level numerics for fractional Sobolev spaces, Cayley transforms and
//! uniformly bounded boundary representations on the boundary of a regular tree.
//!
//! Everything is computed on locally constant functions, where the double integrals defining
//! norms and operators collapse to finite sums (plus closed-form geometric tails near a marked
//! boundary point).

pub mod boundary_core;
pub mod conformal_ops;
pub mod function_space;
pub mod lab_cli;
pub mod operators;
pub mod error;

pub use error::{Error, Result};

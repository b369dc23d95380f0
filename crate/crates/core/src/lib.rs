//! Numerical laboratory for mesh dependence of gradient-based optimisation
//! when derivatives are represented in the Euclidean coefficient inner
//! product instead of the Hilbert inner product of the control space.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod control;
pub mod dense;
pub mod descent;
pub mod error;
pub mod expcli;
pub mod femcore;
pub mod meshkit;
pub mod sparse;
pub mod spectra;

pub use error::{Error, Result};

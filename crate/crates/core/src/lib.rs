//! Numerical Finsler geometry, from the nonlinear connection up to the
//! dimension of the holonomy algebra generated by curvature fields.
//!
//! [`FinslerSpace`] is the entry point. The `commands` module packages the
//! experiments behind the `landsberg` binary.

// Index loops mirror tensor notation, and `!(a > b)` comparisons are
// deliberate so that NaN takes the failing branch.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod commands;
pub mod config;
pub mod curve;
pub mod error;
pub mod expr;
pub mod field;
pub mod geometry;
pub mod holonomy;
pub mod lie_bundle;
pub mod metric;
pub mod ode;
pub mod rank;
pub mod report;
pub mod sampling;
pub mod transport;

pub use curve::Curve;
pub use error::{Error, Result};
pub use field::VerticalField;
pub use geometry::FinslerSpace;

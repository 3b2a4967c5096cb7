//! Riemannian geometry on symmetric positive-definite matrices, region
//! covariance descriptors, geodesic k-means and the k-tangent-spaces weak
//! learner inside a LogitBoost rejection cascade.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boost;
pub mod cluster;
pub mod descriptor;
pub mod eval;
pub mod io;
pub mod ktangent;
pub mod seed;
pub mod spd;

mod error;

pub use error::{Error, Result};

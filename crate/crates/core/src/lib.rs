//! Multi-agent value factorization for vehicular task offloading.
//!
//! The numeric core ([`numkit`], [`agents`], [`mixers`]) is generic over the
//! scalar type; the environment, trainer and harness run in `f64`. The
//! aliases below fix the scalar for the common case.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod env;
pub mod error;
pub mod harness;
pub mod mixers;
pub mod numkit;
pub mod oracle;
pub mod trainer;

pub use error::{Error, Result};

/// Scalar used by the environment, trainer and harness.
pub type Real = f64;
pub type Matrix = numkit::Matrix<Real>;
pub type ParamStore = numkit::ParamStore<Real>;
pub type MixBatch = mixers::MixBatch<Real>;

pub type Matrix32 = numkit::Matrix<f32>;
pub type ParamStore32 = numkit::ParamStore<f32>;

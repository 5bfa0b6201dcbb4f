//! Kinetic Langevin Monte Carlo: discretizations of underdamped Langevin
//! dynamics, shifted-coupling regularity certificates, and error metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod coupling;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod par;
pub mod path;
pub mod potentials;
pub mod rng;
pub mod shifts;
pub mod suite;

pub use error::{Error, Result};

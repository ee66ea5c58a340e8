// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod error;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod quadrature;
pub mod reduction;
pub mod reference;
pub mod rng;
pub mod sampling;
pub mod static_solver;

pub use error::{Error, Result};

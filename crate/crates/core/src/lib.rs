//! Noisy accelerated power iteration for generalized eigenvalue problems.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bgeom;
pub mod cca;
pub mod config;
pub mod error;
pub mod io;
pub mod lsolve;
pub mod napi;
pub mod operator;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

//! Hierarchical transform coding for attribute tables: a truncated KLT base
//! layer, a compressed-sensing refinement decoded by unfolded ISTA, and a
//! Gaussian entropy model driving a range coder.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod base;
pub mod bench;
pub mod bitstream;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod imagemetric;
pub mod linalg;
pub mod quant;
pub mod refinement;
pub mod train;

pub use error::{Error, Result};

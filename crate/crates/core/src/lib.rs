//! Nonparanormal graph quilting.
//!
//! Estimates the conditional-dependence graph of a Gaussian copula model when
//! the variables are only ever recorded in partially overlapping blocks, so
//! some pairs are never observed together.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod glasso;
pub mod linalg;
pub mod lrgq;
pub mod madgq;
pub mod rank_corr;
pub mod simgen;
pub mod types;

pub use error::{QuiltError, Result};
pub use rank_corr::Statistic;
pub use types::{BlockDesign, EdgeSet, MaskedCorrelation, PairMask, PrecisionEstimate};

//! Correlation filtering, community detection and minimum-variance portfolio
//! construction built on the random-matrix split of a correlation matrix.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::single_range_in_vec_init)]

pub mod backtest;
pub mod community;
pub mod error;
pub mod market_data;
pub mod portfolio;
pub mod qp;
pub mod spectral;
pub mod synthetic;

pub use error::{Error, Result};

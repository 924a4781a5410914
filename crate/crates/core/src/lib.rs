//! Imbalanced multivariate time-series classification with temporal
//! factorization, graph-like channel interaction and a class-weighted
//! contrastive clustering loss, built on a small reverse-mode autodiff core.

pub mod cli;
pub mod data;
pub mod dgl;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod model;
pub mod params;
pub mod tdf;
pub mod train;

pub use error::{Error, Result};

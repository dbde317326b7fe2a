//! Rank-based empirical angular measures for multivariate extremes.
//!
//! Estimation of the angular measure on the sup-norm sphere from rank-standardized
//! data, finite-sample deviation bounds, minimum-volume sets for anomaly detection and
//! grid classifiers for the extreme region, together with a reference simulator.

pub mod bounds;
pub mod classify;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod geometry;
pub mod ks;
pub mod mvset;
pub mod simgen;
pub mod transform;

pub use error::{Error, Result};

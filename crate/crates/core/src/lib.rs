//! Bayesian spatio-temporal mixtures of log-normal distributions for grouped
//! (binned) income data.

pub mod error;
pub mod gibbs;
pub mod linalg;
pub mod mixture;
pub mod model;
pub mod predict;
pub mod quad;
pub mod rng;
pub mod select;
pub mod simgen;
pub mod special;

pub use error::{Error, Result};

//! Traveling fronts of the stochastic Nagumo equation: deterministic and
//! stochastic wave profiles, Q-Wiener noise, SPDE paths with phase tracking,
//! exit statistics and chaining diagnostics.

pub mod chaining;
pub mod error;
pub mod exit_stats;
pub mod freezing;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod noise;
pub mod spde;
pub mod stats;
pub mod wave;

pub use error::{Error, Result};

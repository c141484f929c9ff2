//! Numerical profile decomposition for bounded sequences on manifolds of
//! bounded geometry.

pub mod atlas;
pub mod charts;
pub mod discretization;
pub mod error;
pub mod geometry;
pub mod lattice;
pub mod pipeline;
pub mod profiles;
pub mod report;
pub mod scenario;
pub mod spotlight;
pub mod verification;

pub use error::{Error, Result};

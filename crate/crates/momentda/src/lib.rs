//! Moment-based domain adaptation on the unit cube.
//!
//! The crate covers the numerical pieces needed to compare two densities on
//! `[0,1]^N` through their moments: an orthonormal polynomial basis, Gauss
//! quadrature, maximum-entropy fitting, distances between densities, the
//! error-bound calculators and a set of reproducible experiments.

pub mod bounds;
pub mod density;
pub mod error;
pub mod experiments;
pub mod maxent;
pub mod metrics;
pub mod polybasis;
pub mod quadrature;

mod fd;

pub use error::{Error, Result};

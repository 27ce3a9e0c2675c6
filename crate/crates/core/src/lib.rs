//! Numerical laboratory for discrete operator semigroups with finitely many
//! spectral points on the unit circle and their finite-rank perturbations.

pub mod bundle;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod perturbation;
pub mod quadrature;
pub mod report;
pub mod resolvent;
pub mod scenario;
pub mod stability;

pub use error::{LabError, Result};
pub use linalg::C64;

//! Numerical toolkit for nonautonomous linear differential equations.

pub mod dichotomy;
pub mod error;
pub mod expr;
pub mod floquet;
pub mod linalg;
pub mod linearize;
pub mod ode;
pub mod propagate;
pub mod quadrature;
pub mod reduce;
pub mod spectrum;
pub mod system;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

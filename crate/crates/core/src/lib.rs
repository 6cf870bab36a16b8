//! Forward scattering by small soft particles and by their homogenized
//! limit, fixed-energy inverse scattering, and particle-placement planning.

pub mod error;
pub mod homogenized;
pub mod inverse;
pub mod io;
pub mod linalg;
pub mod manybody;
pub mod medium;
pub mod planner;
pub mod quadrature;
pub mod specfun;
pub mod volume;

pub use error::{Error, Result};

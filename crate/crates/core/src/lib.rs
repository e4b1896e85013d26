//! Self-tuning instrumental variables estimation for high-dimensional linear
//! models with endogenous regressors.

pub mod conic;
pub mod error;
pub mod inference;
pub mod model;
pub mod nonvalid;
pub mod serde_real;

pub use error::{Error, Result};
pub mod sensitivity;
pub mod sim;
pub mod stiv;

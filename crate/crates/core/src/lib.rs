pub mod assembly;
pub mod config;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod norms;
pub mod nurbs;
pub mod output;
pub mod problems;
pub mod quadrature;
pub mod time_integration;
pub mod transport;

pub use error::{Error, Result};

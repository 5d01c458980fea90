pub mod basis;
pub mod config;
pub mod error;
pub mod generator;
pub mod inference;
pub mod io;
pub mod model;
pub mod oracles;
pub mod prior;
pub mod quadrature;
pub mod rng;
pub mod trainer;
pub mod validate;

pub use error::{KaemError, Result};

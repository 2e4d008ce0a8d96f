pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod hubness;
pub mod neighbors;
mod par;
pub mod regression;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use par::is_parallel;

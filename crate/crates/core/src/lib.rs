pub mod adapters;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod netcore;
pub mod error;
pub mod seed;
pub mod training;

pub use error::{Error, Result};

pub mod cli;
pub mod config;
pub mod container;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod model;
pub mod seed;
pub mod training;

pub use error::{Error, Result};

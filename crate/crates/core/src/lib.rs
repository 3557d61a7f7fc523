pub mod aggregators;
pub mod autodiff;
mod bytes;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{CoevoError, Result};

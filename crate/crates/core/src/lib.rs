//! Vision graph prompting on a small Vision GNN.

pub mod analyzer;
pub mod cli;
pub mod config;
pub mod error;
pub mod grapher;
pub mod model;
pub mod patchgraph;
pub mod prompts;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};

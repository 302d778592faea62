pub mod branching;
pub mod config;
pub mod datapipe;
pub mod error;
pub mod evaluator;
pub mod objectives;
pub mod rng;
pub mod selfcheck;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

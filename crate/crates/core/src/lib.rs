//! Attention-based multivariate time-series forecasting models and the
//! replace-attention-with-MLP pruning transform.

pub mod attention;
pub mod blocks;
pub mod checks;
pub mod cli;
pub mod cost;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod params;
pub mod prune;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Mode, Tape, Tensor, Var};

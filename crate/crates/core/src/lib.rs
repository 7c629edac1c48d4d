//! Deep state-space sequence models for multivariate grid time series and a
//! demand-response portfolio optimizer that consumes their forecasts.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod drport;
pub mod error;
pub mod fusion;
pub mod model;
pub mod params;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

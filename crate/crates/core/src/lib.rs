pub mod dataset;
pub mod encoders;
pub mod error;
pub mod features;
pub mod impute;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod text;

pub use error::{Error, Result};

pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod data;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod taskproxy;
pub mod tensor;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};

pub mod cnn;
pub mod config;
pub mod crf;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod refiner;
pub mod rng;
pub mod tensor;

pub use data::{HyperCube, LabelMap};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

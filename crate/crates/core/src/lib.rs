pub mod corpus;
pub mod error;
pub mod eval;
pub mod hangul;
pub mod matrix;
pub mod model;
pub mod scalar;
pub mod synthetic;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};

/// Default double-precision instantiations of the scalar-generic types.
pub type Params = model::ModelParams<f64>;
pub type ParamsF32 = model::ModelParams<f32>;
pub type Mat = matrix::Matrix<f64>;
pub type Outcome = training::TrainOutcome<f64>;

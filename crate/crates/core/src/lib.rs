//! Probabilistic type inference for a JavaScript/TypeScript subset with
//! graph neural networks over type flow graphs.

pub mod corpusgen;
pub mod eval;
pub mod frontend;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod tfg;
pub mod vocab;

/// Single-precision tensor, the training default.
pub type Tensor32 = numeric::Tensor<f32>;
/// Double-precision tensor, used for gradient checks.
pub type Tensor64 = numeric::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;

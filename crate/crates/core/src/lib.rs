//! Multi-aspect cross-attention abusive language detection.

pub mod aspect;
pub mod autograd;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod text;
pub mod textgraph;

pub use error::{Error, Result};
pub use tensor::Tensor;

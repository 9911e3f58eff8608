//! Small NCHW `f32` tensor library with a reverse-mode tape.
//!
//! Covers exactly the operator set needed by an encoder-decoder segmentation
//! network: grouped/dilated convolution, batch normalization, ReLU and sigmoid,
//! max pooling, bilinear resampling, channel concatenation, channel scaling and
//! global average pooling. Everything runs single-threaded so results are
//! bit-reproducible for a given input.

mod conv;
mod graph;
mod sampling;
mod tensor;

pub use conv::Conv2dGeom;
pub use graph::{BatchStats, Graph, ParamGrads, Var};
pub use sampling::resize_bilinear;
pub use tensor::{Shape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: expected shape {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: Shape,
        got: Shape,
    },
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

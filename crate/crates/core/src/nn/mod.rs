//! Convolutional building blocks and the truncated U-Net built from them.

pub mod io;
mod model;
pub mod ops;
mod scalar;

pub use model::{
    layer_specs, predict_label, ChannelConfig, LayerKind, LayerSpec, Mode, Model, ModelError, Params, Prediction,
    Tape, DEFAULT_THRESHOLD, DROPOUT_RATE, INPUT_SIZE, LEAKY_SLOPE, OUTPUT_CELLS,
};
pub use scalar::{matmul, Mat, Scalar};

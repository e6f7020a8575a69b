//! Recognition of student identification numbers blackened into a 10×10
//! matrix template.
//!
//! The crate covers the whole pipeline:
//!
//! * [`label`]: the 10×10 label matrix, the CFMT predicate, textual records and IDs
//! * [`synth`]: a synthetic template renderer and dataset writer
//! * [`augment`]: rotation/shear/scale augmentation with probabilities calibrated
//!   so that a chosen fraction of samples stays untouched
//! * [`nn`]: a truncated U-Net mapping a 128×128 scan to a 10×10 grid of probabilities
//! * [`train`]: preprocessing, binary cross-entropy, Adam, the step learning-rate
//!   schedule, the training loop and a finite-difference gradient check
//! * [`eval`]: exact-match accuracy, α/β error rates and k-fold cross-validation
//! * [`cli`]: the batch command-line front end (`idgrid gen|calibrate|train|kfold|predict`)

pub mod augment;
pub mod cli;
pub mod eval;
pub mod image;
pub mod label;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod train;

pub use image::GrayImage;
pub use label::{GridLabel, StudentId, TextualRecord};

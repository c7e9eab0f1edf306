//! Multi-modal LSTM action anticipation.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, activations, softmax and a finite-difference gradient checker.
//! - [`layers`]: affine layers, LSTM cells with BPTT, FC-Pool and the `MMW1` parameter format.
//! - [`loss`]: the time-weighted anticipation loss and its gradient.
//! - [`descriptors`]: vehicle-dynamics triples and the dynamics-embedding LSTM.
//! - [`model`]: the MM-LSTM architecture, the two baselines and temporal average pooling.
//! - [`datagen`]: synthetic driving scenarios, the `VAD1` dataset format and splits.
//! - [`harness`]: training, per-second evaluation, CSV reports and the gradient-check suite.

pub mod datagen;
pub mod descriptors;
mod error;
pub mod harness;
pub mod layers;
pub mod loss;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::Matrix;

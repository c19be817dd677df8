//! Self-tuning of data-augmentation hyperparameters for self-supervised
//! anomaly detection.
//!
//! The crate is organised bottom-up: [`tensor`] provides reverse-mode
//! differentiation with double backward, [`augment`] the differentiable
//! augmentations, [`detector`] the encoder and Gaussian scorer, [`valloss`]
//! the unsupervised validation losses, and [`tuner`] the alternating
//! optimization of detector weights and augmentation hyperparameters.
//! [`datagen`] builds synthetic testbeds and [`eval`] scores results; it is
//! the only module that can read test labels.

pub mod augment;
pub mod datagen;
pub mod detector;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod tensor;
pub mod tuner;
pub mod valloss;

pub use error::{Error, Result};

//! Detector `f_θ`: a fully connected encoder with a classifier head, its
//! self-supervised training loss, and a Gaussian density scorer.

mod checkpoint;
mod encoder;
mod gde;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use encoder::{
    bce_from_logits, bce_train_loss, descend, encode, encode_pixels, logits, tensor_name,
    train_step, EncoderParams, EMBED_DIM, HIDDEN, INPUT_SHIFT,
};
pub use gde::{
    fit_gde, fit_gde_with, sample_covariance, score_variance, GdeModel, EIG_FLOOR, SHRINKAGE,
};

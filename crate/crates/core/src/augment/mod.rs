//! Augmentation functions `aug(x; a)`.
//!
//! CutDiff and rotation are differentiable in both the image and `a`;
//! CutOut and CutPaste are plain image edits used by the random baselines.

mod cutdiff;
mod params;
mod patch;
mod rotation;

pub use cutdiff::{
    cutdiff, cutdiff_batch, cutdiff_mask, cutdiff_random, patch_grid, sample_center, CUTDIFF_EPS,
};
pub use params::{
    compose_rs, decompose_l, recompose_lower, rotation_matrix, AugDomain, AugKind, AugParams,
    PatchShape, CUTDIFF_MAX_ENTRY, CUTDIFF_MIN_DIAG,
};
pub use patch::{cutout, cutout_at, cutpaste, paste_at, patch_extent, Rect};
pub use rotation::{affine_grid, bilinear_sample, rotate, rotate_batch};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{NdArray, Tensor};

/// Randomness consumed by one batched augmentation, kept so that the same
/// draw can be replayed at perturbed hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AugDraw {
    pub centers: Vec<[f64; 2]>,
    pub seeds: Vec<u64>,
}

impl AugDraw {
    pub fn sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let centers = (0..n).map(|_| sample_center(rng)).collect();
        let seeds = (0..n).map(|_| rng.gen()).collect();
        Self { centers, seeds }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Applies `kind` to every row of the `[N, m·m·c]` batch `x` with
/// hyperparameters `a`. Differentiable kinds keep the tape connection to
/// `x` and `a`; the patch baselines return constants.
pub fn apply_batch(
    kind: AugKind,
    x: &Tensor,
    a: &Tensor,
    side: usize,
    channels: usize,
    draw: &AugDraw,
) -> Result<Tensor> {
    if a.len() != kind.arity() {
        return Err(Error::shape(kind.name(), a.shape(), &[kind.arity()]));
    }
    let n = x.shape().first().copied().unwrap_or(0);
    if draw.len() != n {
        return Err(Error::Invalid(format!(
            "augmentation draw has {} entries for {n} rows",
            draw.len()
        )));
    }
    match kind {
        AugKind::CutDiff => cutdiff_batch(x, &a.reshape(&[3])?, side, channels, &draw.centers),
        AugKind::Rotation => rotate_batch(x, a, side, channels),
        AugKind::CutOut | AugKind::CutPaste => {
            let v = a.data();
            let mut out = Vec::with_capacity(x.len());
            for (i, seed) in draw.seeds.iter().enumerate() {
                let row = x.array().row(i);
                let im = Image::from_flat(side, channels, row)?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let y = if kind == AugKind::CutOut {
                    cutout(&im, v[0], &mut rng)?
                } else {
                    cutpaste(&im, v[0], v[1], &mut rng)?
                };
                out.extend_from_slice(y.pixels());
            }
            Ok(Tensor::constant(NdArray::new(x.shape().to_vec(), out)?))
        }
    }
}

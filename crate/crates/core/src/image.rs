use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NdArray, Tensor};

/// Square image of side `m` with `c` channels, stored row-major as `m×m×c`,
/// pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    side: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(side: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if side == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Invalid(format!(
                "image must have positive side and 1 or 3 channels, got {side}x{side}x{channels}"
            )));
        }
        if pixels.len() != side * side * channels {
            return Err(Error::shape("image", &[side, side, channels], &[pixels.len()]));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Invalid(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self {
            side,
            channels,
            pixels,
        })
    }

    pub fn filled(side: usize, channels: usize, v: f64) -> Self {
        Self {
            side,
            channels,
            pixels: vec![v.clamp(0.0, 1.0); side * side * channels],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.pixels[(i * self.side + j) * self.channels + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.pixels[(i * self.side + j) * self.channels + k] = v.clamp(0.0, 1.0);
    }

    /// Rounds every pixel to the nearest multiple of 1/255.
    pub fn quantized(&self) -> Image {
        Image {
            side: self.side,
            channels: self.channels,
            pixels: self
                .pixels
                .iter()
                .map(|p| (p * 255.0).round() / 255.0)
                .collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::constant(
            NdArray::new(vec![self.side, self.side, self.channels], self.pixels.clone())
                .expect("image invariant"),
        )
    }

    /// Builds an image from a flat row of `m·m·c` values, clamping into `[0, 1]`.
    pub fn from_flat(side: usize, channels: usize, row: &[f64]) -> Result<Self> {
        Self::new(side, channels, row.iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// Stacks same-shaped images into an `[N, m·m·c]` array.
pub fn batch(images: &[Image]) -> Result<NdArray> {
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientData("empty image batch".into()))?;
    let w = first.len();
    let mut data = Vec::with_capacity(w * images.len());
    for im in images {
        if im.side != first.side || im.channels != first.channels {
            return Err(Error::shape(
                "batch",
                &[first.side, first.side, first.channels],
                &[im.side, im.side, im.channels],
            ));
        }
        data.extend_from_slice(&im.pixels);
    }
    NdArray::matrix(images.len(), w, data)
}

/// Splits an `[N, m·m·c]` array back into images.
pub fn unbatch(rows: &NdArray, side: usize, channels: usize) -> Result<Vec<Image>> {
    if rows.shape().len() != 2 || rows.shape()[1] != side * side * channels {
        return Err(Error::shape("unbatch", rows.shape(), &[side * side * channels]));
    }
    (0..rows.rows())
        .map(|i| Image::from_flat(side, channels, rows.row(i)))
        .collect()
}

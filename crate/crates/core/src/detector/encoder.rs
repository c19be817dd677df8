use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{NdArray, Tape, Tensor};

/// Hidden widths and embedding size of the default encoder.
pub const HIDDEN: [usize; 2] = [64, 64];
pub const EMBED_DIM: usize = 16;

/// Weights of a fully connected encoder followed by a one-logit head.
///
/// `tensors` holds `[W1, b1, …, Wk, bk, Wh, bh]` where `Wi` is
/// `[dims[i-1], dims[i]]`, `bi` is `[dims[i]]`, `Wh` is `[h, 1]` and `bh`
/// is `[1]`. Hidden layers use relu; the embedding layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    dims: Vec<usize>,
    tensors: Vec<NdArray>,
}

fn expected_shapes(dims: &[usize]) -> Vec<Vec<usize>> {
    let mut shapes = Vec::new();
    for w in dims.windows(2) {
        shapes.push(vec![w[0], w[1]]);
        shapes.push(vec![w[1]]);
    }
    shapes.push(vec![*dims.last().expect("non-empty dims"), 1]);
    shapes.push(vec![1]);
    shapes
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        Self::check_dims(dims)?;
        let tensors = expected_shapes(dims)
            .into_iter()
            .map(|s| {
                if s.len() == 1 {
                    NdArray::zeros(&s)
                } else {
                    let limit = (6.0 / (s[0] + s[1]) as f64).sqrt();
                    let data = (0..s[0] * s[1]).map(|_| rng.gen_range(-limit..=limit)).collect();
                    NdArray::new(s, data).expect("shape matches data")
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            tensors,
        })
    }

    /// Default architecture for `input`-dimensional flattened images.
    pub fn desk<R: Rng + ?Sized>(input: usize, rng: &mut R) -> Result<Self> {
        Self::init(&[input, HIDDEN[0], HIDDEN[1], EMBED_DIM], rng)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            tensors: expected_shapes(dims).iter().map(|s| NdArray::zeros(s)).collect(),
        })
    }

    pub fn from_tensors(dims: &[usize], tensors: Vec<NdArray>) -> Result<Self> {
        Self::check_dims(dims)?;
        let shapes = expected_shapes(dims);
        if shapes.len() != tensors.len() {
            return Err(Error::Invalid(format!(
                "encoder with dims {dims:?} needs {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (k, (s, t)) in shapes.iter().zip(&tensors).enumerate() {
            if s.as_slice() != t.shape() {
                return Err(Error::Invalid(format!(
                    "{} has shape {:?}, expected {s:?}",
                    tensor_name(dims.len(), k),
                    t.shape()
                )));
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            tensors,
        })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Invalid(format!("invalid encoder dims {dims:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn tensors(&self) -> &[NdArray] {
        &self.tensors
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn embed_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    /// Registers every tensor as a leaf on `tape`.
    pub fn leaves(&self, tape: &Tape) -> Vec<Tensor> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub fn constants(&self) -> Vec<Tensor> {
        self.tensors.iter().cloned().map(Tensor::constant).collect()
    }

    /// Rebuilds parameters from tensors with the same layout.
    pub fn with_values(&self, theta: &[Tensor]) -> Result<Self> {
        Self::from_tensors(&self.dims, theta.iter().map(Tensor::to_array).collect())
    }

    /// Embeds image rows without recording anything.
    pub fn embed(&self, x: &NdArray) -> Result<NdArray> {
        Ok(encode_pixels(&self.constants(), &Tensor::constant(x.clone()))?.to_array())
    }
}

/// Human-readable name of tensor `k` in a parameter list for an encoder
/// with `n_dims` layer sizes.
pub fn tensor_name(n_dims: usize, k: usize) -> String {
    let layers = n_dims - 1;
    let kind = if k % 2 == 0 { "weight" } else { "bias" };
    if k / 2 < layers {
        format!("layer {} {kind}", k / 2 + 1)
    } else {
        format!("head {kind}")
    }
}

fn check_layout(theta: &[Tensor]) -> Result<()> {
    if theta.len() < 4 || theta.len() % 2 != 0 {
        return Err(Error::Invalid(format!(
            "parameter list has {} tensors, expected an even count of at least 4",
            theta.len()
        )));
    }
    Ok(())
}

/// Added to pixel values before they reach the encoder, so that inputs in
/// [0, 1] are roughly zero-centered.
pub const INPUT_SHIFT: f64 = -0.5;

/// Embeddings `[N, h]` of the rows of `x`.
pub fn encode(theta: &[Tensor], x: &Tensor) -> Result<Tensor> {
    check_layout(theta)?;
    let layers = theta.len() / 2 - 1;
    let mut z = x.clone();
    for l in 0..layers {
        z = z.matmul(&theta[2 * l])?.add(&theta[2 * l + 1])?;
        if l + 1 < layers {
            z = z.relu();
        }
    }
    Ok(z)
}

/// Embeddings of image rows with pixels in [0, 1], shifted by
/// [`INPUT_SHIFT`] first. Everything that feeds images to the detector goes
/// through here.
pub fn encode_pixels(theta: &[Tensor], x: &Tensor) -> Result<Tensor> {
    encode(theta, &x.add_scalar(INPUT_SHIFT))
}

/// Head logits `[N, 1]` for embeddings `z`.
pub fn logits(theta: &[Tensor], z: &Tensor) -> Result<Tensor> {
    check_layout(theta)?;
    let k = theta.len();
    z.matmul(&theta[k - 2])?.add(&theta[k - 1])
}

/// Binary cross-entropy in logit space: inliers are class 0, augmented
/// samples class 1, averaged over all rows.
pub fn bce_from_logits(l_in: &Tensor, l_aug: &Tensor) -> Result<Tensor> {
    let n = (l_in.len() + l_aug.len()) as f64;
    if l_in.is_empty() || l_aug.is_empty() {
        return Err(Error::EmptyPartition(if l_in.is_empty() { "inlier" } else { "augmented" }));
    }
    Ok(l_in
        .softplus()
        .sum()
        .add(&l_aug.neg().softplus().sum())?
        .scale(1.0 / n))
}

/// Training loss `L_trn` on an inlier batch and an augmented batch.
pub fn bce_train_loss(theta: &[Tensor], x_in: &Tensor, x_aug: &Tensor) -> Result<Tensor> {
    if x_in.shape().first() == Some(&0) || x_aug.shape().first() == Some(&0) {
        return Err(Error::EmptyPartition("training batch"));
    }
    let n_in = x_in.shape()[0];
    let z = encode_pixels(theta, &Tensor::concat_rows(&[x_in.clone(), x_aug.clone()])?)?;
    let l = logits(theta, &z)?;
    let total = l.shape()[0];
    bce_from_logits(&l.slice_rows(0, n_in)?, &l.slice_rows(n_in, total)?)
}

/// `θ - α·g`, failing if any gradient entry is non-finite.
pub fn descend(theta: &[Tensor], grads: &[Tensor], alpha: f64) -> Result<Vec<Tensor>> {
    for (k, g) in grads.iter().enumerate() {
        if !g.array().is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {}",
                tensor_name(theta.len() / 2, k)
            )));
        }
    }
    theta
        .iter()
        .zip(grads)
        .map(|(t, g)| t.sub(&g.scale(alpha)))
        .collect()
}

/// One full-batch gradient step on `L_trn`. Returns the new parameters and
/// the loss before the step.
pub fn train_step(
    params: &EncoderParams,
    x_in: &NdArray,
    x_aug: &NdArray,
    alpha: f64,
) -> Result<(EncoderParams, f64)> {
    if !(alpha >= 0.0) {
        return Err(Error::Invalid(format!("step size must be nonnegative, got {alpha}")));
    }
    let tape = Tape::new();
    let theta = params.leaves(&tape);
    let loss = bce_train_loss(
        &theta,
        &Tensor::constant(x_in.clone()),
        &Tensor::constant(x_aug.clone()),
    )?;
    if alpha == 0.0 {
        return Ok((params.clone(), loss.item()));
    }
    let grads = tape.grad(&loss, &theta, false)?;
    let next = descend(&theta, &grads, alpha)?;
    Ok((params.with_values(&next)?, loss.item()))
}

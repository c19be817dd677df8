//! Unsupervised validation losses over training, augmented and test
//! embeddings.
//!
//! The main loss jointly centers and rescales all embeddings so their total
//! pairwise squared distance is fixed, then measures how far each test
//! embedding lies from the training and augmented means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NdArray, Tensor};

/// Smoothing inside every Euclidean norm, `√(‖·‖² + NORM_EPS)`.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Trn,
    Aug,
    Test,
}

/// Embedding rows stored as contiguous blocks: training, augmented, test.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch {
    z: Tensor,
    counts: [usize; 3],
}

impl EmbeddingBatch {
    pub fn new(z: Tensor, n_trn: usize, n_aug: usize, n_test: usize) -> Result<Self> {
        let rows = z.shape().first().copied().unwrap_or(0);
        if z.shape().len() != 2 || rows != n_trn + n_aug + n_test {
            return Err(Error::shape("embedding batch", z.shape(), &[n_trn + n_aug + n_test, 0]));
        }
        Ok(Self {
            z,
            counts: [n_trn, n_aug, n_test],
        })
    }

    pub fn from_parts(trn: &Tensor, aug: &Tensor, test: &Tensor) -> Result<Self> {
        let counts = [trn, aug, test].map(|t| t.shape().first().copied().unwrap_or(0));
        let z = Tensor::concat_rows(&[trn.clone(), aug.clone(), test.clone()])?;
        Self::new(z, counts[0], counts[1], counts[2])
    }

    pub fn rows(&self) -> &Tensor {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, p: Partition) -> usize {
        self.counts[p as usize]
    }

    pub fn partition_of(&self, row: usize) -> Option<Partition> {
        let [a, b, c] = self.counts;
        match row {
            r if r < a => Some(Partition::Trn),
            r if r < a + b => Some(Partition::Aug),
            r if r < a + b + c => Some(Partition::Test),
            _ => None,
        }
    }

    /// Rows of one partition.
    pub fn part(&self, p: Partition) -> Result<Tensor> {
        let start: usize = self.counts[..p as usize].iter().sum();
        let n = self.counts[p as usize];
        if n == 0 {
            return Err(Error::EmptyPartition(match p {
                Partition::Trn => "trn",
                Partition::Aug => "aug",
                Partition::Test => "test",
            }));
        }
        self.z.slice_rows(start, start + n)
    }
}

/// Output of [`normalize_tpsd`] with the applied centroid and scale.
#[derive(Clone, Debug)]
pub struct NormalizedEmbeddings {
    pub batch: EmbeddingBatch,
    pub centroid: Vec<f64>,
    pub frobenius: f64,
}

/// Total pairwise squared distance `Σ_ij ‖z_i - z_j‖²`, via
/// `2N·Σ_i ‖z_i - z̄‖²`.
pub fn tpsd(z: &NdArray) -> f64 {
    if z.shape().len() != 2 || z.rows() == 0 {
        return 0.0;
    }
    let (n, h) = (z.rows(), z.row_len());
    let mut mean = vec![0.0; h];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let ss: f64 = (0..n)
        .map(|i| z.row(i).iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum();
    2.0 * n as f64 * ss
}

/// Centers all rows jointly and rescales them so `‖Z'‖_F² = N`, which
/// fixes `TPSD(Z') = 2N²`.
pub fn normalize_tpsd(batch: &EmbeddingBatch) -> Result<NormalizedEmbeddings> {
    let z = batch.rows();
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyPartition("embeddings"));
    }
    let mean = z.mean_rows()?;
    let zc = z.sub(&mean)?;
    let fro2 = zc.square().sum();
    // relative collapse threshold: rows identical up to rounding
    let scale_ref: f64 = mean.data().iter().map(|v| v * v).sum::<f64>().max(1.0);
    if !(fro2.item() > 1e-24 * n as f64 * scale_ref) {
        if !fro2.item().is_finite() {
            return Err(Error::NonFinite("embeddings passed to normalization".into()));
        }
        return Err(Error::CollapsedEmbeddings);
    }
    let frobenius = fro2.item().sqrt();
    let scale = fro2.sqrt()?.div(&Tensor::scalar((n as f64).sqrt()))?;
    let zn = zc.div(&scale)?;
    Ok(NormalizedEmbeddings {
        batch: EmbeddingBatch::new(zn, batch.counts[0], batch.counts[1], batch.counts[2])?,
        centroid: mean.data().to_vec(),
        frobenius,
    })
}

/// Mean distance loss on (normalized) embeddings:
/// `½ · mean_{z ∈ Z_test} (‖z - mean(Z_trn)‖ + ‖z - mean(Z_aug)‖)`.
///
/// With this scaling a perfectly aligned configuration has loss 1.
pub fn mean_distance_loss(batch: &EmbeddingBatch) -> Result<Tensor> {
    let trn = batch.part(Partition::Trn)?;
    let aug = batch.part(Partition::Aug)?;
    let test = batch.part(Partition::Test)?;
    let n_test = test.shape()[0] as f64;
    let d_trn = test.sub(&trn.mean_rows()?)?.l2norm_rows(NORM_EPS)?.sum();
    let d_aug = test.sub(&aug.mean_rows()?)?.l2norm_rows(NORM_EPS)?.sum();
    Ok(d_trn.add(&d_aug)?.scale(0.5 / n_test))
}

/// Loss of the four-point configuration `Z_trn = {0}`, `Z_aug = {2}`,
/// test rows `{u1, u2 + 2}`, after normalization.
pub fn appendix_configuration(u1: &Tensor, u2: &Tensor) -> Result<Tensor> {
    let c = |v: f64| Tensor::constant(NdArray::matrix(1, 1, vec![v]).expect("1x1"));
    let t1 = u1.reshape(&[1, 1])?;
    let t2 = u2.reshape(&[1, 1])?.add_scalar(2.0);
    let batch = EmbeddingBatch::new(Tensor::concat_rows(&[c(0.0), c(2.0), t1, t2])?, 1, 1, 2)?;
    mean_distance_loss(&normalize_tpsd(&batch)?.batch)
}

/// Closed form of [`appendix_configuration`] for `u1, u2 ∈ [-1, 1]`.
pub fn appendix_oracle(u1: f64, u2: f64) -> f64 {
    let num = u1.abs() + (u1 - 2.0).abs() + u2.abs() + (u2 + 2.0).abs();
    let den = (3.0 * u1 * u1 + 3.0 * u2 * u2 - 8.0 * u1 + 8.0 * u2 - 2.0 * u1 * u2 + 16.0).sqrt();
    num / den
}

/// Kernel bandwidth used by [`mmd`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Median pairwise distance over the union of both sets, held constant
    /// for differentiation. Falls back to 1 when the median is 0.
    Median,
    Fixed(f64),
}

fn pairwise_sq(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (na, nb) = (a.shape()[0], b.shape()[0]);
    let ra = a.square().sum_to(&[na, 1])?;
    let rb = b.square().sum_to(&[nb, 1])?.transpose()?;
    ra.add(&rb)?.sub(&a.matmul_t(b, false, true)?.scale(2.0))
}

/// Median of all pairwise distances between distinct rows of `z`.
pub fn median_distance(z: &NdArray) -> f64 {
    let n = z.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let k = d.len();
    if k % 2 == 1 {
        d[k / 2]
    } else {
        0.5 * (d[k / 2 - 1] + d[k / 2])
    }
}

/// Biased squared MMD with a Gaussian kernel `exp(-‖u-v‖²/2σ²)`.
pub fn mmd(za: &Tensor, zb: &Tensor, bandwidth: Bandwidth) -> Result<Tensor> {
    if za.shape().len() != 2 || zb.shape().len() != 2 || za.shape()[1] != zb.shape()[1] {
        return Err(Error::shape("mmd", za.shape(), zb.shape()));
    }
    if za.shape()[0] == 0 || zb.shape()[0] == 0 {
        return Err(Error::EmptyPartition("mmd input"));
    }
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) if s > 0.0 => s,
        Bandwidth::Fixed(s) => {
            return Err(Error::Invalid(format!("bandwidth must be positive, got {s}")))
        }
        Bandwidth::Median => {
            let union = NdArray::new(
                vec![za.shape()[0] + zb.shape()[0], za.shape()[1]],
                za.data().iter().chain(zb.data()).copied().collect(),
            )?;
            let m = median_distance(&union);
            if m > 0.0 && m.is_finite() {
                m
            } else {
                1.0
            }
        }
    };
    let k = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
        Ok(pairwise_sq(a, b)?.scale(-0.5 / (sigma * sigma)).exp().mean())
    };
    k(za, za)?.add(&k(zb, zb)?)?.sub(&k(za, zb)?.scale(2.0))
}

/// Which validation loss the tuner minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValLossKind {
    /// Normalized mean distance loss.
    MeanDistance,
    /// MMD between training-plus-augmented and test embeddings, after
    /// normalization.
    MmdNormalized,
    /// The same MMD on raw embeddings.
    MmdRaw,
}

/// Evaluates the selected validation loss on a batch.
pub fn validation_loss(kind: ValLossKind, batch: &EmbeddingBatch) -> Result<Tensor> {
    let mmd_of = |b: &EmbeddingBatch| -> Result<Tensor> {
        let n_src = b.count(Partition::Trn) + b.count(Partition::Aug);
        if b.count(Partition::Trn) == 0 || b.count(Partition::Aug) == 0 {
            return Err(Error::EmptyPartition("trn/aug"));
        }
        let src = b.rows().slice_rows(0, n_src)?;
        mmd(&src, &b.part(Partition::Test)?, Bandwidth::Median)
    };
    match kind {
        ValLossKind::MeanDistance => mean_distance_loss(&normalize_tpsd(batch)?.batch),
        ValLossKind::MmdNormalized => mmd_of(&normalize_tpsd(batch)?.batch),
        ValLossKind::MmdRaw => mmd_of(batch),
    }
}

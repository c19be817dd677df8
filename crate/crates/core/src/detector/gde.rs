use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::NdArray;

/// Covariance shrinkage toward a scaled identity.
pub const SHRINKAGE: f64 = 0.1;
/// Smallest covariance eigenvalue kept after shrinkage.
pub const EIG_FLOOR: f64 = 1e-6;

/// Gaussian density fitted to training embeddings.
#[derive(Clone, Debug)]
pub struct GdeModel {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    inv: DMatrix<f64>,
    log_det: f64,
}

/// Row mean and sample covariance (denominator `N - 1`) of `z`.
pub fn sample_covariance(z: &NdArray) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.shape().len() != 2 {
        return Err(Error::shape("fit_gde", z.shape(), &[0, 0]));
    }
    let (n, h) = (z.rows(), z.row_len());
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "a Gaussian fit needs at least 2 rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; h];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; h * h];
    for i in 0..n {
        let d: Vec<f64> = z.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for a in 0..h {
            for b in a..h {
                cov[a * h + b] += d[a] * d[b];
            }
        }
    }
    for a in 0..h {
        for b in a..h {
            let v = cov[a * h + b] / (n - 1) as f64;
            cov[a * h + b] = v;
            cov[b * h + a] = v;
        }
    }
    Ok((mean, cov))
}

/// Fits a Gaussian with the default shrinkage.
pub fn fit_gde(z: &NdArray) -> Result<GdeModel> {
    fit_gde_with(z, SHRINKAGE)
}

/// Fits a Gaussian with covariance `(1-ρ)·Σ + ρ·tr(Σ)/h·I`, eigenvalues
/// floored at [`EIG_FLOOR`].
pub fn fit_gde_with(z: &NdArray, rho: f64) -> Result<GdeModel> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Invalid(format!("shrinkage must lie in [0, 1], got {rho}")));
    }
    let (mean, cov) = sample_covariance(z)?;
    if mean.iter().chain(&cov).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings passed to the Gaussian fit".into()));
    }
    let h = mean.len();
    let sigma = DMatrix::from_row_slice(h, h, &cov);
    let target = sigma.trace() / h as f64;
    let shrunk = sigma * (1.0 - rho) + DMatrix::identity(h, h) * (rho * target);
    let eig = SymmetricEigen::new(shrunk);
    let vals = eig.eigenvalues.map(|l| l.max(EIG_FLOOR));
    let q = &eig.eigenvectors;
    let cov = q * DMatrix::from_diagonal(&vals) * q.transpose();
    let inv = q * DMatrix::from_diagonal(&vals.map(|l| 1.0 / l)) * q.transpose();
    // symmetrize away rounding in the reconstruction
    let cov = (&cov + cov.transpose()) * 0.5;
    let inv = (&inv + inv.transpose()) * 0.5;
    Ok(GdeModel {
        mean: DVector::from_vec(mean),
        cov,
        inv,
        log_det: vals.iter().map(|l| l.ln()).sum(),
    })
}

impl GdeModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Shrunk covariance, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        self.cov.transpose().as_slice().to_vec()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Negative log-likelihood `½·dᵀΣ⁻¹d + ½·log det Σ + (h/2)·log 2π`.
    pub fn score(&self, z: &[f64]) -> f64 {
        let d = DVector::from_iterator(self.dim(), z.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let quad = d.dot(&(&self.inv * &d));
        0.5 * quad + 0.5 * self.log_det + 0.5 * self.dim() as f64 * (2.0 * PI).ln()
    }

    /// Scores every row of `z`, in row order.
    pub fn score_rows(&self, z: &NdArray) -> Result<Vec<f64>> {
        if z.shape().len() != 2 || z.row_len() != self.dim() {
            return Err(Error::shape("anomaly_score", z.shape(), &[0, self.dim()]));
        }
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            Ok((0..z.rows()).into_par_iter().map(|i| self.score(z.row(i))).collect())
        }
        #[cfg(not(feature = "parallel"))]
        Ok((0..z.rows()).map(|i| self.score(z.row(i))).collect())
    }
}

/// Sample variance of the test scores, `S(θ)`.
pub fn score_variance(scores: &[f64]) -> Result<f64> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "score variance needs at least 2 scores, got {n}"
        )));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    Ok(scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64)
}

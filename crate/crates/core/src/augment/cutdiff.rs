use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{NdArray, Tensor};

/// Regularizer added to `L·Lᵀ` before inversion.
pub const CUTDIFF_EPS: f64 = 1e-6;

/// Grid `g_ij = (i/m, j/m)` with `i, j ∈ [1, m]`, shape `[m, m, 2]`.
/// The first coordinate follows the row index.
pub fn patch_grid(m: usize) -> NdArray {
    let mut data = Vec::with_capacity(m * m * 2);
    for i in 1..=m {
        for j in 1..=m {
            data.push(i as f64 / m as f64);
            data.push(j as f64 / m as f64);
        }
    }
    NdArray::new(vec![m, m, 2], data).expect("grid shape")
}

/// Draws a patch center uniformly from `[0, 1]²`.
pub fn sample_center<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    [rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)]
}

/// Patch mask `p_ij = exp(-(g_ij - μ)ᵀ (L·Lᵀ + εI)⁻¹ (g_ij - μ))` for each
/// center, as an `[N, m·m]` tensor differentiable in `a = [l00, l10, l11]`.
pub fn cutdiff_mask(a: &Tensor, side: usize, centers: &[[f64; 2]]) -> Result<Tensor> {
    if a.shape() != [3] {
        return Err(Error::shape("cutdiff", a.shape(), &[3]));
    }
    if let Some(mu) = centers
        .iter()
        .find(|mu| !mu.iter().all(|v| (0.0..=1.0).contains(v)))
    {
        return Err(Error::Domain {
            op: "cutdiff",
            detail: format!("patch center {mu:?} outside [0, 1]²"),
        });
    }
    let v = a.data();
    let (l0, l1, l2) = (v[0], v[1], v[2]);
    let m00 = l0 * l0 + CUTDIFF_EPS;
    let m01 = l0 * l1;
    let m11 = l1 * l1 + l2 * l2 + CUTDIFF_EPS;
    let det = m00 * m11 - m01 * m01;
    if !(det.is_finite() && det > CUTDIFF_EPS * CUTDIFF_EPS * 1e-3) {
        return Err(Error::Singular(format!(
            "L·Lᵀ + εI is singular for L = [[{l0}, 0], [{l1}, {l2}]]"
        )));
    }

    // entries of M and its closed-form inverse, as differentiable scalars
    let (a0, a1, a2) = (a.pick(0)?, a.pick(1)?, a.pick(2)?);
    let t00 = a0.square().add_scalar(CUTDIFF_EPS);
    let t01 = a0.mul(&a1)?;
    let t11 = a1.square().add(&a2.square())?.add_scalar(CUTDIFF_EPS);
    let tdet = t00.mul(&t11)?.sub(&t01.square())?;
    let inv_a = t11.div(&tdet)?;
    let inv_b = t01.neg().div(&tdet)?;
    let inv_c = t00.div(&tdet)?;

    let n = centers.len();
    let p = side * side;
    let (mut dx2, mut dxy, mut dy2) = (
        Vec::with_capacity(n * p),
        Vec::with_capacity(n * p),
        Vec::with_capacity(n * p),
    );
    for mu in centers {
        for i in 1..=side {
            let dx = i as f64 / side as f64 - mu[0];
            for j in 1..=side {
                let dy = j as f64 / side as f64 - mu[1];
                dx2.push(dx * dx);
                dxy.push(2.0 * dx * dy);
                dy2.push(dy * dy);
            }
        }
    }
    let c = |d: Vec<f64>| Tensor::constant(NdArray::matrix(n, p, d).expect("mask shape"));
    let quad = c(dx2)
        .mul(&inv_a)?
        .add(&c(dxy).mul(&inv_b)?)?
        .add(&c(dy2).mul(&inv_c)?)?;
    Ok(quad.neg().exp())
}

/// Batched CutDiff on `[N, m·m·c]` rows: `x̃ = clamp01(x - p)`, one center per row.
pub fn cutdiff_batch(
    x: &Tensor,
    a: &Tensor,
    side: usize,
    channels: usize,
    centers: &[[f64; 2]],
) -> Result<Tensor> {
    let n = centers.len();
    let p = side * side;
    if x.shape() != [n, p * channels] {
        return Err(Error::shape("cutdiff", x.shape(), &[n, p * channels]));
    }
    let mask = cutdiff_mask(a, side, centers)?.reshape(&[n, p, 1])?;
    x.reshape(&[n, p, channels])?
        .sub(&mask)?
        .clamp01()
        .reshape(&[n, p * channels])
}

/// CutDiff of a single image with a fixed center.
pub fn cutdiff(x: &Image, a: &[f64; 3], mu: [f64; 2]) -> Result<Image> {
    let rows = Tensor::constant(NdArray::matrix(1, x.len(), x.pixels().to_vec())?);
    let a = Tensor::constant(NdArray::vector(a.to_vec()));
    let out = cutdiff_batch(&rows, &a, x.side(), x.channels(), &[mu])?;
    Image::from_flat(x.side(), x.channels(), out.data())
}

/// CutDiff of a single image with a center drawn from `rng`.
pub fn cutdiff_random<R: Rng + ?Sized>(x: &Image, a: &[f64; 3], rng: &mut R) -> Result<Image> {
    cutdiff(x, a, sample_center(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn center_pixel_is_erased() {
        // μ on the grid point (i, j) = (4, 6) of an 8×8 image
        let x = Image::filled(8, 1, 0.7);
        let out = cutdiff(&x, &[0.1, 0.0, 0.1], [0.5, 0.75]).unwrap();
        assert_eq!(out.get(3, 5, 0), 0.0);
    }

    #[test]
    fn unit_mahalanobis_distance() {
        // pixel one grid step (0.1) away from μ when m = 10
        let x = Image::filled(10, 1, 0.9);
        let out = cutdiff(&x, &[0.1, 0.0, 0.1], [0.5, 0.5]).unwrap();
        let p = (-0.01_f64 / (0.01 + CUTDIFF_EPS)).exp();
        assert!((out.get(5, 4, 0) - (0.9 - p)).abs() < 1e-12);
        assert!((p - (-1.0_f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn far_field_is_untouched() {
        let x = Image::filled(10, 1, 0.9);
        let out = cutdiff(&x, &[0.1, 0.0, 0.1], [0.0, 0.0]).unwrap();
        // (1.0, 0.0) is at distance 1 from μ, plus a tenth on the column axis
        assert!((out.get(9, 0, 0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn center_outside_unit_square_fails() {
        let x = Image::filled(4, 1, 0.5);
        assert!(matches!(
            cutdiff(&x, &[0.1, 0.0, 0.1], [1.2, 0.5]),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn differentiable_in_a_and_x() {
        let tape = Tape::new();
        let x = tape.leaf(NdArray::matrix(1, 16, vec![0.8; 16]).unwrap());
        let a = tape.leaf(NdArray::vector(vec![0.3, 0.1, 0.2]));
        let y = cutdiff_batch(&x, &a, 4, 1, &[[0.5, 0.5]]).unwrap().sum();
        let g = tape.grad(&y, &[x, a], false).unwrap();
        assert!(g[1].data().iter().any(|v| *v != 0.0));
        assert!(g[0].data().iter().all(|v| *v == 0.0 || *v == 1.0));
    }
}

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{NdArray, Tensor};

/// Pixel-space center of an image of side `m`.
fn center(m: usize) -> f64 {
    (m as f64 - 1.0) / 2.0
}

/// Source coordinates of a rotation about the image center, as normalized
/// `(row, col)` pairs in `[-1, 1]²`, shape `[m, m, 2]`.
///
/// Output pixel `(u, v)` (column and row, centered and normalized) reads
/// from `R(angle)·(u, v)`.
pub fn affine_grid(angle: f64, m: usize) -> Result<NdArray> {
    if m < 2 {
        return Err(Error::Invalid(format!("affine grid needs m >= 2, got {m}")));
    }
    if !angle.is_finite() {
        return Err(Error::NonFinite(format!("rotation angle {angle}")));
    }
    let c0 = center(m);
    let (s, c) = angle.sin_cos();
    let mut data = Vec::with_capacity(m * m * 2);
    for i in 0..m {
        let v = (i as f64 - c0) / c0;
        for j in 0..m {
            let u = (j as f64 - c0) / c0;
            data.push(s * u + c * v);
            data.push(c * u - s * v);
        }
    }
    NdArray::new(vec![m, m, 2], data)
}

/// Bilinear sampling of `[N, m·m·c]` rows at pixel-space source positions
/// (`rows`, `cols`, each `[m·m]`), zero outside the source.
fn sample_pixels(
    x: &Tensor,
    side: usize,
    channels: usize,
    rows: &Tensor,
    cols: &Tensor,
) -> Result<Tensor> {
    let p = side * side;
    if x.shape().len() != 2 || x.shape()[1] != p * channels {
        return Err(Error::shape("bilinear_sample", x.shape(), &[0, p * channels]));
    }
    if rows.shape() != [p] || cols.shape() != [p] {
        return Err(Error::shape("bilinear_sample", rows.shape(), &[p]));
    }
    let floor_r: Vec<f64> = rows.data().iter().map(|v| v.floor()).collect();
    let floor_c: Vec<f64> = cols.data().iter().map(|v| v.floor()).collect();
    let wr = rows.sub(&Tensor::constant(NdArray::vector(floor_r.clone())))?;
    let wc = cols.sub(&Tensor::constant(NdArray::vector(floor_c.clone())))?;

    let expand = |w: Tensor| -> Result<Tensor> {
        w.reshape(&[p, 1])?
            .broadcast_to(&[p, channels])?
            .reshape(&[p * channels])
    };
    let one_minus = |w: &Tensor| w.neg().add_scalar(1.0);
    let corners = [
        (0.0, 0.0, one_minus(&wr).mul(&one_minus(&wc))?),
        (0.0, 1.0, one_minus(&wr).mul(&wc)?),
        (1.0, 0.0, wr.mul(&one_minus(&wc))?),
        (1.0, 1.0, wr.mul(&wc)?),
    ];
    let mut out: Option<Tensor> = None;
    for (dr, dc, w) in corners {
        let mut idx = Vec::with_capacity(p * channels);
        for k in 0..p {
            let (r, c) = (floor_r[k] + dr, floor_c[k] + dc);
            let inside = r >= 0.0 && c >= 0.0 && r < side as f64 && c < side as f64;
            for ch in 0..channels {
                idx.push(inside.then(|| (r as usize * side + c as usize) * channels + ch));
            }
        }
        let term = x.gather_cols_rc(Rc::new(idx))?.mul(&expand(w)?)?;
        out = Some(match out {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    Ok(out.expect("four corners"))
}

/// Bilinear sampling at normalized `(row, col)` coordinates `[m, m, 2]`.
pub fn bilinear_sample(x: &Tensor, side: usize, channels: usize, coords: &Tensor) -> Result<Tensor> {
    let p = side * side;
    if coords.shape() != [side, side, 2] {
        return Err(Error::shape("bilinear_sample", coords.shape(), &[side, side, 2]));
    }
    let c0 = center(side);
    let flat = coords.reshape(&[p, 2])?;
    let to_pixel = |k: usize| -> Result<Tensor> {
        Ok(flat
            .gather_cols(vec![Some(k)])?
            .reshape(&[p])?
            .scale(c0)
            .add_scalar(c0))
    };
    sample_pixels(x, side, channels, &to_pixel(0)?, &to_pixel(1)?)
}

/// Rotates every `[N, m·m·c]` row by `angle` (a `[1]` tensor) about the
/// image center, differentiable in both the pixels and the angle.
///
/// Source positions are computed directly in pixel space, so angle 0
/// reproduces the input exactly.
pub fn rotate_batch(x: &Tensor, angle: &Tensor, side: usize, channels: usize) -> Result<Tensor> {
    if angle.len() != 1 {
        return Err(Error::shape("rotate", angle.shape(), &[1]));
    }
    if !angle.item().is_finite() {
        return Err(Error::NonFinite(format!("rotation angle {}", angle.item())));
    }
    let p = side * side;
    let c0 = center(side);
    let mut u = Vec::with_capacity(p);
    let mut v = Vec::with_capacity(p);
    for i in 0..side {
        for j in 0..side {
            u.push(j as f64 - c0);
            v.push(i as f64 - c0);
        }
    }
    let (u, v) = (
        Tensor::constant(NdArray::vector(u)),
        Tensor::constant(NdArray::vector(v)),
    );
    let angle = angle.reshape(&[1])?;
    let (s, c) = (angle.sin(), angle.cos());
    let cols = c.mul(&u)?.sub(&s.mul(&v)?)?.add_scalar(c0);
    let rows = s.mul(&u)?.add(&c.mul(&v)?)?.add_scalar(c0);
    sample_pixels(x, side, channels, &rows, &cols)
}

/// Rotation of a single image.
pub fn rotate(x: &Image, angle: f64) -> Result<Image> {
    let rows = Tensor::constant(NdArray::matrix(1, x.len(), x.pixels().to_vec())?);
    let out = rotate_batch(&rows, &Tensor::scalar(angle), x.side(), x.channels())?;
    Image::from_flat(x.side(), x.channels(), out.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn img(side: usize, px: &[f64]) -> Image {
        Image::new(side, 1, px.to_vec()).unwrap()
    }

    #[test]
    fn zero_angle_is_exact_identity() {
        let px: Vec<f64> = (0..25).map(|k| (k as f64 * 0.37).fract()).collect();
        let x = img(5, &px);
        assert_eq!(rotate(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn half_turn_reverses_pixels() {
        let x = img(2, &[0.1, 0.2, 0.3, 0.4]);
        let y = rotate(&x, PI).unwrap();
        for (a, b) in y.pixels().iter().zip([0.4, 0.3, 0.2, 0.1]) {
            assert!((a - b).abs() < 1e-12, "{:?}", y.pixels());
        }
    }

    #[test]
    fn grid_conventions() {
        let g0 = affine_grid(0.0, 3).unwrap();
        assert_eq!(&g0.data()[..2], &[-1.0, -1.0]);
        let gpi = affine_grid(PI, 3).unwrap();
        for (a, b) in gpi.data().iter().zip(g0.data()) {
            assert!((a + b).abs() < 1e-12);
        }
        let g = affine_grid(FRAC_PI_2, 3).unwrap();
        assert!((g.data()[0] + 1.0).abs() < 1e-12 && (g.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_sampling_basics() {
        let x = Tensor::constant(NdArray::matrix(1, 4, vec![0.0, 1.0, 0.25, 0.75]).unwrap());
        let at = |r: f64, c: f64| {
            let mut d = Vec::new();
            for _ in 0..4 {
                d.extend([r, c]);
            }
            let coords = Tensor::constant(NdArray::new(vec![2, 2, 2], d).unwrap());
            bilinear_sample(&x, 2, 1, &coords).unwrap().data()[0]
        };
        assert_eq!(at(-1.0, 1.0), 1.0);
        assert!((at(-1.0, 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(at(5.0, -7.0), 0.0);
    }
}

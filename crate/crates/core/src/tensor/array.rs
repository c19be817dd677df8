//! Plain dense storage and the numeric kernels behind each primitive.

use crate::error::{Error, Result};

/// Row-major dense array of `f64`. `Send + Sync`, no tape attached.
#[derive(Clone, Debug, PartialEq)]
pub struct NdArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl NdArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn eye(n: usize) -> Self {
        let mut a = Self::zeros(&[n, n]);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single element of a one-element array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all extents after the first.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub(crate) fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Result shape of broadcasting `a` against `b`, numpy rules aligned from the right.
pub(crate) fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = if k + a.len() >= rank { a[k + a.len() - rank] } else { 1 };
        let db = if k + b.len() >= rank { b[k + b.len() - rank] } else { 1 };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(op, a, b)),
        };
    }
    Ok(out)
}

/// Strides of `src` viewed inside `target`, zero along broadcast axes.
fn broadcast_strides(src: &[usize], target: &[usize]) -> Vec<usize> {
    let rank = target.len();
    let off = rank - src.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for k in (0..src.len()).rev() {
        if src[k] != 1 {
            strides[k + off] = acc;
        }
        acc *= src[k];
    }
    strides
}

fn can_broadcast(src: &[usize], target: &[usize]) -> bool {
    src.len() <= target.len()
        && src
            .iter()
            .rev()
            .zip(target.iter().rev())
            .all(|(&s, &t)| s == t || s == 1)
}

/// Calls `f(dst_index, src_index)` for every element of `target`.
fn for_each_broadcast(src: &[usize], target: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = broadcast_strides(src, target);
    let n: usize = target.iter().product();
    if n == 0 {
        return;
    }
    let rank = target.len();
    let mut idx = vec![0usize; rank];
    let mut s = 0usize;
    for d in 0..n {
        f(d, s);
        for k in (0..rank).rev() {
            idx[k] += 1;
            s += strides[k];
            if idx[k] < target[k] {
                break;
            }
            s -= strides[k] * target[k];
            idx[k] = 0;
        }
    }
}

pub(crate) fn broadcast_to(a: &NdArray, target: &[usize]) -> Result<NdArray> {
    if !can_broadcast(&a.shape, target) {
        return Err(Error::shape("broadcast", &a.shape, target));
    }
    let n: usize = target.iter().product();
    let mut data = vec![0.0; n];
    for_each_broadcast(&a.shape, target, |d, s| data[d] = a.data[s]);
    Ok(NdArray {
        shape: target.to_vec(),
        data,
    })
}

/// Sums `a` down to `target`, the adjoint of [`broadcast_to`].
pub(crate) fn sum_to(a: &NdArray, target: &[usize]) -> Result<NdArray> {
    if !can_broadcast(target, &a.shape) {
        return Err(Error::shape("sum_to", &a.shape, target));
    }
    let n: usize = target.iter().product();
    let mut data = vec![0.0; n];
    for_each_broadcast(target, &a.shape, |d, s| data[s] += a.data[d]);
    Ok(NdArray {
        shape: target.to_vec(),
        data,
    })
}

/// `op(a) · op(b)` for rank-2 arrays, where `op` optionally transposes.
pub(crate) fn matmul(a: &NdArray, b: &NdArray, ta: bool, tb: bool) -> Result<NdArray> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let (ar, ac) = (a.shape[0], a.shape[1]);
    let (br, bc) = (b.shape[0], b.shape[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: extents and strides describe the owned buffers exactly.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Ok(NdArray {
        shape: vec![m, n],
        data: out,
    })
}

pub(crate) fn transpose(a: &NdArray) -> Result<NdArray> {
    if a.shape.len() != 2 {
        return Err(Error::shape("transpose", &a.shape, &[]));
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = a.data[i * c + j];
        }
    }
    Ok(NdArray {
        shape: vec![c, r],
        data,
    })
}

pub(crate) fn concat_rows(parts: &[&NdArray]) -> Result<NdArray> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Invalid("concat_rows of nothing".into()))?;
    let tail = &first.shape[1..];
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.shape.is_empty() || &p.shape[1..] != tail {
            return Err(Error::shape("concat_rows", &first.shape, &p.shape));
        }
        rows += p.shape[0];
        data.extend_from_slice(&p.data);
    }
    let mut shape = first.shape.clone();
    shape[0] = rows;
    Ok(NdArray { shape, data })
}

pub(crate) fn slice_rows(a: &NdArray, start: usize, end: usize) -> Result<NdArray> {
    if a.shape.is_empty() || start > end || end > a.shape[0] {
        return Err(Error::shape("slice_rows", &a.shape, &[start, end]));
    }
    let w = a.row_len();
    let mut shape = a.shape.clone();
    shape[0] = end - start;
    Ok(NdArray {
        shape,
        data: a.data[start * w..end * w].to_vec(),
    })
}

/// Column gather on a `[rows, cols]` array; `None` yields zero.
pub(crate) fn gather_cols(a: &NdArray, idx: &[Option<usize>]) -> Result<NdArray> {
    if a.shape.len() != 2 {
        return Err(Error::shape("gather_cols", &a.shape, &[idx.len()]));
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    if let Some(bad) = idx.iter().flatten().find(|&&j| j >= c) {
        return Err(Error::shape("gather_cols", &a.shape, &[*bad]));
    }
    let q = idx.len();
    let mut data = vec![0.0; r * q];
    for i in 0..r {
        let row = &a.data[i * c..(i + 1) * c];
        let out = &mut data[i * q..(i + 1) * q];
        for (o, j) in out.iter_mut().zip(idx) {
            if let Some(j) = j {
                *o = row[*j];
            }
        }
    }
    Ok(NdArray {
        shape: vec![r, q],
        data,
    })
}

/// Adjoint of [`gather_cols`]: accumulates columns of `a` into a `[rows, cols]` array.
pub(crate) fn scatter_cols(a: &NdArray, idx: &[Option<usize>], cols: usize) -> Result<NdArray> {
    if a.shape.len() != 2 || a.shape[1] != idx.len() {
        return Err(Error::shape("scatter_cols", &a.shape, &[idx.len()]));
    }
    let r = a.shape[0];
    let q = idx.len();
    let mut data = vec![0.0; r * cols];
    for i in 0..r {
        let src = &a.data[i * q..(i + 1) * q];
        let out = &mut data[i * cols..(i + 1) * cols];
        for (v, j) in src.iter().zip(idx) {
            if let Some(j) = j {
                out[*j] += v;
            }
        }
    }
    Ok(NdArray {
        shape: vec![r, cols],
        data,
    })
}

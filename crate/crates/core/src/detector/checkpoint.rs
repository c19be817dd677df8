use std::fs;
use std::path::Path;

use super::EncoderParams;
use crate::error::{Error, Result};
use crate::io::{check_magic, read_array, read_u64, write_array, write_u64, MAGIC};

pub const CHECKPOINT_VERSION: u64 = 1;

/// Writes magic, version, the layer sizes and every parameter tensor.
pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    let mut out = MAGIC.to_vec();
    write_u64(&mut out, CHECKPOINT_VERSION)?;
    write_u64(&mut out, params.dims().len() as u64)?;
    for &d in params.dims() {
        write_u64(&mut out, d as u64)?;
    }
    write_u64(&mut out, params.tensors().len() as u64)?;
    for t in params.tensors() {
        write_array(&mut out, t)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let bytes = fs::read(path)?;
    let fail = |d: String| Error::format(path, d);
    let mut r = bytes.as_slice();
    check_magic(&mut r).map_err(fail)?;
    let version = read_u64(&mut r, "version").map_err(fail)?;
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let n_dims = read_u64(&mut r, "layer count").map_err(fail)?;
    if n_dims > 64 {
        return Err(fail(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|k| read_u64(&mut r, &format!("layer size {k}")).map(|d| d as usize))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(fail)?;
    let n_tensors = read_u64(&mut r, "tensor count").map_err(fail)?;
    if n_tensors > 2 * n_dims + 2 {
        return Err(fail(format!("implausible tensor count {n_tensors}")));
    }
    let tensors = (0..n_tensors)
        .map(|k| read_array(&mut r, &format!("tensor {k}")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(fail)?;
    if !r.is_empty() {
        return Err(fail(format!("{} trailing bytes", r.len())));
    }
    EncoderParams::from_tensors(&dims, tensors).map_err(|e| fail(e.to_string()))
}

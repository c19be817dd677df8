//! Lossless binary tensor records.
//!
//! Layout: the 8-byte magic `STSSAD01`, then the rank as a little-endian
//! `u64`, one `u64` per extent, and the data as little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::NdArray;

pub const MAGIC: &[u8; 8] = b"STSSAD01";

/// Upper bound on rank and element count accepted when reading, so a
/// corrupt header cannot trigger a huge allocation.
const MAX_RANK: u64 = 16;
const MAX_ELEMS: u64 = 1 << 32;

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> std::result::Result<u64, String> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| format!("reading {what}: {e}"))?;
    Ok(u64::from_le_bytes(b))
}

/// Writes one tensor body (rank, extents, data) without the magic.
pub(crate) fn write_array<W: Write>(w: &mut W, a: &NdArray) -> Result<()> {
    write_u64(w, a.shape().len() as u64)?;
    for &d in a.shape() {
        write_u64(w, d as u64)?;
    }
    let mut buf = Vec::with_capacity(a.len() * 8);
    for v in a.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_array<R: Read>(r: &mut R, what: &str) -> std::result::Result<NdArray, String> {
    let rank = read_u64(r, &format!("{what} rank"))?;
    if rank > MAX_RANK {
        return Err(format!("{what}: implausible rank {rank}"));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut count: u64 = 1;
    for k in 0..rank {
        let d = read_u64(r, &format!("{what} extent {k}"))?;
        count = count.saturating_mul(d);
        shape.push(d as usize);
    }
    if count > MAX_ELEMS {
        return Err(format!("{what}: implausible element count {count}"));
    }
    let mut buf = vec![0u8; count as usize * 8];
    r.read_exact(&mut buf)
        .map_err(|e| format!("reading {what} data ({count} values): {e}"))?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    NdArray::new(shape, data).map_err(|e| format!("{what}: {e}"))
}

pub(crate) fn check_magic<R: Read>(r: &mut R) -> std::result::Result<(), String> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m).map_err(|e| format!("reading magic: {e}"))?;
    if &m != MAGIC {
        return Err(format!("bad magic {:?}", String::from_utf8_lossy(&m)));
    }
    Ok(())
}

pub fn encode_tensor(a: &NdArray) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    write_array(&mut out, a).expect("writing to a Vec cannot fail");
    out
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<NdArray, String> {
    let mut r = bytes;
    check_magic(&mut r)?;
    let a = read_array(&mut r, "tensor")?;
    if !r.is_empty() {
        return Err(format!("{} trailing bytes", r.len()));
    }
    Ok(a)
}

pub fn save_tensor(a: &NdArray, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(a))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<NdArray> {
    let bytes = fs::read(path)?;
    decode_tensor(&bytes).map_err(|d| Error::format(path, d))
}

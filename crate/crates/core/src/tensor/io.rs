//! CDT1 tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"CDT1" | u32 ndim | u32 dims[ndim] | u8 dtype (0 = f32) | f32 payload[numel]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{format_err, Result};

pub const MAGIC: &[u8; 4] = b"CDT1";
pub const DTYPE_F32: u8 = 0;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor<f32>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.ndim() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&[DTYPE_F32])?;
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn tensor_to_bytes(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.ndim() + 4 * t.numel());
    write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], location: &str, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| format_err(location, format!("truncated while reading {what}: {e}")))
}

pub(crate) fn read_u32<R: Read>(r: &mut R, location: &str, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, location, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, location: &str, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, location, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_u8<R: Read>(r: &mut R, location: &str, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, location, what)?;
    Ok(b[0])
}

/// Reads one CDT1 block. `location` names the block in error messages.
pub fn read_tensor<R: Read>(r: &mut R, location: &str) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, location, "magic")?;
    if &magic != MAGIC {
        return Err(format_err(location, format!("bad magic {magic:?}")));
    }
    let ndim = read_u32(r, location, "ndim")? as usize;
    if ndim > 8 {
        return Err(format_err(location, format!("implausible ndim {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u32(r, location, "dims")? as usize);
    }
    let dtype = read_u8(r, location, "dtype")?;
    if dtype != DTYPE_F32 {
        return Err(format_err(location, format!("unsupported dtype tag {dtype}")));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(format_err(location, format!("zero dimension in {shape:?}")));
    }
    let numel: usize = shape.iter().product();
    let mut raw = vec![0u8; numel * 4];
    read_exact(r, &mut raw, location, "payload")?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data).map_err(|e| format_err(location, e.to_string()))
}

pub fn save_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, tensor_to_bytes(t))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    read_tensor(&mut bytes.as_slice(), &path.display().to_string())
}

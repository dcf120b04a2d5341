//! Normal maps as binary PPM (P6) images.
//!
//! A normal `n` is unit-normalized and mapped channelwise to
//! `floor((n + 1) / 2 * 255 + 0.5)`, so (0, 0, 1) becomes (128, 128, 255).
//! Zero vectors map to (128, 128, 128).

use std::path::Path;

use crate::error::{format_err, shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
}

fn channel(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn normals_to_rgb(normals: &Tensor<f32>) -> Result<Image> {
    if normals.ndim() != 3 || normals.shape()[0] != 3 {
        return Err(shape_err("normals_to_rgb", format!("expected [3, H, W], got {:?}", normals.shape())));
    }
    let (h, w) = (normals.shape()[1], normals.shape()[2]);
    let plane = h * w;
    let d = normals.data();
    let mut rgb = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        let n = [d[p] as f64, d[plane + p] as f64, d[2 * plane + p] as f64];
        if n.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite normal at pixel {p}")));
        }
        let len = n.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit = if len > 0.0 { n.map(|v| v / len) } else { [0.0; 3] };
        rgb.extend(unit.map(channel));
    }
    Ok(Image { width: w, height: h, rgb })
}

pub fn write_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.rgb);
    out
}

/// Reads the P6 files this module writes (single whitespace separators, no comments).
pub fn parse_ppm(bytes: &[u8]) -> Result<Image> {
    let bad = |detail: &str| format_err("ppm", detail);
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos == start || pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
        pos += 1;
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit PPM is supported"));
    }
    let rgb = &bytes[pos..];
    if rgb.len() != 3 * width * height {
        return Err(bad("pixel data length does not match header"));
    }
    Ok(Image {
        width,
        height,
        rgb: rgb.to_vec(),
    })
}

pub fn render_normals(normals: &Tensor<f32>, path: &Path) -> Result<()> {
    let bytes = write_ppm(&normals_to_rgb(normals)?);
    std::fs::write(path, bytes)?;
    Ok(())
}

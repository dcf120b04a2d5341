use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Location in original-image pixel coordinates; integer values are pixel
/// centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub row: f64,
    pub col: f64,
}

impl Point {
    pub fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }
}

/// Precomputed corner indices and weights for sampling one feature map at a
/// set of points. Reused between the forward gather and the backward scatter.
#[derive(Debug, Clone)]
pub struct BilinearTaps {
    hf: usize,
    wf: usize,
    corners: Vec<[(usize, f64); 4]>,
}

fn axis(coord: f64, scale: f64, extent: usize) -> (usize, usize, f64) {
    let f = ((coord + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
    let lo = f.floor() as usize;
    let hi = (lo + 1).min(extent - 1);
    (lo, hi, f - lo as f64)
}

impl BilinearTaps {
    /// `scale` is feature-map size over image size; points must lie inside
    /// the image, `[0, H-1] x [0, W-1]`.
    pub fn new(hf: usize, wf: usize, points: &[Point], scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bilinear_sample: scale must be positive, got {scale}"
            )));
        }
        Self::for_image(hf, wf, hf as f64 / scale, wf as f64 / scale, points)
    }

    /// Same as [`new`](Self::new) with independent row and column scales
    /// derived from the image size.
    pub fn for_image(hf: usize, wf: usize, h_img: f64, w_img: f64, points: &[Point]) -> Result<Self> {
        let (scale_r, scale_c) = (hf as f64 / h_img, wf as f64 / w_img);
        let mut corners = Vec::with_capacity(points.len());
        for p in points {
            let inside = p.row >= 0.0 && p.col >= 0.0 && p.row <= h_img - 1.0 && p.col <= w_img - 1.0;
            if !inside {
                return Err(Error::OutOfBounds {
                    op: "bilinear_sample",
                    detail: format!(
                        "point ({}, {}) outside image {h_img}x{w_img}",
                        p.row, p.col
                    ),
                });
            }
            let (r0, r1, fr) = axis(p.row, scale_r, hf);
            let (c0, c1, fc) = axis(p.col, scale_c, wf);
            corners.push([
                (r0 * wf + c0, (1.0 - fr) * (1.0 - fc)),
                (r0 * wf + c1, (1.0 - fr) * fc),
                (r1 * wf + c0, fr * (1.0 - fc)),
                (r1 * wf + c1, fr * fc),
            ]);
        }
        Ok(Self { hf, wf, corners })
    }

    pub fn len(&self) -> usize {
        self.corners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corners.is_empty()
    }

    /// Writes point `i`, channel `c` to `out[rows[i] * stride + offset + c]`.
    pub fn gather<T: Scalar>(
        &self,
        featmap: &[T],
        channels: usize,
        out: &mut [T],
        stride: usize,
        offset: usize,
        rows: &[usize],
    ) {
        let plane = self.hf * self.wf;
        debug_assert_eq!(featmap.len(), channels * plane);
        for (taps, &r) in self.corners.iter().zip(rows) {
            let w = taps.map(|(idx, w)| (idx, T::of(w)));
            let row = &mut out[r * stride + offset..r * stride + offset + channels];
            for (c, dst) in row.iter_mut().enumerate() {
                let f = &featmap[c * plane..(c + 1) * plane];
                *dst = w[0].1 * f[w[0].0] + w[1].1 * f[w[1].0] + w[2].1 * f[w[2].0] + w[3].1 * f[w[3].0];
            }
        }
    }

    /// Adjoint of [`gather`](Self::gather): accumulates into `d_featmap`.
    pub fn scatter<T: Scalar>(
        &self,
        grad: &[T],
        channels: usize,
        stride: usize,
        offset: usize,
        rows: &[usize],
        d_featmap: &mut [T],
    ) {
        let plane = self.hf * self.wf;
        for (taps, &r) in self.corners.iter().zip(rows) {
            let row = &grad[r * stride + offset..r * stride + offset + channels];
            for (c, g) in row.iter().enumerate() {
                let f = &mut d_featmap[c * plane..(c + 1) * plane];
                for &(idx, w) in taps {
                    f[idx] += *g * T::of(w);
                }
            }
        }
    }
}

fn featmap_dims<T: Scalar>(featmap_shape: &[usize]) -> Result<(usize, usize, usize)> {
    if featmap_shape.len() != 3 {
        return Err(shape_err(
            "bilinear_sample",
            format!("featmap must be [C,H,W], got {featmap_shape:?}"),
        ));
    }
    Ok((featmap_shape[0], featmap_shape[1], featmap_shape[2]))
}

/// Samples `featmap[C,Hf,Wf]` at image-space points; returns `[P, C]`.
///
/// A point maps to feature coordinates as `(x + 0.5) * scale - 0.5` per axis
/// and is interpolated with edge clamping.
pub fn bilinear_sample<T: Scalar>(featmap: &Tensor<T>, points: &[Point], scale: f64) -> Result<Tensor<T>> {
    let (c, hf, wf) = featmap_dims::<T>(featmap.shape())?;
    if points.is_empty() {
        return Err(Error::InvalidArgument("bilinear_sample: no points".into()));
    }
    let taps = BilinearTaps::new(hf, wf, points, scale)?;
    let mut out = Tensor::zeros(&[points.len(), c]);
    let rows: Vec<usize> = (0..points.len()).collect();
    taps.gather(featmap.data(), c, out.data_mut(), c, 0, &rows);
    Ok(out)
}

pub fn bilinear_sample_backward<T: Scalar>(
    featmap_shape: &[usize],
    points: &[Point],
    scale: f64,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (c, hf, wf) = featmap_dims::<T>(featmap_shape)?;
    if grad.shape() != [points.len(), c] {
        return Err(shape_err(
            "bilinear_sample_backward",
            format!("grad {:?}, expected [{}, {c}]", grad.shape(), points.len()),
        ));
    }
    let taps = BilinearTaps::new(hf, wf, points, scale)?;
    let mut d = Tensor::zeros(featmap_shape);
    let rows: Vec<usize> = (0..points.len()).collect();
    taps.scatter(grad.data(), c, c, 0, &rows, d.data_mut());
    Ok(d)
}

//! Angular-error statistics for normal maps and class-averaged IoU.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const THRESHOLDS_DEG: [f64; 3] = [11.25, 22.5, 30.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalStats {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub rmse_deg: f64,
    pub pct_11_25: f64,
    pub pct_22_5: f64,
    pub pct_30: f64,
    pub n_pixels: usize,
}

impl NormalStats {
    /// Mean, Median, RMSE, 11.25, 22.5, 30.
    pub fn row(&self) -> [f64; 6] {
        [
            self.mean_deg,
            self.median_deg,
            self.rmse_deg,
            self.pct_11_25,
            self.pct_22_5,
            self.pct_30,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegStats {
    /// `None` marks a class with neither ground-truth nor predicted pixels.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
}

fn check_maps(op: &'static str, pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &Tensor<f32>) -> Result<usize> {
    if pred.ndim() != 3 || pred.shape()[0] != 3 || pred.shape() != gt.shape() {
        return Err(shape_err(
            op,
            format!("pred {:?} and gt {:?} must both be [3,H,W]", pred.shape(), gt.shape()),
        ));
    }
    if mask.shape() != &pred.shape()[1..] {
        return Err(shape_err(op, format!("mask {:?} vs maps {:?}", mask.shape(), pred.shape())));
    }
    Ok(mask.numel())
}

fn angle_deg(p: [f64; 3], g: [f64; 3]) -> f64 {
    let np = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let ng = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    if np == 0.0 || ng == 0.0 {
        return 90.0;
    }
    let cos = (p[0] * g[0] + p[1] * g[1] + p[2] * g[2]) / (np * ng);
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

fn errors_where(pred: &Tensor<f32>, gt: &Tensor<f32>, keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let plane = pred.shape()[1] * pred.shape()[2];
    let (p, g) = (pred.data(), gt.data());
    let at = |d: &[f32], i: usize| [d[i] as f64, d[plane + i] as f64, d[2 * plane + i] as f64];
    (0..plane)
        .filter(|&i| keep(i))
        .map(|i| angle_deg(at(p, i), at(g, i)))
        .collect()
}

/// Per-pixel angle in degrees between normalized `pred` and `gt` at mask
/// pixels, in row-major order. A zero-length vector scores 90.
pub fn angular_errors(pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Vec<f64>> {
    check_maps("angular_errors", pred, gt, mask)?;
    let m = mask.data();
    let errs = errors_where(pred, gt, |i| m[i] != 0.0);
    if errs.is_empty() {
        return Err(Error::InvalidArgument("angular_errors: mask has no valid pixel".into()));
    }
    Ok(errs)
}

/// The six statistics. A pixel counts toward a threshold when its error is
/// within it (`error <= t`); the median of an even count is the midpoint of
/// the two central values.
pub fn normal_stats(errors: &[f64]) -> Result<NormalStats> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("normal_stats: no errors".into()));
    }
    let n = errors.len();
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mean = errors.iter().sum::<f64>() / n as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let pct = |t: f64| 100.0 * errors.iter().filter(|&&e| e <= t).count() as f64 / n as f64;
    Ok(NormalStats {
        mean_deg: mean,
        median_deg: median,
        rmse_deg: rmse,
        pct_11_25: pct(THRESHOLDS_DEG[0]),
        pct_22_5: pct(THRESHOLDS_DEG[1]),
        pct_30: pct(THRESHOLDS_DEG[2]),
        n_pixels: n,
    })
}

/// Angular errors restricted to pixels where both `mask` and `region` are set.
pub fn region_errors(pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &Tensor<f32>, region: &Tensor<f32>) -> Result<Vec<f64>> {
    check_maps("region_stats", pred, gt, mask)?;
    if region.shape() != mask.shape() {
        return Err(shape_err("region_stats", format!("region {:?} vs mask {:?}", region.shape(), mask.shape())));
    }
    let (m, r) = (mask.data(), region.data());
    Ok(errors_where(pred, gt, |i| m[i] != 0.0 && r[i] != 0.0))
}

pub fn region_stats(pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &Tensor<f32>, region: &Tensor<f32>) -> Result<NormalStats> {
    let errs = region_errors(pred, gt, mask, region)?;
    if errs.is_empty() {
        return Err(Error::InvalidArgument("region_stats: region and mask do not intersect".into()));
    }
    normal_stats(&errs)
}

/// Intersection and union counts per class, accumulated over images.
#[derive(Debug, Clone, PartialEq)]
pub struct IouCounts {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
}

impl IouCounts {
    pub fn new(num_classes: usize) -> Self {
        Self {
            intersection: vec![0; num_classes],
            union: vec![0; num_classes],
        }
    }

    pub fn add(&mut self, pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &Tensor<f32>) -> Result<()> {
        if pred.shape() != gt.shape() || gt.shape() != mask.shape() {
            return Err(shape_err(
                "iou",
                format!("pred {:?}, gt {:?}, mask {:?}", pred.shape(), gt.shape(), mask.shape()),
            ));
        }
        let k = self.union.len();
        let class = |v: f32| -> Result<usize> {
            let c = v as usize;
            if v < 0.0 || v.fract() != 0.0 || c >= k {
                return Err(Error::InvalidArgument(format!("iou: class id {v} outside [0, {k})")));
            }
            Ok(c)
        };
        for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
            if m == 0.0 {
                continue;
            }
            let (p, g) = (class(p)?, class(g)?);
            if p == g {
                self.intersection[p] += 1;
                self.union[p] += 1;
            } else {
                self.union[p] += 1;
                self.union[g] += 1;
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> SegStats {
        let per_class_iou: Vec<Option<f64>> = self
            .intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect();
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let mean_iou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        SegStats { per_class_iou, mean_iou }
    }
}

/// Per-class IoU over mask pixels; classes with an empty union are absent
/// and excluded from the mean.
pub fn iou(pred: &Tensor<f32>, gt: &Tensor<f32>, num_classes: usize, mask: &Tensor<f32>) -> Result<SegStats> {
    let mut counts = IouCounts::new(num_classes);
    counts.add(pred, gt, mask)?;
    Ok(counts.stats())
}

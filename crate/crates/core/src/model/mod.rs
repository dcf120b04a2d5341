//! Scaled-down hypercolumn network ("MiniPixelNet").
//!
//! A stack of 3x3 conv + batchnorm + ReLU blocks (stride-2 at the start of
//! every block after the first) followed by 1x1 "fully connected" convs at
//! the coarsest scale. Features from a chosen set of layers are bilinearly
//! sampled at individual pixels, concatenated into a hypercolumn, and fed to
//! an MLP head that either regresses a vector (surface normals) or scores
//! classes (segmentation).

mod forward;
mod io;
mod spec;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Param, Point, Scalar, Tensor};

pub use forward::ForwardCache;
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use spec::{BackboneSpec, HeadKind, LayerInfo, TapSource, INPUT_TAP};

/// Batchnorm running-statistics momentum and epsilon.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Where a model's parameters came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Random,
    DistilledFrom(String),
    FinetunedFrom(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Random => write!(f, "random"),
            Provenance::DistilledFrom(id) => write!(f, "distilled-from:{id}"),
            Provenance::FinetunedFrom(id) => write!(f, "finetuned-from:{id}"),
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "random" {
            return Ok(Provenance::Random);
        }
        if let Some(id) = s.strip_prefix("distilled-from:") {
            return Ok(Provenance::DistilledFrom(id.to_string()));
        }
        if let Some(id) = s.strip_prefix("finetuned-from:") {
            return Ok(Provenance::FinetunedFrom(id.to_string()));
        }
        Err(Error::InvalidArgument(format!("unknown provenance tag `{s}`")))
    }
}

impl Serialize for Provenance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub name: String,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

/// Parameters, batchnorm statistics and provenance of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T = f32> {
    pub spec: BackboneSpec,
    pub convs: Vec<ConvLayer<T>>,
    pub head: Vec<LinearLayer<T>>,
    pub provenance: Provenance,
}

/// Sparse set of pixels drawn from a batch of images.
#[derive(Debug, Clone, Default)]
pub struct PixelBatch {
    /// Index into the image batch, one per pixel.
    pub image_indices: Vec<usize>,
    pub coords: Vec<Point>,
    pub targets: Targets,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum Targets {
    #[default]
    None,
    /// `[P, out_dim]`.
    Regression(Tensor<f32>),
    Classes(Vec<usize>),
}

impl PixelBatch {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn gaussian<T: Scalar>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(std * rng.normal()))
}

fn head_layers<T: Scalar>(spec: &BackboneSpec, seed: u64, stream_base: u64) -> Vec<LinearLayer<T>> {
    let mut dims = vec![spec.hypercolumn_dim()];
    dims.extend(&spec.head_hidden);
    dims.push(spec.out_dim);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let mut rng = Rng::derive(seed, stream_base + i as u64);
            LinearLayer {
                weight: Param::new(gaussian(&[w[1], w[0]], spec.init_std, &mut rng)),
                bias: Param::new(Tensor::zeros(&[w[1]])),
            }
        })
        .collect()
}

/// Stream index of the first head layer; backbone layers use 0, 1, 2, ...
const HEAD_STREAM: u64 = 1 << 20;

/// Fresh model: conv and linear weights ~ N(0, init_std), zero biases,
/// unit gamma, zero beta, running statistics (0, 1).
pub fn init_model(spec: &BackboneSpec, seed: u64) -> Result<ModelState> {
    init_model_as::<f32>(spec, seed)
}

pub fn init_model_as<T: Scalar>(spec: &BackboneSpec, seed: u64) -> Result<ModelState<T>> {
    spec.validate()?;
    let convs = spec
        .conv_layers()
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let mut rng = Rng::derive(seed, i as u64);
            ConvLayer {
                weight: Param::new(gaussian(
                    &[l.out_channels, l.in_channels, l.kernel, l.kernel],
                    spec.init_std,
                    &mut rng,
                )),
                bias: Param::new(Tensor::zeros(&[l.out_channels])),
                gamma: Param::new(Tensor::full(&[l.out_channels], T::one())),
                beta: Param::new(Tensor::zeros(&[l.out_channels])),
                running_mean: Tensor::zeros(&[l.out_channels]),
                running_var: Tensor::full(&[l.out_channels], T::one()),
                name: l.name,
                stride: l.stride,
                pad: l.pad,
            }
        })
        .collect();
    Ok(ModelState {
        spec: spec.clone(),
        convs,
        head: head_layers(spec, seed, HEAD_STREAM),
        provenance: Provenance::Random,
    })
}

impl<T: Scalar> ModelState<T> {
    /// All trainable parameters in a fixed order: per conv layer weight,
    /// bias, gamma, beta; then per head layer weight, bias.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.extend([&mut c.weight, &mut c.bias, &mut c.gamma, &mut c.beta]);
        }
        for l in &mut self.head {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend([&c.weight, &c.bias, &c.gamma, &c.beta]);
        }
        for l in &self.head {
            out.extend([&l.weight, &l.bias]);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn reset_momentum(&mut self) {
        for p in self.params_mut() {
            p.momentum_buf.fill(T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.all_finite())
    }

    /// Replace the MLP head with a freshly initialized one for a new task,
    /// keeping the backbone untouched.
    pub fn reinit_head(&mut self, out_dim: usize, kind: HeadKind, seed: u64) -> Result<()> {
        let mut spec = self.spec.clone();
        spec.out_dim = out_dim;
        spec.head_kind = kind;
        spec.validate()?;
        self.head = head_layers(&spec, seed, HEAD_STREAM);
        self.spec = spec;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            spec: self.spec.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| ConvLayer {
                    name: c.name.clone(),
                    stride: c.stride,
                    pad: c.pad,
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                    gamma: c.gamma.cast(),
                    beta: c.beta.cast(),
                    running_mean: c.running_mean.cast(),
                    running_var: c.running_var.cast(),
                })
                .collect(),
            head: self
                .head
                .iter()
                .map(|l| LinearLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            provenance: self.provenance.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_tags_roundtrip() {
        for p in [
            Provenance::Random,
            Provenance::DistilledFrom("00ab".into()),
            Provenance::FinetunedFrom("ffee".into()),
        ] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
        assert!("copied".parse::<Provenance>().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let spec = BackboneSpec::default();
        let a = init_model(&spec, 3).unwrap();
        let b = init_model(&spec, 3).unwrap();
        let c = init_model(&spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.convs[0].weight.value, c.convs[0].weight.value);
        assert_ne!(a.head[0].weight.value, c.head[0].weight.value);
    }

    #[test]
    fn init_weight_statistics() {
        // 3-standard-error band around N(0, 0.01) on the first head layer
        // (240 * 128 = 30720 draws).
        let model = init_model(&BackboneSpec::default(), 21).unwrap();
        let w = model.head[0].weight.value.data();
        let n = w.len() as f64;
        assert!(n >= 1e4);
        let mean = w.iter().map(|v| *v as f64).sum::<f64>() / n;
        let var = w.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        let se_mean = 0.01 / n.sqrt();
        // Standard error of the sample std for a Gaussian is sigma / sqrt(2(n-1)).
        let se_std = 0.01 / (2.0 * (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
        assert!((std - 0.01).abs() < 3.0 * se_std, "std {std}");
        // Biases zero, gamma one, beta zero.
        assert!(model.head[0].bias.value.data().iter().all(|v| *v == 0.0));
        assert!(model.convs[0].gamma.value.data().iter().all(|v| *v == 1.0));
        assert!(model.convs[0].beta.value.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn default_shapes() {
        let model = init_model(&BackboneSpec::default(), 0).unwrap();
        let names: Vec<_> = model.convs.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["1_1", "1_2", "2_1", "2_2", "3_1", "3_2", "6", "7"]);
        assert_eq!(model.spec.hypercolumn_dim(), 240);
        assert_eq!(model.head[0].weight.value.shape(), &[128, 240]);
        assert_eq!(model.head[2].weight.value.shape(), &[3, 128]);
        assert_eq!(model.convs[2].stride, 2);
        assert_eq!(model.convs[6].weight.value.shape(), &[128, 64, 1, 1]);
    }

    #[test]
    fn head_reinit_keeps_backbone() {
        let mut m = init_model(&BackboneSpec::default(), 1).unwrap();
        let before = m.clone();
        m.reinit_head(5, HeadKind::Classification, 99).unwrap();
        assert_eq!(m.convs, before.convs);
        assert_eq!(m.head.last().unwrap().weight.value.shape(), &[5, 128]);
        assert_ne!(m.head[0].weight.value, before.head[0].weight.value);
    }
}

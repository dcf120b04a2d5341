use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tap name for the raw input image (3 channels at full resolution).
pub const INPUT_TAP: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Regression,
    Classification,
}

/// Network shape. Serialized as the JSON header of model files.
///
/// | key | meaning |
/// |-----|---------|
/// | `in_channels` | image channels (3) |
/// | `blocks` | `[[channels, convs], ...]`; 3x3 convs, stride 2 on the first conv of every block after the first |
/// | `fc_channels` | 1x1 convs at the coarsest scale, named `"6"`, `"7"`, ... |
/// | `hypercolumn_taps` | layer names (`"1_2"`, `"7"`, or `"input"`) whose features form the hypercolumn |
/// | `head_hidden` | hidden widths of the MLP head |
/// | `out_dim` | outputs per pixel (3 for normals, class count for segmentation) |
/// | `head_kind` | `"regression"` or `"classification"` |
/// | `init_std` | standard deviation of the Gaussian weight initializer |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub blocks: Vec<(usize, usize)>,
    pub fc_channels: Vec<usize>,
    pub hypercolumn_taps: Vec<String>,
    pub head_hidden: Vec<usize>,
    pub out_dim: usize,
    pub head_kind: HeadKind,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_in_channels() -> usize {
    3
}

fn default_init_std() -> f64 {
    0.01
}

impl Default for BackboneSpec {
    /// Desk-scale network: 240-dim hypercolumn from `{1_2, 2_2, 3_2, 7}`,
    /// MLP 128-128, three regression outputs.
    fn default() -> Self {
        Self {
            in_channels: 3,
            blocks: vec![(16, 2), (32, 2), (64, 2)],
            fc_channels: vec![128, 128],
            hypercolumn_taps: ["1_2", "2_2", "3_2", "7"].map(String::from).to_vec(),
            head_hidden: vec![128, 128],
            out_dim: 3,
            head_kind: HeadKind::Regression,
            init_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapSource {
    Input,
    /// Output of conv layer `i` (after batchnorm and ReLU).
    Layer(usize),
}

impl BackboneSpec {
    /// Linear model on raw pixel values: no backbone, no hidden layers.
    pub fn linear(in_channels: usize, out_dim: usize) -> Self {
        Self {
            in_channels,
            blocks: vec![],
            fc_channels: vec![],
            hypercolumn_taps: vec![INPUT_TAP.to_string()],
            head_hidden: vec![],
            out_dim,
            head_kind: HeadKind::Regression,
            init_std: 0.01,
        }
    }

    pub fn conv_layers(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        let mut ch = self.in_channels;
        for (bi, &(channels, convs)) in self.blocks.iter().enumerate() {
            for ci in 0..convs {
                out.push(LayerInfo {
                    name: format!("{}_{}", bi + 1, ci + 1),
                    in_channels: ch,
                    out_channels: channels,
                    kernel: 3,
                    stride: if bi > 0 && ci == 0 { 2 } else { 1 },
                    pad: 1,
                });
                ch = channels;
            }
        }
        for (i, &channels) in self.fc_channels.iter().enumerate() {
            out.push(LayerInfo {
                name: format!("{}", 6 + i),
                in_channels: ch,
                out_channels: channels,
                kernel: 1,
                stride: 1,
                pad: 0,
            });
            ch = channels;
        }
        out
    }

    /// Resolved taps with their channel counts, in hypercolumn order.
    pub fn taps(&self) -> Result<Vec<(TapSource, usize)>> {
        let layers = self.conv_layers();
        self.hypercolumn_taps
            .iter()
            .map(|name| {
                if name == INPUT_TAP {
                    return Ok((TapSource::Input, self.in_channels));
                }
                layers
                    .iter()
                    .position(|l| &l.name == name)
                    .map(|i| (TapSource::Layer(i), layers[i].out_channels))
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("hypercolumn tap `{name}` names no layer"))
                    })
            })
            .collect()
    }

    pub fn hypercolumn_dim(&self) -> usize {
        self.taps()
            .map(|t| t.iter().map(|(_, c)| c).sum())
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dim == 0 {
            return Err(Error::InvalidArgument("out_dim must be >= 1".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::InvalidArgument("in_channels must be >= 1".into()));
        }
        if self.hypercolumn_taps.is_empty() {
            return Err(Error::InvalidArgument("no hypercolumn taps".into()));
        }
        if self.blocks.iter().any(|&(c, n)| c == 0 || n == 0)
            || self.fc_channels.contains(&0)
            || self.head_hidden.contains(&0)
        {
            return Err(Error::InvalidArgument("zero-width layer in spec".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::InvalidArgument("init_std must be positive".into()));
        }
        self.taps().map(|_| ())
    }
}

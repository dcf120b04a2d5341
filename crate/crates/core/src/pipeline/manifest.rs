use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LRSchedule, Task, TrainConfig};
use crate::error::{Error, Result};
use crate::model::BackboneSpec;
use crate::synthdata::DistributionSpec;

/// A preset name or a full distribution spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistributionRef {
    Preset(String),
    Spec(DistributionSpec),
}

impl DistributionRef {
    pub fn resolve(&self, image_size: Option<(usize, usize)>) -> Result<DistributionSpec> {
        let spec = match self {
            DistributionRef::Preset(name) => DistributionSpec::preset(name)?,
            DistributionRef::Spec(s) => s.clone(),
        };
        let spec = match image_size {
            Some((h, w)) => spec.with_size(h, w),
            None => spec,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distributions {
    pub x1: DistributionRef,
    pub x2: DistributionRef,
    /// Defaults to `x2` when absent.
    #[serde(default)]
    pub x2_large: Option<DistributionRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub x1_train: usize,
    pub x1_test: usize,
    pub x2: usize,
    #[serde(default)]
    pub x2_large: usize,
}

/// Training settings per stage family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfigs {
    /// f, and g (same procedure).
    pub f: TrainConfig,
    pub h: TrainConfig,
    /// Fine-tuning on the labeled source.
    pub ft: TrainConfig,
    pub seg_ft: TrainConfig,
    /// Segmentation student trained from scratch on pseudo class maps.
    pub seg_final: TrainConfig,
}

impl StageConfigs {
    /// Desk scale: every full-length schedule divided by `divisor`.
    pub fn scaled(divisor: usize) -> Self {
        let f = TrainConfig::with_schedule(LRSchedule::full_f().scaled(divisor));
        Self {
            ft: f.clone(),
            h: TrainConfig::with_schedule(LRSchedule::full_h().scaled(divisor)),
            seg_ft: TrainConfig::with_schedule(LRSchedule::full_seg_ft().scaled(divisor)),
            seg_final: TrainConfig {
                batch_images: 5,
                ..TrainConfig::with_schedule(LRSchedule::full_seg_final().scaled(divisor))
            },
            f,
        }
    }

    fn all_mut(&mut self) -> [&mut TrainConfig; 5] {
        [&mut self.f, &mut self.h, &mut self.ft, &mut self.seg_ft, &mut self.seg_final]
    }
}

impl Default for StageConfigs {
    fn default() -> Self {
        Self::scaled(10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TrainF,
    FinetuneF,
    DistillG,
    FinetuneG,
    FinetuneGLong,
    DistillH,
    FinetuneH,
    FinetuneHLong,
    SegScratch,
    SegGeometry,
    SegOurs,
    SegFinal,
}

impl Stage {
    /// Execution order.
    pub const ALL: [Stage; 12] = [
        Stage::TrainF,
        Stage::FinetuneF,
        Stage::DistillG,
        Stage::FinetuneG,
        Stage::FinetuneGLong,
        Stage::DistillH,
        Stage::FinetuneH,
        Stage::FinetuneHLong,
        Stage::SegScratch,
        Stage::SegGeometry,
        Stage::SegOurs,
        Stage::SegFinal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainF => "train_f",
            Stage::FinetuneF => "finetune_f",
            Stage::DistillG => "distill_g",
            Stage::FinetuneG => "finetune_g",
            Stage::FinetuneGLong => "finetune_g_long",
            Stage::DistillH => "distill_h",
            Stage::FinetuneH => "finetune_h",
            Stage::FinetuneHLong => "finetune_h_long",
            Stage::SegScratch => "seg_scratch",
            Stage::SegGeometry => "seg_geometry",
            Stage::SegOurs => "seg_ours",
            Stage::SegFinal => "seg_final",
        }
    }

    /// Label of the model this stage produces in metric tables and reports.
    pub fn model_tag(self) -> &'static str {
        match self {
            Stage::TrainF => "f",
            Stage::FinetuneF => "f+FT",
            Stage::DistillG => "g",
            Stage::FinetuneG => "g+FT",
            Stage::FinetuneGLong => "g+FT (long)",
            Stage::DistillH => "h",
            Stage::FinetuneH => "h+FT",
            Stage::FinetuneHLong => "h+FT (long)",
            Stage::SegScratch => "scratch",
            Stage::SegGeometry => "geometry",
            Stage::SegOurs => "ours (h)",
            Stage::SegFinal => "+final",
        }
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::TrainF | Stage::SegScratch => &[],
            Stage::FinetuneF | Stage::DistillG | Stage::DistillH | Stage::SegGeometry => &[Stage::TrainF],
            Stage::FinetuneG | Stage::FinetuneGLong => &[Stage::DistillG],
            Stage::FinetuneH | Stage::FinetuneHLong | Stage::SegOurs => &[Stage::DistillH],
            Stage::SegFinal => &[Stage::SegOurs],
        }
    }

    pub fn is_segmentation(self) -> bool {
        matches!(self, Stage::SegScratch | Stage::SegGeometry | Stage::SegOurs | Stage::SegFinal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: Task,
    pub distributions: Distributions,
    /// Overrides the image size of every distribution.
    #[serde(default)]
    pub image_size: Option<(usize, usize)>,
    pub counts: Counts,
    pub spec: BackboneSpec,
    pub configs: StageConfigs,
    pub stages: Vec<Stage>,
    pub seed: u64,
    pub out_dir: String,
}

impl Manifest {
    /// Full normals experiment at desk scale: n labeled constrained images,
    /// n diverse unlabeled images, 5n for the large pool.
    pub fn canonical_normals(n: usize) -> Self {
        Self {
            task: Task::Normals,
            distributions: Distributions {
                x1: DistributionRef::Preset("constrained".into()),
                x2: DistributionRef::Preset("diverse".into()),
                x2_large: None,
            },
            image_size: None,
            counts: Counts {
                x1_train: n,
                x1_test: (n / 4).max(1),
                x2: n,
                x2_large: 5 * n,
            },
            spec: BackboneSpec::default(),
            configs: StageConfigs::default(),
            stages: vec![
                Stage::TrainF,
                Stage::FinetuneF,
                Stage::DistillG,
                Stage::FinetuneG,
                Stage::DistillH,
                Stage::FinetuneH,
            ],
            seed: 0,
            out_dir: "runs".into(),
        }
    }

    /// Segmentation experiment: scratch, normals-initialized, distilled and
    /// re-distilled segmentation models.
    pub fn canonical_segmentation(n: usize) -> Self {
        Self {
            task: Task::Segmentation,
            stages: vec![
                Stage::TrainF,
                Stage::DistillH,
                Stage::SegScratch,
                Stage::SegGeometry,
                Stage::SegOurs,
                Stage::SegFinal,
            ],
            ..Self::canonical_normals(n)
        }
    }

    /// Smoke-scale normals run: n = 50, 50 steps per stage, 32x32 images.
    pub fn minimal() -> Self {
        let mut m = Self::canonical_normals(50);
        m.image_size = Some((32, 32));
        m.counts.x1_test = 10;
        m.counts.x2_large = 100;
        for c in m.configs.all_mut() {
            c.schedule = LRSchedule::new(0.001, 0.1, vec![40], 50).expect("valid schedule");
            c.batch_images = 4;
            c.pixels_per_image = 64;
            c.eval_every = 10;
        }
        m
    }

    pub fn configs_mut(&mut self) -> [&mut TrainConfig; 5] {
        self.configs.all_mut()
    }

    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    /// Stages in execution order, without duplicates.
    pub fn ordered_stages(&self) -> Vec<Stage> {
        Stage::ALL.iter().copied().filter(|s| self.has(*s)).collect()
    }

    /// Every check that can run before any compute.
    pub fn validate(&self) -> Result<()> {
        let reject = |msg: String| Err(Error::Rejected(format!("manifest: {msg}")));
        if self.stages.is_empty() {
            return reject("no stages requested".into());
        }
        for s in &self.stages {
            for d in s.dependencies() {
                if !self.has(*d) {
                    return reject(format!("stage `{}` requires stage `{}`", s.name(), d.name()));
                }
            }
            if s.is_segmentation() && self.task != Task::Segmentation {
                return reject(format!("stage `{}` needs task segmentation", s.name()));
            }
        }
        let c = &self.counts;
        if c.x1_train == 0 || c.x1_test == 0 {
            return reject("x1_train and x1_test must be at least 1".into());
        }
        if self.has(Stage::DistillG) && c.x1_train != c.x2 {
            return reject(format!(
                "the g stage needs |X1| == |X2| (got {} labeled vs {} unlabeled)",
                c.x1_train, c.x2
            ));
        }
        if (self.has(Stage::DistillH) || self.has(Stage::SegFinal)) && c.x2_large == 0 {
            return reject("distill_h and seg_final need counts.x2_large > 0".into());
        }
        self.spec.validate()?;
        if self.spec.head_kind != crate::model::HeadKind::Regression || self.spec.out_dim != 3 {
            return reject("spec must describe the normals network (regression head, out_dim 3)".into());
        }
        if self.spec.in_channels != 3 {
            return reject("spec.in_channels must be 3 (RGB)".into());
        }
        for cfg in [
            &self.configs.f,
            &self.configs.h,
            &self.configs.ft,
            &self.configs.seg_ft,
            &self.configs.seg_final,
        ] {
            cfg.validate()?;
        }
        self.distributions.x1.resolve(self.image_size)?;
        self.distributions.x2.resolve(self.image_size)?;
        if let Some(x) = &self.distributions.x2_large {
            x.resolve(self.image_size)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses `text`, then applies `key=value` overrides by dotted path.
    /// Values are parsed as JSON when possible, otherwise taken as strings.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Sets the value at a dotted path (`configs.f.schedule.total_steps=100`).
/// Array elements are addressed by index.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("override `{assignment}` is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*key).to_string(), parsed);
                    return Ok(());
                }
                map.get_mut(*key)
                    .ok_or_else(|| Error::InvalidArgument(format!("override `{path}`: no key `{key}`")))?
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("override `{path}`: `{key}` is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::InvalidArgument(format!("override `{path}`: index {idx} >= {len}")))?;
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "override `{path}`: `{key}` is inside a scalar"
                )))
            }
        };
    }
    Err(Error::InvalidArgument("override path is empty".into()))
}

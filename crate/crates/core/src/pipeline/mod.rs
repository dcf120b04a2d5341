//! Supervised training of f, dense pseudo-labeling of an unlabeled pool,
//! mimic training of g and h on those labels, fine-tuning, and the
//! segmentation re-distillation round.

mod manifest;
mod run;
mod schedule;
mod train;

pub use manifest::{apply_override, Counts, DistributionRef, Distributions, Manifest, Stage, StageConfigs};
pub use run::{
    run_dir, run_id, run_pipeline, Artifact, Environment, MetricTable, Metrics, RunOptions, RunRecord, StageKind,
    StageRecord, CHECKPOINT_FILE, CODE_VERSION, RUN_RECORD_FILE, TIMINGS_FILE,
};
pub use schedule::{lr_at, LRSchedule, TrainConfig};
pub use train::{
    distill, evaluate_normals, evaluate_segmentation, fine_tune, model_id, output_mse, pseudo_label, train,
    verify_teacher, Distilled, HeadSwap, LossPoint, NormalEval,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Normals,
    Segmentation,
}

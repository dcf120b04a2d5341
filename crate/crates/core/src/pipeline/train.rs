use serde::{Deserialize, Serialize};

use super::{lr_at, Task, TrainConfig};
use crate::error::{Error, Result};
use crate::hash::{fnv1a, hex};
use crate::metrics::{angular_errors, normal_stats, region_errors, IouCounts, NormalStats, SegStats};
use crate::model::{init_model, model_to_bytes, BackboneSpec, HeadKind, ModelState, PixelBatch, Provenance, Targets};
use crate::rng::Rng;
use crate::synthdata::{Dataset, DatasetHeader, LabelKind, Record, NUM_SEG_CLASSES, SEG_CLASS_NAMES};
use crate::tensor::{cross_entropy_loss, mse_loss, sgd_step, BnMode, Point, Tensor};

/// Windowed mean training loss ending at `step` (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

/// Identifier of a model: FNV-1a of its serialized bytes, as hex.
pub fn model_id(model: &ModelState) -> String {
    hex(fnv1a(&model_to_bytes(model)))
}

/// Pixels a trainer may draw from each record: `None` means every pixel.
fn pixel_pools(data: &Dataset, kind: HeadKind) -> Vec<Option<Vec<u32>>> {
    data.records
        .iter()
        .map(|r| {
            // Class maps label background explicitly, so every pixel counts.
            if kind == HeadKind::Classification && data.header.label_kind == LabelKind::GroundTruth {
                return None;
            }
            let valid = r.valid.as_ref()?;
            if valid.data().iter().all(|&v| v != 0.0) {
                None
            } else {
                Some(
                    valid
                        .data()
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0.0)
                        .map(|(i, _)| i as u32)
                        .collect(),
                )
            }
        })
        .collect()
}

fn check_trainable(model: &ModelState, header: &DatasetHeader) -> Result<()> {
    let spec = &model.spec;
    match (spec.head_kind, header.label_kind) {
        (_, LabelKind::Unlabeled) => Err(Error::Rejected("training data is unlabeled".into())),
        (HeadKind::Regression, LabelKind::GroundTruth | LabelKind::PseudoRegression) => {
            if header.target_dim != spec.out_dim {
                return Err(Error::Rejected(format!(
                    "regression head has out_dim {} but targets have {} channels",
                    spec.out_dim, header.target_dim
                )));
            }
            Ok(())
        }
        (HeadKind::Classification, LabelKind::GroundTruth | LabelKind::PseudoClasses) => Ok(()),
        (kind, label) => Err(Error::Rejected(format!("a {kind:?} head cannot train on {label:?} labels"))),
    }
}

/// Draws the images and pixels of one step.
fn sample_batch(
    data: &Dataset,
    pools: &[Option<Vec<u32>>],
    kind: HeadKind,
    config: &TrainConfig,
    step: usize,
) -> Result<(Tensor<f32>, PixelBatch)> {
    let mut rng = Rng::derive(config.seed, step as u64);
    let (h, w) = (data.header.height, data.header.width);
    let plane = h * w;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let chosen = rng.sample_without_replacement(&mut order, config.batch_images);
    let mut images = Vec::with_capacity(chosen.len());
    let mut batch = PixelBatch::default();
    let mut reg = Vec::new();
    let mut classes = Vec::new();
    for (slot, &idx) in chosen.iter().enumerate() {
        let rec = &data.records[idx];
        images.push(&rec.image);
        let mut pool: Vec<u32> = match &pools[idx] {
            Some(p) => p.clone(),
            None => (0..plane as u32).collect(),
        };
        for pix in rng.sample_without_replacement(&mut pool, config.pixels_per_image) {
            let pix = pix as usize;
            batch.image_indices.push(slot);
            batch.coords.push(Point::new((pix / w) as f64, (pix % w) as f64));
            match kind {
                HeadKind::Regression => {
                    let t = rec.target.as_ref().expect("checked labeled");
                    let d = t.shape()[0];
                    reg.extend((0..d).map(|k| t.data()[k * plane + pix]));
                }
                HeadKind::Classification => {
                    let c = rec.classes.as_ref().expect("checked labeled").data()[pix];
                    classes.push(c as usize);
                }
            }
        }
    }
    let images = Tensor::stack(&images)?;
    batch.targets = match kind {
        HeadKind::Regression => {
            let d = reg.len() / batch.len().max(1);
            Targets::Regression(Tensor::new(vec![batch.len(), d], reg)?)
        }
        HeadKind::Classification => Targets::Classes(classes),
    };
    Ok((images, batch))
}

/// Minimizes the pixel loss (squared error for regression heads, cross
/// entropy for classification heads) over `data` with momentum SGD.
/// Returns the model and the loss trace; the model's provenance is left as
/// given. A non-finite loss aborts with the step index.
pub fn train(mut model: ModelState, data: &Dataset, config: &TrainConfig) -> Result<(ModelState, Vec<LossPoint>)> {
    config.validate()?;
    check_trainable(&model, &data.header)?;
    if data.is_empty() {
        return Err(Error::Rejected("training data is empty".into()));
    }
    let total = config.schedule.total_steps;
    let mut trace = Vec::new();
    if total == 0 {
        return Ok((model, trace));
    }
    let kind = model.spec.head_kind;
    let pools = pixel_pools(data, kind);
    if pools.iter().all(|p| p.as_ref().is_some_and(|v| v.is_empty())) {
        return Err(Error::Rejected("no valid pixel in the training data".into()));
    }
    model.zero_grad();
    model.reset_momentum();
    let (mut window_sum, mut window_len) = (0.0, 0usize);
    for step in 0..total {
        let (images, batch) = sample_batch(data, &pools, kind, config, step)?;
        if batch.is_empty() {
            continue;
        }
        let (out, cache) = model.forward_sampled(&images, &batch, BnMode::Train)?;
        let (loss, grad) = match &batch.targets {
            Targets::Regression(t) => mse_loss(&out, t)?,
            Targets::Classes(c) => cross_entropy_loss(&out, c)?,
            Targets::None => unreachable!("sample_batch always fills targets"),
        };
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFinite { step });
        }
        model.backward(cache.expect("train mode returns a cache"), &grad)?;
        sgd_step(model.params_mut(), lr_at(&config.schedule, step)?, config.momentum);
        window_sum += loss;
        window_len += 1;
        if (step + 1) % config.eval_every == 0 || step + 1 == total {
            trace.push(LossPoint {
                step,
                loss: window_sum / window_len as f64,
            });
            window_sum = 0.0;
            window_len = 0;
        }
    }
    if !model.all_finite() {
        return Err(Error::NonFinite { step: total - 1 });
    }
    Ok((model, trace))
}

fn argmax_map(dense: &Tensor<f32>) -> Tensor<f32> {
    let (k, h, w) = (dense.shape()[0], dense.shape()[1], dense.shape()[2]);
    let plane = h * w;
    Tensor::from_fn(&[h, w], |i| {
        let mut best = 0;
        for c in 1..k {
            if dense.data()[c * plane + i] > dense.data()[best * plane + i] {
                best = c;
            }
        }
        best as f32
    })
}

fn check_task(model: &ModelState, task: Task) -> Result<()> {
    let ok = match task {
        Task::Normals => model.spec.head_kind == HeadKind::Regression && model.spec.out_dim == 3,
        Task::Segmentation => model.spec.head_kind == HeadKind::Classification,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Rejected(format!(
            "model head ({:?}, out_dim {}) does not fit the {task:?} task",
            model.spec.head_kind, model.spec.out_dim
        )))
    }
}

/// Labels every pixel of every image with the teacher's dense eval-mode
/// output. Regression targets are stored raw; classification heads store
/// the argmax class map. The valid mask is all ones.
pub fn pseudo_label(teacher: &ModelState, unlabeled: &Dataset, task: Task) -> Result<Dataset> {
    if unlabeled.header.labeled() {
        return Err(Error::Rejected("pseudo-labeling expects an unlabeled pool".into()));
    }
    check_task(teacher, task)?;
    let (h, w) = (unlabeled.header.height, unlabeled.header.width);
    let records = unlabeled
        .records
        .iter()
        .map(|r| {
            let dense = teacher.forward_dense(&r.image)?;
            let (target, classes) = match task {
                Task::Normals => (Some(dense), None),
                Task::Segmentation => (None, Some(argmax_map(&dense))),
            };
            Ok(Record {
                image: r.image.clone(),
                target,
                classes,
                valid: Some(Tensor::full(&[h, w], 1.0)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            label_kind: match task {
                Task::Normals => LabelKind::PseudoRegression,
                Task::Segmentation => LabelKind::PseudoClasses,
            },
            target_dim: teacher.spec.out_dim,
            teacher_hash: fnv1a(&model_to_bytes(teacher)),
            ..unlabeled.header
        },
        records,
    })
}

/// Rejects a pseudo-labeled file whose recorded teacher is not `teacher`.
pub fn verify_teacher(pseudo: &DatasetHeader, teacher: &ModelState) -> Result<()> {
    let want = fnv1a(&model_to_bytes(teacher));
    if pseudo.teacher_hash != want {
        return Err(Error::Rejected(format!(
            "pseudo-labels were produced by teacher {}, not {}",
            hex(pseudo.teacher_hash),
            hex(want)
        )));
    }
    Ok(())
}

pub struct Distilled {
    pub student: ModelState,
    pub pseudo: Dataset,
    pub trace: Vec<LossPoint>,
}

/// Trains a fresh `spec` model (initialized from `init_seed`) to reproduce
/// the teacher's outputs on the unlabeled pool.
pub fn distill(
    teacher: &ModelState,
    unlabeled: &Dataset,
    spec: &BackboneSpec,
    config: &TrainConfig,
    init_seed: u64,
    task: Task,
) -> Result<Distilled> {
    if (spec.head_kind, spec.out_dim) != (teacher.spec.head_kind, teacher.spec.out_dim) {
        return Err(Error::Rejected("student head must match the teacher head".into()));
    }
    let pseudo = pseudo_label(teacher, unlabeled, task)?;
    let mut student = init_model(spec, init_seed)?;
    student.provenance = Provenance::DistilledFrom(model_id(teacher));
    let (student, trace) = train(student, &pseudo, config)?;
    Ok(Distilled { student, pseudo, trace })
}

/// Head replacement applied before fine-tuning on a new task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadSwap {
    pub out_dim: usize,
    pub kind: HeadKind,
    pub seed: u64,
}

/// Continues training from `model`'s parameters on labeled data, optionally
/// with a freshly initialized head.
pub fn fine_tune(
    mut model: ModelState,
    labeled: &Dataset,
    config: &TrainConfig,
    head: Option<HeadSwap>,
) -> Result<(ModelState, Vec<LossPoint>)> {
    let source = model_id(&model);
    if let Some(h) = head {
        model.reinit_head(h.out_dim, h.kind, h.seed)?;
    }
    model.provenance = Provenance::FinetunedFrom(source);
    train(model, labeled, config)
}

/// Held-out normal-estimation scores, overall and per region class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalEval {
    pub overall: NormalStats,
    /// Shape class name and statistics over that class's pixels.
    pub regions: Vec<(String, NormalStats)>,
}

pub fn evaluate_normals(model: &ModelState, data: &Dataset) -> Result<NormalEval> {
    check_task(model, Task::Normals)?;
    if data.header.label_kind != LabelKind::GroundTruth {
        return Err(Error::Rejected("evaluation needs ground-truth labels".into()));
    }
    let mut all = Vec::new();
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); NUM_SEG_CLASSES];
    for r in &data.records {
        let (gt, seg, valid) = (
            r.target.as_ref().expect("ground truth"),
            r.classes.as_ref().expect("ground truth"),
            r.valid.as_ref().expect("ground truth"),
        );
        if valid.data().iter().all(|&v| v == 0.0) {
            continue;
        }
        let pred = model.forward_dense(&r.image)?;
        all.extend(angular_errors(&pred, gt, valid)?);
        for (c, errs) in per_class.iter_mut().enumerate().skip(1) {
            let region = Tensor::from_fn(seg.shape(), |i| if seg.data()[i] as usize == c { 1.0 } else { 0.0 });
            errs.extend(region_errors(&pred, gt, valid, &region)?);
        }
    }
    let regions = per_class
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, e)| !e.is_empty())
        .map(|(c, e)| Ok((SEG_CLASS_NAMES[c].to_string(), normal_stats(e)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(NormalEval {
        overall: normal_stats(&all)?,
        regions,
    })
}

/// Dataset-level IoU: intersections and unions summed over all images.
pub fn evaluate_segmentation(model: &ModelState, data: &Dataset) -> Result<SegStats> {
    check_task(model, Task::Segmentation)?;
    if data.header.label_kind != LabelKind::GroundTruth {
        return Err(Error::Rejected("evaluation needs ground-truth labels".into()));
    }
    let mut counts = IouCounts::new(model.spec.out_dim);
    for r in &data.records {
        let gt = r.classes.as_ref().expect("ground truth");
        let pred = argmax_map(&model.forward_dense(&r.image)?);
        counts.add(&pred, gt, &Tensor::full(gt.shape(), 1.0))?;
    }
    Ok(counts.stats())
}

/// Mean squared difference between two models' dense outputs on `images`.
pub fn output_mse(a: &ModelState, b: &ModelState, images: &Dataset) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in &images.records {
        let (pa, pb) = (a.forward_dense(&r.image)?, b.forward_dense(&r.image)?);
        for (x, y) in pa.data().iter().zip(pb.data()) {
            sum += (*x as f64 - *y as f64).powi(2);
        }
        n += pa.numel();
    }
    Ok(sum / n as f64)
}

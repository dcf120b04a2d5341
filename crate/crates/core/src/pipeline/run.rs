use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Stage};
use super::train::{distill, evaluate_normals, evaluate_segmentation, fine_tune, pseudo_label, train, HeadSwap, LossPoint};
use super::{Task, TrainConfig};
use crate::error::{Error, Result};
use crate::hash::{fnv1a, hash_file, hex};
use crate::metrics::{NormalStats, SegStats};
use crate::model::{init_model, load_model, save_model, BackboneSpec, HeadKind, ModelState};
use crate::rng::Rng;
use crate::synthdata::{audit, gen_dataset, read_dataset, write_dataset, Dataset, NUM_SEG_CLASSES};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const RUN_RECORD_FILE: &str = "run_record.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TIMINGS_FILE: &str = "timings.json";

/// A file produced or consumed by a stage, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub path: String,
    /// FNV-1a of the file bytes, hex.
    pub hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    GenerateData,
    TrainF,
    PseudoLabel,
    DistillG,
    DistillH,
    FineTune,
    SegFinalRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub kind: StageKind,
    /// Effective configuration, including the derived stage seed.
    pub config: Option<TrainConfig>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub loss_trace: Vec<LossPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metrics {
    Normals(NormalStats),
    Segmentation(SegStats),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub model: String,
    pub split: String,
    pub region: Option<String>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            crate_version: CODE_VERSION.to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        }
    }
}

/// Provenance of one pipeline run. Wall-clock times are kept out of it (they
/// go to `timings.json`) so identical manifests give identical records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub code_version: String,
    pub manifest: Manifest,
    pub overrides: Vec<String>,
    pub stages: Vec<StageRecord>,
    pub tables: Vec<MetricTable>,
    pub environment: Environment,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn table(&self, model: &str, region: Option<&str>) -> Option<&MetricTable> {
        self.tables
            .iter()
            .find(|t| t.model == model && t.region.as_deref() == region)
    }

    pub fn normals(&self, model: &str) -> Option<&NormalStats> {
        match &self.table(model, None)?.metrics {
            Metrics::Normals(s) => Some(s),
            Metrics::Segmentation(_) => None,
        }
    }

    pub fn segmentation(&self, model: &str) -> Option<&SegStats> {
        match &self.table(model, None)?.metrics {
            Metrics::Segmentation(s) => Some(s),
            Metrics::Normals(_) => None,
        }
    }

    /// Re-hashes every referenced artifact under `run_dir`.
    pub fn verify_artifacts(&self, run_dir: &Path) -> Result<()> {
        for s in &self.stages {
            for a in s.inputs.iter().chain(&s.outputs) {
                let actual = hex(hash_file(&run_dir.join(&a.path))?);
                if actual != a.hash {
                    return Err(Error::Rejected(format!(
                        "artifact {} hashes to {actual}, record says {}",
                        a.path, a.hash
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Id of a manifest: FNV-1a over its JSON (without `out_dir`, which says
/// where results go, not what they are) and the code version.
pub fn run_id(manifest: &Manifest) -> String {
    let mut m = manifest.clone();
    m.out_dir = String::new();
    let text = format!("{}\n{}", serde_json::to_string(&m).expect("manifest serializes"), CODE_VERSION);
    hex(fnv1a(text.as_bytes()))
}

pub fn run_dir(manifest: &Manifest) -> PathBuf {
    Path::new(&manifest.out_dir).join(run_id(manifest))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from `checkpoint.json` instead of starting afresh.
    pub resume: bool,
    /// Overrides already applied to the manifest, recorded verbatim.
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Checkpoint {
    run_id: String,
    completed: Vec<String>,
    stages: Vec<StageRecord>,
    tables: Vec<MetricTable>,
}

const GENERATE: &str = "generate_data";

// Seed streams of the manifest seed.
const STREAM_X1_TRAIN: u64 = 1;
const STREAM_X1_TEST: u64 = 2;
const STREAM_X2: u64 = 3;
const STREAM_X2_LARGE: u64 = 4;
const STREAM_INIT: u64 = 10;
const STREAM_SEG_INIT: u64 = 11;
const STREAM_HEAD: u64 = 12;
const STREAM_STAGE_BASE: u64 = 100;

struct Runner<'a> {
    m: &'a Manifest,
    dir: PathBuf,
    ckpt: Checkpoint,
    models: HashMap<String, ModelState>,
    data: HashMap<&'static str, Dataset>,
    timings: BTreeMap<String, f64>,
}

impl<'a> Runner<'a> {
    fn seed(&self, stream: u64) -> u64 {
        Rng::derive_seed(self.m.seed, stream)
    }

    fn config(&self, base: &TrainConfig, stream: u64) -> TrainConfig {
        TrainConfig {
            seed: self.seed(STREAM_STAGE_BASE + stream),
            ..base.clone()
        }
    }

    fn artifact(&self, name: &str, rel: &str) -> Result<Artifact> {
        Ok(Artifact {
            name: name.to_string(),
            path: rel.to_string(),
            hash: hex(hash_file(&self.dir.join(rel))?),
        })
    }

    fn data_rel(name: &str) -> String {
        format!("data/{name}.cdds")
    }

    fn model_rel(name: &str) -> String {
        format!("models/{name}.cdmf")
    }

    /// Loads a dataset through the audited reader.
    fn dataset(&mut self, name: &'static str) -> Result<&Dataset> {
        if !self.data.contains_key(name) {
            let ds = read_dataset(&self.dir.join(Self::data_rel(name)))?;
            self.data.insert(name, ds);
        }
        Ok(&self.data[name])
    }

    fn model(&mut self, name: &str) -> Result<ModelState> {
        if let Some(m) = self.models.get(name) {
            return Ok(m.clone());
        }
        let m = load_model(&self.dir.join(Self::model_rel(name)))?;
        self.models.insert(name.to_string(), m.clone());
        Ok(m)
    }

    fn store_model(&mut self, name: &str, model: ModelState) -> Result<Artifact> {
        let rel = Self::model_rel(name);
        save_model(&model, &self.dir.join(&rel))?;
        self.models.insert(name.to_string(), model);
        self.artifact(name, &rel)
    }

    fn store_pseudo(&self, name: &str, ds: &Dataset) -> Result<Artifact> {
        let rel = format!("pseudo/{name}.cdds");
        write_dataset(ds, &self.dir.join(&rel))?;
        self.artifact(name, &rel)
    }

    fn save_checkpoint(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.ckpt)?;
        std::fs::write(self.dir.join(CHECKPOINT_FILE), text)?;
        Ok(())
    }

    fn generate(&mut self) -> Result<Vec<StageRecord>> {
        let m = self.m;
        let mut outputs = Vec::new();
        let mut jobs = vec![
            ("x1_train", m.distributions.x1.clone(), m.counts.x1_train, STREAM_X1_TRAIN, true),
            ("x1_test", m.distributions.x1.clone(), m.counts.x1_test, STREAM_X1_TEST, true),
        ];
        if m.has(Stage::DistillG) {
            jobs.push(("x2", m.distributions.x2.clone(), m.counts.x2, STREAM_X2, false));
        }
        if m.has(Stage::DistillH) || m.has(Stage::SegFinal) {
            let large = m.distributions.x2_large.clone().unwrap_or_else(|| m.distributions.x2.clone());
            jobs.push(("x2_large", large, m.counts.x2_large, STREAM_X2_LARGE, false));
        }
        for (name, dist, n, stream, labeled) in jobs {
            let spec = dist.resolve(m.image_size)?;
            let rel = Self::data_rel(name);
            gen_dataset(&spec, n, self.seed(stream), labeled, &self.dir.join(&rel))?;
            outputs.push(self.artifact(name, &rel)?);
        }
        Ok(vec![StageRecord {
            stage: GENERATE.into(),
            kind: StageKind::GenerateData,
            config: None,
            inputs: Vec::new(),
            outputs,
            loss_trace: Vec::new(),
        }])
    }

    fn eval_normals(&mut self, tag: &str, model_name: &str) -> Result<Vec<MetricTable>> {
        let model = self.model(model_name)?;
        let ev = evaluate_normals(&model, self.dataset("x1_test")?)?;
        let mut tables = vec![MetricTable {
            model: tag.into(),
            split: "x1_test".into(),
            region: None,
            metrics: Metrics::Normals(ev.overall),
        }];
        tables.extend(ev.regions.into_iter().map(|(region, s)| MetricTable {
            model: tag.into(),
            split: "x1_test".into(),
            region: Some(region),
            metrics: Metrics::Normals(s),
        }));
        Ok(tables)
    }

    fn eval_seg(&mut self, tag: &str, model_name: &str) -> Result<Vec<MetricTable>> {
        let model = self.model(model_name)?;
        let s = evaluate_segmentation(&model, self.dataset("x1_test")?)?;
        Ok(vec![MetricTable {
            model: tag.into(),
            split: "x1_test".into(),
            region: None,
            metrics: Metrics::Segmentation(s),
        }])
    }

    fn seg_spec(&self) -> BackboneSpec {
        BackboneSpec {
            out_dim: NUM_SEG_CLASSES,
            head_kind: HeadKind::Classification,
            ..self.m.spec.clone()
        }
    }

    fn head_swap(&self) -> HeadSwap {
        HeadSwap {
            out_dim: NUM_SEG_CLASSES,
            kind: HeadKind::Classification,
            seed: self.seed(STREAM_HEAD),
        }
    }

    /// Trains `from` further on X1 and stores the result as `to`.
    fn fine_tune_stage(
        &mut self,
        stage: Stage,
        from: &str,
        to: &str,
        base: &TrainConfig,
        head: Option<HeadSwap>,
    ) -> Result<StageRecord> {
        let model = self.model(from)?;
        let cfg = self.config(base, stage as u64);
        let (tuned, trace) = fine_tune(model, self.dataset("x1_train")?, &cfg, head)?;
        let out = self.store_model(to, tuned)?;
        Ok(StageRecord {
            stage: stage.name().into(),
            kind: StageKind::FineTune,
            config: Some(cfg),
            inputs: vec![
                self.artifact(from, &Self::model_rel(from))?,
                self.artifact("x1_train", &Self::data_rel("x1_train"))?,
            ],
            outputs: vec![out],
            loss_trace: trace,
        })
    }

    fn distill_stage(
        &mut self,
        stage: Stage,
        pool: &'static str,
        student: &str,
        base: &TrainConfig,
    ) -> Result<Vec<StageRecord>> {
        let teacher = self.model("f")?;
        let cfg = self.config(base, stage as u64);
        let init = self.seed(STREAM_INIT);
        let spec = self.m.spec.clone();
        let d = distill(&teacher, self.dataset(pool)?, &spec, &cfg, init, Task::Normals)?;
        self.data.remove(pool);
        let pseudo = self.store_pseudo(student, &d.pseudo)?;
        let out = self.store_model(student, d.student)?;
        let kind = if stage == Stage::DistillG {
            StageKind::DistillG
        } else {
            StageKind::DistillH
        };
        Ok(vec![
            StageRecord {
                stage: stage.name().into(),
                kind: StageKind::PseudoLabel,
                config: None,
                inputs: vec![
                    self.artifact("f", &Self::model_rel("f"))?,
                    self.artifact(pool, &Self::data_rel(pool))?,
                ],
                outputs: vec![pseudo.clone()],
                loss_trace: Vec::new(),
            },
            StageRecord {
                stage: stage.name().into(),
                kind,
                config: Some(cfg),
                inputs: vec![pseudo],
                outputs: vec![out],
                loss_trace: d.trace,
            },
        ])
    }

    fn run_stage(&mut self, stage: Stage) -> Result<(Vec<StageRecord>, Vec<MetricTable>)> {
        let c = self.m.configs.clone();
        Ok(match stage {
            Stage::TrainF => {
                let model = init_model(&self.m.spec, self.seed(STREAM_INIT))?;
                let cfg = self.config(&c.f, stage as u64);
                let (f, trace) = train(model, self.dataset("x1_train")?, &cfg)?;
                let out = self.store_model("f", f)?;
                let rec = StageRecord {
                    stage: stage.name().into(),
                    kind: StageKind::TrainF,
                    config: Some(cfg),
                    inputs: vec![self.artifact("x1_train", &Self::data_rel("x1_train"))?],
                    outputs: vec![out],
                    loss_trace: trace,
                };
                (vec![rec], self.eval_normals(stage.model_tag(), "f")?)
            }
            Stage::FinetuneF => {
                let rec = self.fine_tune_stage(stage, "f", "f_ft", &c.ft, None)?;
                (vec![rec], self.eval_normals(stage.model_tag(), "f_ft")?)
            }
            Stage::DistillG => (self.distill_stage(stage, "x2", "g", &c.f)?, self.eval_normals(stage.model_tag(), "g")?),
            Stage::FinetuneG => {
                let rec = self.fine_tune_stage(stage, "g", "g_ft", &c.ft, None)?;
                (vec![rec], self.eval_normals(stage.model_tag(), "g_ft")?)
            }
            Stage::FinetuneGLong => {
                let long = TrainConfig {
                    schedule: c.ft.schedule.extended(2),
                    ..c.ft.clone()
                };
                let rec = self.fine_tune_stage(stage, "g", "g_ft_long", &long, None)?;
                (vec![rec], self.eval_normals(stage.model_tag(), "g_ft_long")?)
            }
            Stage::DistillH => (self.distill_stage(stage, "x2_large", "h", &c.h)?, self.eval_normals(stage.model_tag(), "h")?),
            Stage::FinetuneH => {
                let rec = self.fine_tune_stage(stage, "h", "h_ft", &c.ft, None)?;
                (vec![rec], self.eval_normals(stage.model_tag(), "h_ft")?)
            }
            Stage::FinetuneHLong => {
                let long = TrainConfig {
                    schedule: c.ft.schedule.extended(2),
                    ..c.ft.clone()
                };
                let rec = self.fine_tune_stage(stage, "h", "h_ft_long", &long, None)?;
                (vec![rec], self.eval_normals(stage.model_tag(), "h_ft_long")?)
            }
            Stage::SegScratch => {
                let model = init_model(&self.seg_spec(), self.seed(STREAM_SEG_INIT))?;
                let cfg = self.config(&c.seg_ft, stage as u64);
                let (m, trace) = train(model, self.dataset("x1_train")?, &cfg)?;
                let out = self.store_model("seg_scratch", m)?;
                let rec = StageRecord {
                    stage: stage.name().into(),
                    kind: StageKind::TrainF,
                    config: Some(cfg),
                    inputs: vec![self.artifact("x1_train", &Self::data_rel("x1_train"))?],
                    outputs: vec![out],
                    loss_trace: trace,
                };
                (vec![rec], self.eval_seg(stage.model_tag(), "seg_scratch")?)
            }
            Stage::SegGeometry => {
                let swap = self.head_swap();
                let rec = self.fine_tune_stage(stage, "f", "seg_geometry", &c.seg_ft, Some(swap))?;
                (vec![rec], self.eval_seg(stage.model_tag(), "seg_geometry")?)
            }
            Stage::SegOurs => {
                let swap = self.head_swap();
                let rec = self.fine_tune_stage(stage, "h", "seg_ours", &c.seg_ft, Some(swap))?;
                (vec![rec], self.eval_seg(stage.model_tag(), "seg_ours")?)
            }
            Stage::SegFinal => {
                let teacher = self.model("seg_ours")?;
                let labels = pseudo_label(&teacher, self.dataset("x2_large")?, Task::Segmentation)?;
                self.data.remove("x2_large");
                let pseudo = self.store_pseudo("seg_final", &labels)?;
                let student = init_model(&self.seg_spec(), self.seed(STREAM_SEG_INIT))?;
                let cfg = self.config(&c.seg_final, stage as u64);
                let (student, trace) = train(student, &labels, &cfg)?;
                drop(labels);
                let student_out = self.store_model("seg_final_student", student)?;
                let mut recs = vec![
                    StageRecord {
                        stage: stage.name().into(),
                        kind: StageKind::PseudoLabel,
                        config: None,
                        inputs: vec![
                            self.artifact("seg_ours", &Self::model_rel("seg_ours"))?,
                            self.artifact("x2_large", &Self::data_rel("x2_large"))?,
                        ],
                        outputs: vec![pseudo.clone()],
                        loss_trace: Vec::new(),
                    },
                    StageRecord {
                        stage: stage.name().into(),
                        kind: StageKind::SegFinalRound,
                        config: Some(cfg),
                        inputs: vec![pseudo],
                        outputs: vec![student_out],
                        loss_trace: trace,
                    },
                ];
                // Stream offset keeps the fine-tune seed distinct from the student's.
                let ft_cfg = TrainConfig {
                    seed: self.seed(STREAM_STAGE_BASE + 1000 + stage as u64),
                    ..c.seg_ft.clone()
                };
                let student = self.model("seg_final_student")?;
                let (tuned, trace) = fine_tune(student, self.dataset("x1_train")?, &ft_cfg, None)?;
                let out = self.store_model("seg_final", tuned)?;
                recs.push(StageRecord {
                    stage: stage.name().into(),
                    kind: StageKind::FineTune,
                    config: Some(ft_cfg),
                    inputs: vec![
                        self.artifact("seg_final_student", &Self::model_rel("seg_final_student"))?,
                        self.artifact("x1_train", &Self::data_rel("x1_train"))?,
                    ],
                    outputs: vec![out],
                    loss_trace: trace,
                });
                (recs, self.eval_seg(stage.model_tag(), "seg_final")?)
            }
        })
    }

    fn step(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<(Vec<StageRecord>, Vec<MetricTable>)>) -> Result<()> {
        if self.ckpt.completed.iter().any(|c| c == name) {
            return Ok(());
        }
        audit::clear();
        let start = Instant::now();
        let outcome = f(self).and_then(|r| {
            if audit::touched_sidecar() {
                Err(Error::Rejected("a stage opened a quarantined ground-truth file".into()))
            } else {
                Ok(r)
            }
        });
        match outcome {
            Ok((records, tables)) => {
                self.timings.insert(name.to_string(), start.elapsed().as_secs_f64());
                self.ckpt.stages.extend(records);
                self.ckpt.tables.extend(tables);
                self.ckpt.completed.push(name.to_string());
                self.save_checkpoint()
            }
            Err(e) => {
                self.save_checkpoint()?;
                Err(Error::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                })
            }
        }
    }
}

/// Runs every requested stage in dependency order and writes
/// `run_record.json` under `<out_dir>/<run_id>/`. After each stage the
/// completed work is checkpointed; with `resume` a failed run continues
/// from the last completed stage.
pub fn run_pipeline(manifest: &Manifest, opts: &RunOptions) -> Result<RunRecord> {
    manifest.validate()?;
    let id = run_id(manifest);
    let dir = run_dir(manifest);
    let mut ckpt = Checkpoint {
        run_id: id.clone(),
        ..Checkpoint::default()
    };
    if opts.resume && dir.join(CHECKPOINT_FILE).exists() {
        let saved: Checkpoint = serde_json::from_str(&std::fs::read_to_string(dir.join(CHECKPOINT_FILE))?)?;
        if saved.run_id == id {
            ckpt = saved;
        }
    } else if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    for sub in ["data", "models", "pseudo"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let mut runner = Runner {
        m: manifest,
        dir: dir.clone(),
        ckpt,
        models: HashMap::new(),
        data: HashMap::new(),
        timings: BTreeMap::new(),
    };
    runner.step(GENERATE, |r| Ok((r.generate()?, Vec::new())))?;
    for stage in manifest.ordered_stages() {
        runner.step(stage.name(), |r| r.run_stage(stage))?;
    }
    let record = RunRecord {
        run_id: id,
        code_version: CODE_VERSION.to_string(),
        manifest: manifest.clone(),
        overrides: opts.overrides.clone(),
        stages: runner.ckpt.stages,
        tables: runner.ckpt.tables,
        environment: Environment::current(),
    };
    std::fs::write(dir.join(RUN_RECORD_FILE), record.to_json())?;
    std::fs::write(dir.join(TIMINGS_FILE), serde_json::to_string_pretty(&runner.timings)?)?;
    Ok(record)
}

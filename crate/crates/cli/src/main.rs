//! `pixcond` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pixcond::linear_oracle::{oracle_compare, oracle_pipeline};
use pixcond::model::{init_model, load_model, save_model, BackboneSpec, HeadKind};
use pixcond::pipeline::{
    distill, evaluate_normals, evaluate_segmentation, fine_tune, pseudo_label, run_dir, run_pipeline, train, HeadSwap,
    LRSchedule, Manifest, RunOptions, RunRecord, Task, TrainConfig, RUN_RECORD_FILE,
};
use pixcond::report::{emit_report, render_normals, Format};
use pixcond::rng::Rng;
use pixcond::synthdata::{gen_dataset, read_dataset, write_dataset, Dataset, DistributionSpec, NUM_SEG_CLASSES};
use pixcond::tensor::Tensor;

#[derive(Parser, Debug)]
#[command(name = "pixcond", version, about = "Train, pseudo-label, distill and fine-tune pixel-level predictors")]
struct Cli {
    /// Seed for data generation, initialization and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding pipeline runs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Experiment manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Manifest override `dotted.path=json`, applied after parsing; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset.
    GenData {
        /// Preset name (constrained, diverse) or path to a distribution JSON.
        #[arg(long, default_value = "constrained")]
        dist: String,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write images only; labels go to the `.gt` sidecar.
        #[arg(long)]
        unlabeled: bool,
        /// Image size as HxW.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
    },
    /// Train a fresh model on a labeled dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Backbone spec JSON; the default network otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        opt: TrainArgs,
    },
    /// Store a teacher's dense outputs on an unlabeled dataset.
    PseudoLabel {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TaskArg::Normals)]
        task: TaskArg,
    },
    /// Train a fresh student to mimic a teacher on an unlabeled dataset.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also keep the pseudo-labeled dataset here.
        #[arg(long)]
        pseudo_out: Option<PathBuf>,
        #[command(flatten)]
        opt: TrainArgs,
    },
    /// Continue training an existing model on labeled data.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Swap in a fresh segmentation head first.
        #[arg(long)]
        segmentation: bool,
        #[command(flatten)]
        opt: TrainArgs,
    },
    /// Score a model on a labeled dataset; prints JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Execute the manifest's stage graph.
    Pipeline {
        /// Continue from the run's checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Print a finished run's tables.
    Report {
        /// Run id (directory name under the out dir).
        #[arg(long)]
        run: String,
        #[arg(long, value_enum, default_value_t = FormatArg::Md)]
        format: FormatArg,
    },
    /// Check the closed-form linear pipeline on random full-rank problems.
    OracleCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Write a normal map as a PPM image.
    RenderNormals {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Predict with this model; ground truth is rendered otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Total SGD steps; drop points beyond it are discarded.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Steps at which the learning rate is multiplied by 0.1.
    #[arg(long, value_delimiter = ',')]
    drop_at: Option<Vec<usize>>,
    #[arg(long)]
    batch_images: Option<usize>,
    #[arg(long)]
    pixels_per_image: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TaskArg {
    Normals,
    Segmentation,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Normals => Task::Normals,
            TaskArg::Segmentation => Task::Segmentation,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Md,
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Md => Format::Md,
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HxW, e.g. 64x64")?;
    let parse = |v: &str| v.parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok((parse(h)?, parse(w)?))
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<pixcond::Error> for Failure {
    fn from(e: pixcond::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nUsage: pixcond [OPTIONS] <COMMAND>\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Writes to stdout; a reader that hung up early (`| head`) is not an error.
fn emit(text: &str) -> CmdResult {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Runtime(e.into())),
        _ => Ok(()),
    }
}

fn seed(cli: &Cli) -> u64 {
    cli.seed.unwrap_or(0)
}

fn train_config(cli: &Cli, a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut c = TrainConfig::default();
    let s = &mut c.schedule;
    if let Some(total) = a.steps {
        s.total_steps = total;
        s.drop_steps.retain(|&d| d < total);
    }
    if let Some(lr) = a.lr {
        s.initial_lr = lr;
    }
    if let Some(drops) = &a.drop_at {
        s.drop_steps = drops.clone();
    }
    c.schedule = LRSchedule::new(s.initial_lr, s.drop_factor, s.drop_steps.clone(), s.total_steps)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(b) = a.batch_images {
        c.batch_images = b;
    }
    if let Some(p) = a.pixels_per_image {
        c.pixels_per_image = p;
    }
    c.seed = seed(cli);
    c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(c)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn log_trace(trace: &[pixcond::pipeline::LossPoint]) {
    if let Some(last) = trace.last() {
        eprintln!("step {} loss {:.6}", last.step, last.loss);
    }
}

fn load_manifest(cli: &Cli) -> Result<Manifest, Failure> {
    let path = cli
        .manifest
        .as_ref()
        .ok_or_else(|| Failure::Usage("`pipeline` needs --manifest <PATH>".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(dir) = &cli.out_dir {
        overrides.push(format!("out_dir={}", serde_json::to_string(&dir.to_string_lossy())?));
    }
    Ok(Manifest::from_json_with_overrides(&text, &overrides)?)
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn run(cli: Cli) -> CmdResult {
    match &cli.command {
        Command::GenData {
            dist,
            count,
            out,
            unlabeled,
            size,
        } => {
            let mut spec = match DistributionSpec::preset(dist) {
                Ok(s) => s,
                Err(_) if Path::new(dist).exists() => load_json(Path::new(dist))?,
                Err(_) => return Err(Failure::Usage(format!("`{dist}` is neither a preset nor a file"))),
            };
            if let Some((h, w)) = size {
                spec = spec.with_size(*h, *w);
            }
            gen_dataset(&spec, *count, seed(&cli), !unlabeled, out)?;
            eprintln!("wrote {count} samples to {}", out.display());
        }
        Command::Train { data, out, spec, opt } => {
            let config = train_config(&cli, opt)?;
            let spec: BackboneSpec = match spec {
                Some(p) => load_json(p)?,
                None => BackboneSpec::default(),
            };
            let data = read_dataset(data)?;
            let (model, trace) = train(init_model(&spec, seed(&cli))?, &data, &config)?;
            log_trace(&trace);
            save_model(&model, out)?;
        }
        Command::PseudoLabel {
            teacher,
            data,
            out,
            task,
        } => {
            let labels = pseudo_label(&load_model(teacher)?, &read_dataset(data)?, (*task).into())?;
            write_dataset(&labels, out)?;
        }
        Command::Distill {
            teacher,
            data,
            out,
            pseudo_out,
            opt,
        } => {
            let config = train_config(&cli, opt)?;
            let teacher = load_model(teacher)?;
            let task = match teacher.spec.head_kind {
                HeadKind::Regression => Task::Normals,
                HeadKind::Classification => Task::Segmentation,
            };
            let d = distill(&teacher, &read_dataset(data)?, &teacher.spec, &config, seed(&cli), task)?;
            log_trace(&d.trace);
            save_model(&d.student, out)?;
            if let Some(p) = pseudo_out {
                write_dataset(&d.pseudo, p)?;
            }
        }
        Command::Finetune {
            model,
            data,
            out,
            segmentation,
            opt,
        } => {
            let config = train_config(&cli, opt)?;
            let swap = segmentation.then_some(HeadSwap {
                out_dim: NUM_SEG_CLASSES,
                kind: HeadKind::Classification,
                seed: seed(&cli),
            });
            let (model, trace) = fine_tune(load_model(model)?, &read_dataset(data)?, &config, swap)?;
            log_trace(&trace);
            save_model(&model, out)?;
        }
        Command::Eval { model, data } => {
            let model = load_model(model)?;
            let data = read_dataset(data)?;
            let json = match model.spec.head_kind {
                HeadKind::Regression => serde_json::to_string_pretty(&evaluate_normals(&model, &data)?)?,
                HeadKind::Classification => serde_json::to_string_pretty(&evaluate_segmentation(&model, &data)?)?,
            };
            emit(&format!("{json}\n"))?;
        }
        Command::Pipeline { resume } => {
            let manifest = load_manifest(&cli)?;
            let opts = RunOptions {
                resume: *resume,
                overrides: cli.overrides.clone(),
            };
            let record = run_pipeline(&manifest, &opts)?;
            let dir = run_dir(&manifest);
            for (format, name) in [(Format::Md, "report.md"), (Format::Csv, "report.csv"), (Format::Json, "report.json")] {
                std::fs::write(dir.join(name), emit_report(&record, format)?)
                    .with_context(|| format!("writing {name}"))?;
            }
            emit(&format!("{}\n", record.run_id))?;
            eprintln!("run written to {}", dir.display());
        }
        Command::Report { run, format } => {
            let base = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
            let path = base.join(run).join(RUN_RECORD_FILE);
            if !path.exists() {
                return Err(Failure::Runtime(anyhow!("no run record at {}", path.display())));
            }
            let record = RunRecord::load(&path)?;
            emit(&emit_report(&record, (*format).into())?)?;
        }
        Command::OracleCheck { instances } => oracle_check(seed(&cli), *instances)?,
        Command::RenderNormals { data, index, model, out } => {
            let data = read_dataset(data)?;
            let normals = match model {
                Some(m) => {
                    let rec = data
                        .records
                        .get(*index)
                        .ok_or_else(|| Failure::Usage(format!("index {index} out of range ({} samples)", data.len())))?;
                    load_model(m)?.forward_dense(&rec.image)?
                }
                None => ground_truth_normals(&data, *index)?,
            };
            render_normals(&normals, out)?;
        }
    }
    Ok(())
}

fn ground_truth_normals(data: &Dataset, index: usize) -> Result<Tensor<f32>, Failure> {
    let rec = data
        .records
        .get(index)
        .ok_or_else(|| Failure::Usage(format!("index {index} out of range ({} samples)", data.len())))?;
    rec.target
        .clone()
        .ok_or_else(|| Failure::Runtime(anyhow!("dataset has no normal maps; pass --model or a labeled dataset")))
}

const ORACLE_TOLERANCE: f64 = 1e-8;

fn oracle_check(seed: u64, instances: usize) -> CmdResult {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = Rng::new(Rng::derive_seed(seed, i as u64));
        let mut random = |rows, cols| nalgebra::DMatrix::from_fn(rows, cols, |_, _| rng.normal());
        let (x1, y1, x2) = (random(64, 6), random(64, 3), random(48, 6));
        let (wf, wg) = oracle_pipeline(&x1, &y1, &x2, 0.0)?;
        worst = worst.max(oracle_compare(&wg, &wf)?);
    }
    emit(&format!(
        "oracle-check: {instances} full-rank instances, max |Wg - Wf| = {worst:.3e} (tolerance {ORACLE_TOLERANCE:e})\n"
    ))?;
    if worst < ORACLE_TOLERANCE {
        Ok(())
    } else {
        Err(anyhow!("closed-form mimicry deviates by {worst:e}").into())
    }
}

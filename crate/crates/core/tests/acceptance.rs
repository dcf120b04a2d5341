//! Acceptance criteria AC-1 to AC-10, one PASS/FAIL line each.
//!
//! `PIXCOND_AC_SCALE=canonical` runs the experiments at full desk scale
//! (2,000 labeled 64x64 images, full-length schedules divided by 10); that takes
//! many hours on one core. The default `reduced` scale divides the full-length
//! schedules by 100, uses 800 labeled 32x32 images and raises the learning
//! rate tenfold so the product of rate and steps matches the desk schedule.
//! `PIXCOND_AC_ONLY=2,3` restricts the run to the listed criteria.
//!
//! Any failing correctness criterion (1, 5-9) fails the process. The
//! experimental criteria (2, 3, 4, 10) compare trained models; their FAIL
//! lines are reported but only fail the process under `PIXCOND_AC_STRICT=1`.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::canary::label_leakage_canary;
use common::gradients::{end_to_end_error, op_errors};
use common::linear::{full_rank_mimicry, iterative_deviation};
use common::metric_oracle::oracle_deviation;
use pixcond::metrics::normal_stats;
use pixcond::pipeline::{
    lr_at, run_dir, run_pipeline, DistributionRef, LRSchedule, Manifest, RunOptions, RunRecord, Stage,
    StageConfigs, Task, RUN_RECORD_FILE,
};
use pixcond::report::{emit_report, Format};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

const OP_TOL: f64 = 1e-4;
const END_TO_END_TOL: f64 = 1e-3;
const GRAD_BUDGET_SECS: f64 = 60.0;
const METRIC_TOL: f64 = 1e-6;
const MIMIC_TOL: f64 = 1e-8;
const ITERATIVE_TOL: f64 = 1e-3;
/// Seeds (of five) in which the distilled model must not lose.
const MIN_WINS: usize = 4;
const EXPERIMENTAL: [usize; 4] = [2, 3, 4, 10];

struct Scale {
    name: &'static str,
    n: usize,
    size: usize,
    divisor: usize,
    lr: Option<f64>,
    batch_images: Option<usize>,
    pixels_per_image: Option<usize>,
}

const REDUCED: Scale = Scale {
    name: "reduced",
    n: 800,
    size: 32,
    divisor: 100,
    lr: Some(0.01),
    batch_images: Some(4),
    pixels_per_image: Some(128),
};

const CANONICAL: Scale = Scale {
    name: "canonical",
    n: 2000,
    size: 64,
    divisor: 10,
    lr: None,
    batch_images: None,
    pixels_per_image: None,
};

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn report(o: &Outcome) {
    println!(
        "AC-{:<2} {}  {}: {}",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.title,
        o.detail
    );
}

fn ac1() -> Outcome {
    let t = Instant::now();
    let mut worst_op = ("", 0.0f64);
    let mut worst_e2e = 0.0f64;
    for seed in 0..3 {
        for (op, err) in op_errors(seed) {
            if err >= worst_op.1 {
                worst_op = (op, err);
            }
        }
        worst_e2e = worst_e2e.max(end_to_end_error(seed));
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        title: "gradient integrity",
        pass: worst_op.1 < OP_TOL && worst_e2e < END_TO_END_TOL && secs < GRAD_BUDGET_SECS,
        detail: format!(
            "worst op {} {:.1e} (< {OP_TOL:e}), end-to-end {:.1e} (< {END_TO_END_TOL:e}), 3 seeds, {secs:.1} s",
            worst_op.0, worst_op.1, worst_e2e
        ),
    }
}

fn ac5() -> Outcome {
    let worst = oracle_deviation(100);
    let s = normal_stats(&[10.0, 20.0, 30.0, 40.0]).unwrap();
    let hand = s.mean_deg == 25.0
        && s.median_deg == 25.0
        && (s.rmse_deg - 750f64.sqrt()).abs() < 1e-12
        && (s.rmse_deg - 27.386).abs() < 5e-4
        && s.pct_11_25 == 25.0
        && s.pct_22_5 == 50.0
        && s.pct_30 == 75.0;
    Outcome {
        id: 5,
        title: "metric oracles",
        pass: worst < METRIC_TOL && hand,
        detail: format!(
            "100 random 16x16 instances, worst deviation {worst:.1e} (< {METRIC_TOL:e}); hand example ({}, {}, {:.3}, {}, {}, {}) {}",
            s.mean_deg,
            s.median_deg,
            s.rmse_deg,
            s.pct_11_25,
            s.pct_22_5,
            s.pct_30,
            if hand { "exact" } else { "WRONG" }
        ),
    }
}

fn ac6() -> Outcome {
    let mimic = full_rank_mimicry(20);
    let (dev_f, dev_g) = iterative_deviation();
    Outcome {
        id: 6,
        title: "linear-oracle equivalence",
        pass: mimic < MIMIC_TOL && dev_f < ITERATIVE_TOL && dev_g < ITERATIVE_TOL,
        detail: format!(
            "full-rank |Wg - Wf| {mimic:.1e} (< {MIMIC_TOL:e}); iterative vs closed form: f {dev_f:.1e}, g {dev_g:.1e} (< {ITERATIVE_TOL:e})"
        ),
    }
}

fn ac7() -> Outcome {
    let f = LRSchedule::full_f();
    let h = LRSchedule::full_h();
    let points = [
        (&f, 0, 0.001),
        (&f, 49_999, 0.001),
        (&f, 50_000, 0.0001),
        (&f, 59_999, 0.0001),
        (&h, 199_999, 0.001),
        (&h, 200_000, 0.0001),
    ];
    let wrong: Vec<String> = points
        .iter()
        .filter(|(s, step, want)| lr_at(s, *step).ok() != Some(*want))
        .map(|(s, step, want)| format!("step {step}: {:?} != {want}", lr_at(s, *step).ok()))
        .collect();
    Outcome {
        id: 7,
        title: "schedule fidelity",
        pass: wrong.is_empty(),
        detail: if wrong.is_empty() {
            "f: 0 -> 0.001, 50,000 -> 0.0001; h: 199,999 -> 0.001, 200,000 -> 0.0001 (exact)".into()
        } else {
            wrong.join("; ")
        },
    }
}

fn ac8() -> Outcome {
    let c = label_leakage_canary();
    Outcome {
        id: 8,
        title: "no label leakage",
        pass: c.identical && c.sidecar_corrupted && !c.sidecar_read,
        detail: format!(
            "ground-truth sidecar corrupted: {}; sidecar opened during distillation: {}; student bytes identical: {}",
            c.sidecar_corrupted, c.sidecar_read, c.identical
        ),
    }
}

fn run_outputs(m: &Manifest) -> Vec<(String, Vec<u8>)> {
    let record = run_pipeline(m, &RunOptions::default()).unwrap();
    let mut out = vec![(
        RUN_RECORD_FILE.to_string(),
        std::fs::read(run_dir(m).join(RUN_RECORD_FILE)).unwrap(),
    )];
    for (f, name) in [(Format::Md, "report.md"), (Format::Csv, "report.csv"), (Format::Json, "report.json")] {
        out.push((name.into(), emit_report(&record, f).unwrap().into_bytes()));
    }
    out
}

fn ac9(dir: &Path) -> Outcome {
    let mut m = Manifest::minimal();
    m.out_dir = dir.join("minimal").to_string_lossy().into_owned();
    let first = run_outputs(&m);
    let second = run_outputs(&m);
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.as_str())
        .collect();
    Outcome {
        id: 9,
        title: "determinism",
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("minimal manifest run twice: {} files byte-identical", first.len())
        } else {
            format!("differs: {}", differing.join(", "))
        },
    }
}

fn scaled_manifest(scale: &Scale, seed: u64, x2: &str, task: Task, stages: Vec<Stage>, dir: &Path) -> Manifest {
    let mut m = Manifest::canonical_normals(scale.n);
    m.task = task;
    m.stages = stages;
    m.distributions.x2 = DistributionRef::Preset(x2.into());
    m.image_size = Some((scale.size, scale.size));
    m.configs = StageConfigs::scaled(scale.divisor);
    let seg_final_batch = m.configs.seg_final.batch_images;
    for c in m.configs_mut() {
        if let Some(lr) = scale.lr {
            c.schedule.initial_lr = lr;
        }
        if let Some(b) = scale.batch_images {
            c.batch_images = b;
        }
        if let Some(p) = scale.pixels_per_image {
            c.pixels_per_image = p;
        }
    }
    m.configs.seg_final.batch_images = seg_final_batch;
    m.seed = seed;
    m.out_dir = dir.to_string_lossy().into_owned();
    m
}

fn mean_error(r: &RunRecord, tag: &str) -> f64 {
    r.normals(tag).unwrap_or_else(|| panic!("missing table {tag}")).mean_deg
}

fn miou(r: &RunRecord, tag: &str) -> f64 {
    r.segmentation(tag).unwrap_or_else(|| panic!("missing table {tag}")).mean_iou
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
}

struct Experiments {
    /// Per seed: (f+FT, g+FT, h+FT) mean error and (scratch, ours, +final) mIoU.
    diverse: Vec<([f64; 3], [f64; 3])>,
    /// Per seed: (f+FT, g+FT) with X2 from the constrained distribution.
    constrained: Vec<[f64; 2]>,
}

fn run_experiments(scale: &Scale, dir: &Path, need_diverse: bool, need_constrained: bool) -> Experiments {
    let mut ex = Experiments {
        diverse: Vec::new(),
        constrained: Vec::new(),
    };
    for seed in SEEDS {
        if need_diverse {
            let t = Instant::now();
            let stages = vec![
                Stage::TrainF,
                Stage::FinetuneF,
                Stage::DistillG,
                Stage::FinetuneG,
                Stage::DistillH,
                Stage::FinetuneH,
                Stage::SegScratch,
                Stage::SegGeometry,
                Stage::SegOurs,
                Stage::SegFinal,
            ];
            let m = scaled_manifest(scale, seed, "diverse", Task::Segmentation, stages, &dir.join("diverse"));
            let r = run_pipeline(&m, &RunOptions::default()).unwrap();
            ex.diverse.push((
                [mean_error(&r, "f+FT"), mean_error(&r, "g+FT"), mean_error(&r, "h+FT")],
                [miou(&r, "scratch"), miou(&r, "ours (h)"), miou(&r, "+final")],
            ));
            eprintln!("[acceptance] seed {seed}: diverse run {:.0} s", t.elapsed().as_secs_f64());
        }
        if need_constrained {
            let t = Instant::now();
            let stages = vec![Stage::TrainF, Stage::FinetuneF, Stage::DistillG, Stage::FinetuneG];
            let m = scaled_manifest(scale, seed, "constrained", Task::Normals, stages, &dir.join("constrained"));
            let r = run_pipeline(&m, &RunOptions::default()).unwrap();
            ex.constrained.push([mean_error(&r, "f+FT"), mean_error(&r, "g+FT")]);
            eprintln!("[acceptance] seed {seed}: constrained-pool run {:.0} s", t.elapsed().as_secs_f64());
        }
    }
    ex
}

fn ac2(ex: &Experiments) -> Outcome {
    let f: Vec<f64> = ex.diverse.iter().map(|d| d.0[0]).collect();
    let g: Vec<f64> = ex.diverse.iter().map(|d| d.0[1]).collect();
    let wins = f.iter().zip(&g).filter(|(f, g)| g <= f).count();
    let gain = mean(&f) - mean(&g);
    Outcome {
        id: 2,
        title: "g+FT <= f+FT mean angular error",
        pass: wins >= MIN_WINS && gain >= 0.0,
        detail: format!(
            "{wins}/5 seeds (need {MIN_WINS}), seed-mean gain {gain:.3} deg (need >= 0); f+FT [{}], g+FT [{}]",
            fmt_list(&f),
            fmt_list(&g)
        ),
    }
}

fn ac3(ex: &Experiments) -> Outcome {
    let g: Vec<f64> = ex.diverse.iter().map(|d| d.0[1]).collect();
    let h: Vec<f64> = ex.diverse.iter().map(|d| d.0[2]).collect();
    Outcome {
        id: 3,
        title: "h+FT (5x pool) <= g+FT seed-mean error",
        pass: mean(&h) <= mean(&g),
        detail: format!("h+FT {:.3} vs g+FT {:.3}; h+FT [{}]", mean(&h), mean(&g), fmt_list(&h)),
    }
}

fn ac4(ex: &Experiments) -> Outcome {
    let gain = |pairs: &mut dyn Iterator<Item = (f64, f64)>| {
        let v: Vec<f64> = pairs.map(|(f, g)| f - g).collect();
        mean(&v)
    };
    let diverse = gain(&mut ex.diverse.iter().map(|d| (d.0[0], d.0[1])));
    let constrained = gain(&mut ex.constrained.iter().map(|c| (c[0], c[1])));
    let g: Vec<f64> = ex.constrained.iter().map(|c| c[1]).collect();
    Outcome {
        id: 4,
        title: "diversity ablation",
        pass: constrained < diverse,
        detail: format!(
            "seed-mean gain with constrained X2 {constrained:.3} deg vs diverse X2 {diverse:.3} deg (need smaller); g+FT constrained [{}]",
            fmt_list(&g)
        ),
    }
}

fn ac10(ex: &Experiments) -> Outcome {
    let scratch: Vec<f64> = ex.diverse.iter().map(|d| d.1[0]).collect();
    let ours: Vec<f64> = ex.diverse.iter().map(|d| d.1[1]).collect();
    let fin: Vec<f64> = ex.diverse.iter().map(|d| d.1[2]).collect();
    let wins = scratch.iter().zip(&ours).filter(|(s, o)| o >= s).count();
    Outcome {
        id: 10,
        title: "segmentation analog",
        pass: wins >= MIN_WINS && mean(&fin) >= mean(&ours),
        detail: format!(
            "ours >= scratch mIoU in {wins}/5 seeds (need {MIN_WINS}); +final seed-mean {:.3} vs ours {:.3} (need >=); scratch [{}], ours [{}], +final [{}]",
            mean(&fin),
            mean(&ours),
            fmt_list(&scratch),
            fmt_list(&ours),
            fmt_list(&fin)
        ),
    }
}

fn main() -> ExitCode {
    let scale = match std::env::var("PIXCOND_AC_SCALE").as_deref() {
        Ok("canonical") => &CANONICAL,
        Ok("reduced") | Err(_) => &REDUCED,
        Ok(other) => {
            eprintln!("PIXCOND_AC_SCALE must be `reduced` or `canonical`, got `{other}`");
            return ExitCode::FAILURE;
        }
    };
    let only: Option<BTreeSet<usize>> = std::env::var("PIXCOND_AC_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id));

    println!(
        "acceptance at {} scale: n = {}, {}x{} images, full schedules / {}, lr {}, {} seeds",
        scale.name,
        scale.n,
        scale.size,
        scale.size,
        scale.divisor,
        scale.lr.map_or("0.001".to_string(), |l| l.to_string()),
        SEEDS.len()
    );
    let dir = tempfile::tempdir().unwrap();
    let mut outcomes = Vec::new();
    let mut emit = |o: Outcome| {
        report(&o);
        outcomes.push(o);
    };
    if wanted(1) {
        emit(ac1());
    }
    if wanted(5) {
        emit(ac5());
    }
    if wanted(6) {
        emit(ac6());
    }
    if wanted(7) {
        emit(ac7());
    }
    if wanted(8) {
        emit(ac8());
    }
    if wanted(9) {
        emit(ac9(dir.path()));
    }
    let need_diverse = [2, 3, 4, 10].into_iter().any(&wanted);
    let need_constrained = wanted(4);
    if need_diverse || need_constrained {
        let ex = run_experiments(scale, dir.path(), need_diverse, need_constrained);
        if wanted(2) {
            emit(ac2(&ex));
        }
        if wanted(3) {
            emit(ac3(&ex));
        }
        if wanted(4) {
            emit(ac4(&ex));
        }
        if wanted(10) {
            emit(ac10(&ex));
        }
    }
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    let names = |v: &[&Outcome]| v.iter().map(|o| format!("AC-{}", o.id)).collect::<Vec<_>>().join(", ");
    println!(
        "acceptance: {}/{} criteria passed{}",
        outcomes.len() - failed.len(),
        outcomes.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" (failed: {})", names(&failed))
        }
    );
    let strict = std::env::var("PIXCOND_AC_STRICT").is_ok_and(|v| v == "1");
    let fatal: Vec<&Outcome> = failed
        .into_iter()
        .filter(|o| strict || !EXPERIMENTAL.contains(&o.id))
        .collect();
    if fatal.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("fatal: {}", names(&fatal));
        ExitCode::FAILURE
    }
}

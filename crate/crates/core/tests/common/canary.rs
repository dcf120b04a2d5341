use pixcond::model::{init_model, model_to_bytes, BackboneSpec};
use pixcond::pipeline::{distill, train, LRSchedule, Task, TrainConfig};
use pixcond::synthdata::{audit, gen_dataset, read_dataset, Dataset, DistributionSpec};

pub struct Canary {
    /// The tampered sidecar no longer parses.
    pub sidecar_corrupted: bool,
    /// Distillation opened a ground-truth sidecar at any point.
    pub sidecar_read: bool,
    /// Student bytes match before and after tampering.
    pub identical: bool,
}

fn config(steps: usize) -> TrainConfig {
    TrainConfig {
        schedule: LRSchedule::new(0.001, 0.1, vec![], steps).unwrap(),
        batch_images: 4,
        pixels_per_image: 32,
        momentum: 0.9,
        seed: 3,
        eval_every: 10,
    }
}

/// Distills from an unlabeled pool, scrambles the pool's ground-truth
/// sidecar, distills again and compares the students byte for byte.
pub fn label_leakage_canary() -> Canary {
    let dir = tempfile::tempdir().unwrap();
    let small = DistributionSpec::constrained().with_size(16, 16);
    let teacher_data = gen_dataset(&small, 6, 1, true, &dir.path().join("x1")).unwrap();
    let (teacher, _) = train(init_model(&BackboneSpec::default(), 1).unwrap(), &teacher_data, &config(20)).unwrap();

    let pool_path = dir.path().join("pool");
    gen_dataset(&DistributionSpec::diverse().with_size(16, 16), 6, 4, false, &pool_path).unwrap();
    let mut sidecar_read = false;
    let mut run = || {
        audit::clear();
        let pool = read_dataset(&pool_path).unwrap();
        let d = distill(&teacher, &pool, &BackboneSpec::default(), &config(20), 2, Task::Normals).unwrap();
        sidecar_read |= audit::touched_sidecar();
        model_to_bytes(&d.student)
    };
    let clean = run();
    let gt = Dataset::sidecar_path(&pool_path);
    let mut bytes = std::fs::read(&gt).unwrap();
    for b in bytes.iter_mut().skip(64) {
        *b = b.wrapping_mul(31).wrapping_add(7);
    }
    std::fs::write(&gt, bytes).unwrap();
    let tampered = run();
    Canary {
        sidecar_corrupted: read_dataset(&gt).is_err(),
        sidecar_read,
        identical: clean == tampered,
    }
}

use nalgebra::DMatrix;
use pixcond::linear_oracle::{oracle_compare, oracle_pipeline, pixel_design, LinearModel};
use pixcond::model::{init_model, BackboneSpec};
use pixcond::pipeline::{distill, pseudo_label, train, Task, TrainConfig};
use pixcond::rng::Rng;
use pixcond::synthdata::{Dataset, Sample};
use pixcond::tensor::Tensor;

/// Images of i.i.d. uniform [-1, 1] pixels with targets that are an exact
/// affine function of the pixel plus small noise.
pub fn affine_dataset(n: usize, size: usize, w0: &DMatrix<f64>, noise: f64, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let plane = size * size;
    let samples = (0..n)
        .map(|_| {
            let image = Tensor::from_fn(&[3, size, size], |_| rng.uniform() as f32 * 2.0 - 1.0);
            let mut normals = vec![0.0f32; 3 * plane];
            for p in 0..plane {
                for o in 0..3 {
                    let mut v = w0[(3, o)];
                    for k in 0..3 {
                        v += image.data()[k * plane + p] as f64 * w0[(k, o)];
                    }
                    normals[o * plane + p] = (v + noise * rng.normal()) as f32;
                }
            }
            Sample {
                image,
                normals: Tensor::new(vec![3, size, size], normals).unwrap(),
                seg: Tensor::zeros(&[size, size]),
                valid: Tensor::full(&[size, size], 1.0),
            }
        })
        .collect();
    Dataset::from_samples(0, samples).unwrap()
}

/// Trains f and distills g with linear networks under the default training
/// configuration, then returns how far each lands from the closed form.
pub fn iterative_deviation() -> (f64, f64) {
    let mut rng = Rng::new(5);
    let w0 = DMatrix::from_fn(4, 3, |_, _| rng.range(-0.5, 0.5));
    let x1 = affine_dataset(32, 16, &w0, 0.05, 1);
    let x2 = affine_dataset(32, 16, &w0, 0.0, 2).strip_labels();
    let spec = BackboneSpec::linear(3, 3);
    let config = TrainConfig::default();

    let (f, _) = train(init_model(&spec, 1).unwrap(), &x1, &config).unwrap();
    let d = distill(&f, &x2, &spec, &config, 2, Task::Normals).unwrap();

    let (dx1, dy1) = pixel_design(&x1).unwrap();
    let (dx2, _) = pixel_design(&pseudo_label(&f, &x2, Task::Normals).unwrap()).unwrap();
    let (wf, wg) = oracle_pipeline(&dx1, &dy1, &dx2, 0.0).unwrap();
    (
        oracle_compare(&LinearModel::from_model(&f).unwrap(), &wf).unwrap(),
        oracle_compare(&LinearModel::from_model(&d.student).unwrap(), &wg).unwrap(),
    )
}

/// Largest `|Wg - Wf|` over random full-rank problems with lambda = 0.
pub fn full_rank_mimicry(instances: u64) -> f64 {
    (0..instances)
        .map(|seed| {
            let mut rng = Rng::new(100 + seed);
            let mut random = |r, c| DMatrix::from_fn(r, c, |_, _| rng.normal());
            let (x1, y1, x2) = (random(40, 4), random(40, 3), random(25, 4));
            let (wf, wg) = oracle_pipeline(&x1, &y1, &x2, 0.0).unwrap();
            oracle_compare(&wg, &wf).unwrap()
        })
        .fold(0.0, f64::max)
}

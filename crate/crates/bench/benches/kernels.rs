use criterion::{criterion_group, criterion_main, Criterion};
use pixcond::model::{init_model, BackboneSpec, PixelBatch};
use pixcond::rng::Rng;
use pixcond::synthdata::{render_scene, DistributionSpec};
use pixcond::tensor::{conv2d, mse_loss, sgd_step, BnMode, Point, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform() as f32)
}

fn conv(c: &mut Criterion) {
    let input = random(&[8, 64, 32, 32], 1);
    let weight = random(&[64, 64, 3, 3], 2);
    let bias = Tensor::zeros(&[64]);
    c.bench_function("conv2d 8x64x32x32 k3", |b| b.iter(|| conv2d(&input, &weight, &bias, 1, 1).unwrap()));
}

// One SGD step at the default training shape: 8 images of 64x64, 256 pixels each.
fn train_step(c: &mut Criterion) {
    let mut model = init_model(&BackboneSpec::default(), 1).unwrap();
    let images = random(&[8, 3, 64, 64], 2);
    let mut rng = Rng::new(3);
    let px = PixelBatch {
        image_indices: (0..2048).map(|i| i / 256).collect(),
        coords: (0..2048).map(|_| Point::new(rng.below(64) as f64, rng.below(64) as f64)).collect(),
        ..Default::default()
    };
    let target = random(&[2048, 3], 4);
    c.bench_function("train step 8x256 @64x64", |b| {
        b.iter(|| {
            let (out, cache) = model.forward_sampled(&images, &px, BnMode::Train).unwrap();
            let (_, g) = mse_loss(&out, &target).unwrap();
            model.backward(cache.unwrap(), &g).unwrap();
            sgd_step(model.params_mut(), 1e-4, 0.9);
        })
    });
}

fn dense(c: &mut Criterion) {
    let model = init_model(&BackboneSpec::default(), 1).unwrap();
    let image = random(&[3, 64, 64], 5);
    c.bench_function("forward_dense 64x64", |b| b.iter(|| model.forward_dense(&image).unwrap()));
}

fn render(c: &mut Criterion) {
    let spec = DistributionSpec::diverse();
    let mut seed = 0;
    c.bench_function("render diverse 64x64", |b| {
        b.iter(|| {
            seed += 1;
            render_scene(&spec, seed).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, train_step, dense, render
}
criterion_main!(benches);

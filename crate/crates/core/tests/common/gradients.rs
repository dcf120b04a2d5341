use pixcond::model::{init_model_as, BackboneSpec, HeadKind, ModelState, PixelBatch};
use pixcond::rng::Rng;
use pixcond::tensor::{
    batchnorm, batchnorm_backward, bilinear_sample, bilinear_sample_backward, conv2d, conv2d_backward,
    cross_entropy_loss, grad_check, linear, linear_backward, mse_loss, relu, relu_backward, BnMode, Point, Tensor,
};

pub fn small_spec() -> BackboneSpec {
    BackboneSpec {
        in_channels: 3,
        blocks: vec![(4, 1), (5, 2)],
        fc_channels: vec![6],
        hypercolumn_taps: vec!["1_1".into(), "2_2".into(), "6".into()],
        head_hidden: vec![7],
        out_dim: 3,
        head_kind: HeadKind::Regression,
        init_std: 0.3,
    }
}

pub fn random_image(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform() as f32)
}

pub fn pixels(n: usize, batch: usize, h: usize, w: usize, seed: u64) -> PixelBatch {
    let mut rng = Rng::new(seed);
    PixelBatch {
        image_indices: (0..n).map(|_| rng.below(batch)).collect(),
        coords: (0..n)
            .map(|_| Point::new(rng.below(h) as f64, rng.below(w) as f64))
            .collect(),
        ..Default::default()
    }
}

/// Gradient of mse(forward_sampled) w.r.t. every parameter, checked in f64.
pub fn end_to_end_error(seed: u64) -> f64 {
    let base: ModelState<f64> = init_model_as(&small_spec(), seed).unwrap();
    let images = random_image(&[1, 3, 16, 16], seed + 100).cast::<f64>();
    let px = pixels(4, 1, 16, 16, seed + 200);
    let mut rng = Rng::new(seed + 300);
    let target = Tensor::<f64>::from_fn(&[4, 3], |_| rng.normal());
    let values: Vec<Tensor<f64>> = base.params().iter().map(|p| p.value.clone()).collect();
    let f = |inputs: &[Tensor<f64>]| {
        let mut m = base.clone();
        for (p, v) in m.params_mut().into_iter().zip(inputs) {
            p.value = v.clone();
        }
        let (out, cache) = m.forward_sampled(&images, &px, BnMode::Train).unwrap();
        let (loss, g) = mse_loss(&out, &target).unwrap();
        m.backward(cache.unwrap(), &g).unwrap();
        (loss, m.params().iter().map(|p| p.grad.clone()).collect())
    };
    grad_check(f, &values, 1e-4)
}

/// Finite-difference step for the op-level checks.
pub const OP_EPS: f64 = 1e-5;

fn normal(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// `<out, r>` for a fixed random projection `r`, so the upstream gradient is `r`.
fn project(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative gradient error of every differentiable op for one seed.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();

    let (x, w, b) = (normal(&[2, 3, 7, 6], &mut rng), normal(&[4, 3, 3, 3], &mut rng), normal(&[4], &mut rng));
    let r = normal(&[2, 4, 4, 3], &mut rng);
    let err = grad_check(
        |t| {
            let y = conv2d(&t[0], &t[1], &t[2], 2, 1).unwrap();
            let g = conv2d_backward(&t[0], &t[1], 2, 1, &r, true).unwrap();
            (project(&y, &r), vec![g.input.unwrap(), g.weight, g.bias])
        },
        &[x, w, b],
        OP_EPS,
    );
    out.push(("conv2d", err));

    let (x, gamma, beta) = (normal(&[3, 2, 3, 3], &mut rng), normal(&[2], &mut rng), normal(&[2], &mut rng));
    let r = normal(&[3, 2, 3, 3], &mut rng);
    let err = grad_check(
        |t| {
            let (mut rm, mut rv) = (Tensor::zeros(&[2]), Tensor::full(&[2], 1.0));
            let (y, cache) = batchnorm(&t[0], &t[1], &t[2], &mut rm, &mut rv, BnMode::Train, 0.1, 1e-5).unwrap();
            let g = batchnorm_backward(&cache.unwrap(), &t[1], &r).unwrap();
            (project(&y, &r), vec![g.input, g.gamma, g.beta])
        },
        &[x, gamma, beta],
        OP_EPS,
    );
    out.push(("batchnorm", err));

    // Keep inputs away from the kink so central differences are valid.
    let x = Tensor::from_fn(&[40], |_| {
        let m = rng.range(0.1, 1.0);
        if rng.uniform() < 0.5 { -m } else { m }
    });
    let r = normal(&[40], &mut rng);
    let err = grad_check(
        |t| {
            let y = relu(&t[0]);
            (project(&y, &r), vec![relu_backward(&y, &r).unwrap()])
        },
        &[x],
        OP_EPS,
    );
    out.push(("relu", err));

    let (x, w, b) = (normal(&[5, 4], &mut rng), normal(&[3, 4], &mut rng), normal(&[3], &mut rng));
    let r = normal(&[5, 3], &mut rng);
    let err = grad_check(
        |t| {
            let y = linear(&t[0], &t[1], &t[2]).unwrap();
            let g = linear_backward(&t[0], &t[1], &r).unwrap();
            (project(&y, &r), vec![g.input, g.weight, g.bias])
        },
        &[x, w, b],
        OP_EPS,
    );
    out.push(("linear", err));

    let fmap = normal(&[3, 5, 4], &mut rng);
    let points: Vec<Point> = (0..6).map(|_| Point::new(rng.range(0.0, 9.0), rng.range(0.0, 7.0))).collect();
    let r = normal(&[6, 3], &mut rng);
    let err = grad_check(
        |t| {
            let y = bilinear_sample(&t[0], &points, 0.5).unwrap();
            (project(&y, &r), vec![bilinear_sample_backward(t[0].shape(), &points, 0.5, &r).unwrap()])
        },
        &[fmap],
        OP_EPS,
    );
    out.push(("bilinear_sample", err));

    let (pred, target) = (normal(&[6, 3], &mut rng), normal(&[6, 3], &mut rng));
    let err = grad_check(
        |t| {
            let (l, g) = mse_loss(&t[0], &target).unwrap();
            (l, vec![g])
        },
        &[pred],
        OP_EPS,
    );
    out.push(("mse_loss", err));

    let logits = normal(&[6, 5], &mut rng);
    let labels: Vec<usize> = (0..6).map(|_| rng.below(5)).collect();
    let err = grad_check(
        |t| {
            let (l, g) = cross_entropy_loss(&t[0], &labels).unwrap();
            (l, vec![g])
        },
        &[logits],
        OP_EPS,
    );
    out.push(("cross_entropy_loss", err));
    out
}

use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Saved state from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T = f32> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T = f32> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Per-channel batch normalization over `(B, H, W)` of a `[B,C,H,W]` tensor.
///
/// Train mode normalizes with the biased batch statistics and folds them into
/// the running estimates as `running = momentum * running + (1 - momentum) *
/// batch`. Eval mode normalizes with the running estimates and returns no
/// cache.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    mode: BnMode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    input.expect_rank("batchnorm", 4)?;
    let (b, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    for (name, t) in [
        ("gamma", &*gamma),
        ("beta", &*beta),
        ("running_mean", &*running_mean),
        ("running_var", &*running_var),
    ] {
        if t.shape() != [c] {
            return Err(shape_err(
                "batchnorm",
                format!("{name} shape {:?}, expected [{c}]", t.shape()),
            ));
        }
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("batchnorm: eps must be > 0".into()));
    }
    let plane = h * w;
    let count = b * plane;
    let mut out = Tensor::zeros(input.shape());

    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        BnMode::Eval => (
            running_mean.data().iter().map(|v| v.as_f64()).collect(),
            running_var.data().iter().map(|v| v.as_f64()).collect(),
        ),
        BnMode::Train => {
            if count < 2 {
                return Err(Error::InvalidArgument(
                    "batchnorm: train mode needs at least 2 values per channel".into(),
                ));
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    let off = (bi * c + ch) * plane;
                    s += input.data()[off..off + plane]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                let m = s / count as f64;
                let mut sq = 0.0;
                for bi in 0..b {
                    let off = (bi * c + ch) * plane;
                    sq += input.data()[off..off + plane]
                        .iter()
                        .map(|v| (v.as_f64() - m).powi(2))
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = sq / count as f64;
            }
            for ch in 0..c {
                let rm = &mut running_mean.data_mut()[ch];
                *rm = T::of(momentum * rm.as_f64() + (1.0 - momentum) * mean[ch]);
                let rv = &mut running_var.data_mut()[ch];
                *rv = T::of(momentum * rv.as_f64() + (1.0 - momentum) * var[ch]);
            }
            (mean, var)
        }
    };

    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + eps).sqrt())).collect();
    let mean: Vec<T> = mean.into_iter().map(T::of).collect();
    let mut xhat = match mode {
        BnMode::Train => Some(Tensor::zeros(input.shape())),
        BnMode::Eval => None,
    };
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * plane;
            let (m, s, g, be) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            let src = &input.data()[off..off + plane];
            let dst = &mut out.data_mut()[off..off + plane];
            match xhat.as_mut() {
                Some(xh) => {
                    let xh = &mut xh.data_mut()[off..off + plane];
                    for ((d, x), n) in dst.iter_mut().zip(src).zip(xh.iter_mut()) {
                        *n = (*x - m) * s;
                        *d = *n * g + be;
                    }
                }
                None => {
                    for (d, x) in dst.iter_mut().zip(src) {
                        *d = (*x - m) * s * g + be;
                    }
                }
            }
        }
    }
    let cache = xhat.map(|xhat| BatchNormCache { xhat, inv_std });
    Ok((out, cache))
}

pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BnGrads<T>> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(shape_err(
            "batchnorm_backward",
            format!("grad {:?} vs input {:?}", grad_out.shape(), cache.xhat.shape()),
        ));
    }
    let shape = grad_out.shape();
    let (b, c) = (shape[0], shape[1]);
    let plane = shape[2] * shape[3];
    let n = (b * plane) as f64;
    let mut d_gamma = Tensor::zeros(&[c]);
    let mut d_beta = Tensor::zeros(&[c]);
    let mut d_input = Tensor::zeros(shape);
    for ch in 0..c {
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for bi in 0..b {
            let off = (bi * c + ch) * plane;
            let g = &grad_out.data()[off..off + plane];
            let x = &cache.xhat.data()[off..off + plane];
            for (gv, xv) in g.iter().zip(x) {
                sum_g += gv.as_f64();
                sum_gx += gv.as_f64() * xv.as_f64();
            }
        }
        d_gamma.data_mut()[ch] = T::of(sum_gx);
        d_beta.data_mut()[ch] = T::of(sum_g);
        let gm = gamma.data()[ch];
        let scale = gm * cache.inv_std[ch];
        let mean_g = T::of(sum_g / n);
        let mean_gx = T::of(sum_gx / n);
        for bi in 0..b {
            let off = (bi * c + ch) * plane;
            let g = &grad_out.data()[off..off + plane];
            let x = &cache.xhat.data()[off..off + plane];
            let d = &mut d_input.data_mut()[off..off + plane];
            for ((dv, gv), xv) in d.iter_mut().zip(g).zip(x) {
                *dv = scale * (*gv - mean_g - *xv * mean_gx);
            }
        }
    }
    Ok(BnGrads {
        input: d_input,
        gamma: d_gamma,
        beta: d_beta,
    })
}

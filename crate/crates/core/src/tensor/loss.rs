use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Mean squared error over all elements and its gradient.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(shape_err(
            "mse_loss",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let n = pred.numel() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0f64;
    let k = T::of(2.0 / n);
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = *p - *t;
        sum += d.as_f64() * d.as_f64();
        *g = k * d;
    }
    Ok((sum / n, grad))
}

/// Mean softmax cross-entropy of `logits[P, classes]` against class indices.
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    logits.expect_rank("cross_entropy_loss", 2)?;
    let (p, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != p {
        return Err(shape_err(
            "cross_entropy_loss",
            format!("{} labels for {p} rows", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::OutOfBounds {
            op: "cross_entropy_loss",
            detail: format!("label {bad} with {classes} classes"),
        });
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0f64;
    let inv_p = 1.0 / p as f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() - (row[label].as_f64() - max);
        let g = &mut grad.data_mut()[i * classes..(i + 1) * classes];
        for (c, (gv, e)) in g.iter_mut().zip(&exps).enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            *gv = T::of((e / z - onehot) * inv_p);
        }
    }
    Ok((total * inv_p, grad))
}

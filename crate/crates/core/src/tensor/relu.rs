use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > T::zero() { *v } else { T::zero() });
    out
}

/// Gradient gate. `activation` may be either the ReLU input or its output:
/// both are positive at exactly the same positions. The subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(activation: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if activation.shape() != grad_out.shape() {
        return Err(shape_err(
            "relu_backward",
            format!("{:?} vs {:?}", activation.shape(), grad_out.shape()),
        ));
    }
    let mut g = grad_out.clone();
    for (gv, a) in g.data_mut().iter_mut().zip(activation.data()) {
        if *a <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

pub(crate) fn relu_inplace<T: Scalar>(t: &mut Tensor<T>) {
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > T::zero() { *v } else { T::zero() });
}

pub(crate) fn relu_backward_inplace<T: Scalar>(activation: &Tensor<T>, grad: &mut Tensor<T>) {
    for (gv, a) in grad.data_mut().iter_mut().zip(activation.data()) {
        if *a <= T::zero() {
            *gv = T::zero();
        }
    }
}

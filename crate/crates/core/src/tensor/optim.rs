use super::{Scalar, Tensor};

/// Trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum_buf: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum_buf = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            momentum_buf,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn accumulate(&mut self, g: &Tensor<T>) {
        debug_assert_eq!(g.shape(), self.grad.shape());
        for (a, b) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *a += *b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            value: self.value.cast(),
            grad: self.grad.cast(),
            momentum_buf: self.momentum_buf.cast(),
        }
    }
}

/// Heavy-ball SGD: `buf = momentum * buf + grad; value -= lr * buf`, then the
/// gradients are zeroed.
pub fn sgd_step<'a, T: Scalar>(params: impl IntoIterator<Item = &'a mut Param<T>>, lr: f64, momentum: f64) {
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for p in params {
        for ((v, g), b) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data_mut().iter_mut())
            .zip(p.momentum_buf.data_mut().iter_mut())
        {
            *b = mu * *b + *g;
            *v -= lr * *b;
            *g = T::zero();
        }
    }
}

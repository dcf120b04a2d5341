use super::gemm::{gemm, MatRef};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone)]
pub struct LinearGrads<T = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    input.expect_rank(op, 2)?;
    weight.expect_rank(op, 2)?;
    let (b, din) = (input.shape()[0], input.shape()[1]);
    let (dout, wdin) = (weight.shape()[0], weight.shape()[1]);
    if din != wdin {
        return Err(shape_err(
            op,
            format!("input width {din}, weight expects {wdin}"),
        ));
    }
    Ok((b, din, dout))
}

/// `input[B,Din] * weight[Dout,Din]^T + bias[Dout]`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, din, dout) = check("linear", input, weight)?;
    if bias.shape() != [dout] {
        return Err(shape_err(
            "linear",
            format!("bias shape {:?}, expected [{dout}]", bias.shape()),
        ));
    }
    let mut out = Tensor::zeros(&[b, dout]);
    for row in out.data_mut().chunks_mut(dout) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        b,
        din,
        dout,
        T::one(),
        MatRef::rows(input.data(), din),
        MatRef::rows_t(weight.data(), din),
        T::one(),
        out.data_mut(),
    );
    Ok(out)
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (b, din, dout) = check("linear_backward", input, weight)?;
    if grad_out.shape() != [b, dout] {
        return Err(shape_err(
            "linear_backward",
            format!("grad_out {:?}, expected [{b}, {dout}]", grad_out.shape()),
        ));
    }
    let mut d_input = Tensor::zeros(&[b, din]);
    gemm(
        b,
        dout,
        din,
        T::one(),
        MatRef::rows(grad_out.data(), dout),
        MatRef::rows(weight.data(), din),
        T::zero(),
        d_input.data_mut(),
    );
    let mut d_weight = Tensor::zeros(&[dout, din]);
    gemm(
        dout,
        b,
        din,
        T::one(),
        MatRef::rows_t(grad_out.data(), dout),
        MatRef::rows(input.data(), din),
        T::zero(),
        d_weight.data_mut(),
    );
    let mut d_bias = Tensor::zeros(&[dout]);
    for row in grad_out.data().chunks(dout) {
        for (d, g) in d_bias.data_mut().iter_mut().zip(row) {
            *d += *g;
        }
    }
    Ok(LinearGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn hand_arithmetic() {
        let x = Tensor::<f32>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![1], vec![10.0]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[21.0]);
    }

    #[test]
    fn identity_weight() {
        let mut rng = Rng::new(2);
        let x = Tensor::<f64>::from_fn(&[3, 4], |_| rng.normal());
        let w = Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        assert_eq!(linear(&x, &w, &Tensor::zeros(&[4])).unwrap(), x);
    }

    #[test]
    fn naive_matmul_oracle() {
        let mut rng = Rng::new(5);
        for (b, din, dout) in [(1, 1, 1), (3, 7, 2), (9, 16, 11)] {
            let x = Tensor::<f64>::from_fn(&[b, din], |_| rng.normal());
            let w = Tensor::<f64>::from_fn(&[dout, din], |_| rng.normal());
            let bias = Tensor::<f64>::from_fn(&[dout], |_| rng.normal());
            let y = linear(&x, &w, &bias).unwrap();
            for i in 0..b {
                for o in 0..dout {
                    let mut acc = bias.data()[o];
                    for k in 0..din {
                        acc += x.data()[i * din + k] * w.data()[o * din + k];
                    }
                    assert!((y.data()[i * dout + o] - acc).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::<f32>::zeros(&[4, 2]);
        assert!(linear(&x, &w, &Tensor::zeros(&[4])).is_err());
        let w = Tensor::<f32>::zeros(&[4, 3]);
        assert!(linear(&x, &w, &Tensor::zeros(&[3])).is_err());
    }
}

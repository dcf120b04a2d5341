use super::gemm::{gemm, MatRef};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Output extent of a convolution along one axis (floor division, as in
/// every mainstream framework).
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d: stride must be >= 1".into()));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(shape_err(
            "conv2d",
            format!("kernel {kernel} larger than padded input {padded}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Geometry> {
    input.expect_rank("conv2d", 4)?;
    weight.expect_rank("conv2d", 4)?;
    let (c, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    let (wc, kh, kw) = (weight.shape()[1], weight.shape()[2], weight.shape()[3]);
    if wc != c {
        return Err(shape_err(
            "conv2d",
            format!("input has {c} channels, weight expects {wc}"),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d: kernel must be odd, got {kh}x{kw}"
        )));
    }
    Ok(Geometry {
        c,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        ho: conv_output_size(h, kh, stride, pad)?,
        wo: conv_output_size(w, kw, stride, pad)?,
    })
}

fn im2col<T: Scalar>(g: &Geometry, image: &[T], col: &mut [T]) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        let src = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, v) in out_row.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *v = if iw < 0 || iw >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &Geometry, col: &[T], image: &mut [T]) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        let dst = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst_row[iw as usize] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation over a batch: `[B,C,H,W] * [K,C,kh,kw] + [K]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = geometry(input, weight, stride, pad)?;
    let (b, k) = (input.shape()[0], weight.shape()[0]);
    if bias.shape() != [k] {
        return Err(shape_err(
            "conv2d",
            format!("bias shape {:?}, expected [{k}]", bias.shape()),
        ));
    }
    let patch = g.c * g.kh * g.kw;
    let plane = g.ho * g.wo;
    let mut out = Tensor::zeros(&[b, k, g.ho, g.wo]);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };
    for bi in 0..b {
        let image = input.slab(bi);
        let dst = out.slab_mut(bi);
        for (kk, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[kk]);
        }
        let rhs = if g.is_pointwise() {
            MatRef::rows(image, plane)
        } else {
            im2col(&g, image, &mut col);
            MatRef::rows(&col, plane)
        };
        gemm(
            k,
            patch,
            plane,
            T::one(),
            MatRef::rows(weight.data(), patch),
            rhs,
            T::one(),
            dst,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads<T = f32> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<Conv2dGrads<T>> {
    let g = geometry(input, weight, stride, pad)?;
    let (b, k) = (input.shape()[0], weight.shape()[0]);
    if grad_out.shape() != [b, k, g.ho, g.wo] {
        return Err(shape_err(
            "conv2d_backward",
            format!(
                "grad_out {:?}, expected {:?}",
                grad_out.shape(),
                [b, k, g.ho, g.wo]
            ),
        ));
    }
    let patch = g.c * g.kh * g.kw;
    let plane = g.ho * g.wo;
    let mut d_weight = Tensor::zeros(weight.shape());
    let mut d_bias = Tensor::zeros(&[k]);
    let mut d_input = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let pointwise = g.is_pointwise();
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };
    let mut d_col = if pointwise || !need_input_grad {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };
    for bi in 0..b {
        let go = grad_out.slab(bi);
        for (kk, chunk) in go.chunks(plane).enumerate() {
            d_bias.data_mut()[kk] += chunk.iter().copied().sum();
        }
        let image = input.slab(bi);
        let col_view = if pointwise {
            image
        } else {
            im2col(&g, image, &mut col);
            &col
        };
        // dW[K, patch] += dOut[K, plane] * col^T[plane, patch]
        gemm(
            k,
            plane,
            patch,
            T::one(),
            MatRef::rows(go, plane),
            MatRef::rows_t(col_view, plane),
            T::one(),
            d_weight.data_mut(),
        );
        if let Some(d_in) = d_input.as_mut() {
            let dst = d_in.slab_mut(bi);
            // dCol[patch, plane] = W^T[patch, K] * dOut[K, plane]
            let target: &mut [T] = if pointwise { dst } else { &mut d_col };
            gemm(
                patch,
                k,
                plane,
                T::one(),
                MatRef::rows_t(weight.data(), patch),
                MatRef::rows(go, plane),
                T::zero(),
                target,
            );
            if !pointwise {
                col2im(&g, &d_col, d_in.slab_mut(bi));
            }
        }
    }
    Ok(Conv2dGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}

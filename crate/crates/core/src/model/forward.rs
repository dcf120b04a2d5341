use super::{ConvLayer, ModelState, PixelBatch, TapSource, BN_EPS, BN_MOMENTUM};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, linear, linear_backward, relu::relu_backward_inplace,
    relu::relu_inplace, BatchNormCache, BilinearTaps, BnMode, Point, Scalar, Tensor,
};

type Sampler = (usize, BilinearTaps, Vec<usize>);

/// Activations saved by a train-mode forward pass for [`ModelState::backward`].
#[derive(Debug)]
pub struct ForwardCache<T = f32> {
    /// `acts[0]` is the input batch, `acts[i + 1]` the output of conv layer `i`.
    acts: Vec<Tensor<T>>,
    bn: Vec<BatchNormCache<T>>,
    /// Per tap, per non-empty image: image index, sampler, destination rows.
    samplers: Vec<Vec<Sampler>>,
    /// Input of every head layer.
    head_inputs: Vec<Tensor<T>>,
}

fn conv_block<T: Scalar>(
    layer: &ConvLayer<T>,
    x: &Tensor<T>,
    mode: BnMode,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let z = conv2d(x, &layer.weight.value, &layer.bias.value, layer.stride, layer.pad)?;
    let (mut y, cache) = batchnorm(
        &z,
        &layer.gamma.value,
        &layer.beta.value,
        running_mean,
        running_var,
        mode,
        BN_MOMENTUM,
        BN_EPS,
    )?;
    relu_inplace(&mut y);
    Ok((y, cache))
}

impl<T: Scalar> ModelState<T> {
    /// Number of conv layers that must run to produce every tapped feature.
    fn active_layers(&self, taps: &[(TapSource, usize)]) -> usize {
        taps.iter()
            .map(|(s, _)| match s {
                TapSource::Input => 0,
                TapSource::Layer(i) => i + 1,
            })
            .max()
            .unwrap_or(0)
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<()> {
        images.expect_rank("forward", 4)?;
        if images.shape()[1] != self.spec.in_channels {
            return Err(shape_err(
                "forward",
                format!(
                    "images have {} channels, model expects {}",
                    images.shape()[1],
                    self.spec.in_channels
                ),
            ));
        }
        Ok(())
    }

    fn backbone_eval(&self, images: &Tensor<T>, depth: usize) -> Result<Vec<Tensor<T>>> {
        let mut acts = vec![images.clone()];
        for layer in &self.convs[..depth] {
            let mut rm = layer.running_mean.clone();
            let mut rv = layer.running_var.clone();
            let (y, _) = conv_block(layer, acts.last().unwrap(), BnMode::Eval, &mut rm, &mut rv)?;
            acts.push(y);
        }
        Ok(acts)
    }

    fn backbone_train(&mut self, images: &Tensor<T>, depth: usize) -> Result<(Vec<Tensor<T>>, Vec<BatchNormCache<T>>)> {
        let mut acts = vec![images.clone()];
        let mut caches = Vec::with_capacity(depth);
        for i in 0..depth {
            let layer = &mut self.convs[i];
            let mut rm = std::mem::replace(&mut layer.running_mean, Tensor::zeros(&[1]));
            let mut rv = std::mem::replace(&mut layer.running_var, Tensor::zeros(&[1]));
            let out = conv_block(layer, acts.last().unwrap(), BnMode::Train, &mut rm, &mut rv);
            layer.running_mean = rm;
            layer.running_var = rv;
            let (y, cache) = out?;
            acts.push(y);
            caches.push(cache.expect("train mode returns a cache"));
        }
        Ok((acts, caches))
    }

    /// Gathers hypercolumns `[P, D]` for the pixels of `pixels`.
    fn hypercolumns(
        &self,
        acts: &[Tensor<T>],
        taps: &[(TapSource, usize)],
        image_indices: &[usize],
        coords: &[Point],
    ) -> Result<(Tensor<T>, Vec<Vec<Sampler>>)> {
        let (b, h, w) = (acts[0].shape()[0], acts[0].shape()[2], acts[0].shape()[3]);
        if image_indices.len() != coords.len() {
            return Err(shape_err(
                "forward",
                format!("{} image indices for {} pixels", image_indices.len(), coords.len()),
            ));
        }
        if coords.is_empty() {
            return Err(Error::InvalidArgument("forward: empty pixel batch".into()));
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); b];
        for (i, &img) in image_indices.iter().enumerate() {
            if img >= b {
                return Err(Error::OutOfBounds {
                    op: "forward",
                    detail: format!("image index {img} with batch of {b}"),
                });
            }
            groups[img].push(i);
        }
        let dim: usize = taps.iter().map(|(_, c)| c).sum();
        let mut hyper = Tensor::zeros(&[coords.len(), dim]);
        let mut samplers = Vec::with_capacity(taps.len());
        let mut offset = 0;
        for &(source, channels) in taps {
            let feat = match source {
                TapSource::Input => &acts[0],
                TapSource::Layer(i) => &acts[i + 1],
            };
            let (hf, wf) = (feat.shape()[2], feat.shape()[3]);
            let mut per_image = Vec::new();
            for (img, rows) in groups.iter().enumerate() {
                if rows.is_empty() {
                    continue;
                }
                let pts: Vec<Point> = rows.iter().map(|&r| coords[r]).collect();
                let sampler = BilinearTaps::for_image(hf, wf, h as f64, w as f64, &pts)?;
                sampler.gather(feat.slab(img), channels, hyper.data_mut(), dim, offset, rows);
                per_image.push((img, sampler, rows.clone()));
            }
            samplers.push(per_image);
            offset += channels;
        }
        Ok((hyper, samplers))
    }

    fn head_forward(&self, hyper: Tensor<T>, keep_inputs: bool) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut inputs = Vec::new();
        let mut x = hyper;
        let last = self.head.len() - 1;
        for (j, layer) in self.head.iter().enumerate() {
            let mut z = linear(&x, &layer.weight.value, &layer.bias.value)?;
            if j < last {
                relu_inplace(&mut z);
            }
            if keep_inputs {
                inputs.push(std::mem::replace(&mut x, z));
            } else {
                x = z;
            }
        }
        Ok((x, inputs))
    }

    /// Predictions `[P, out_dim]` at the pixels of `pixels`.
    ///
    /// Train mode normalizes with batch statistics, updates the running
    /// statistics and returns the cache needed by [`backward`](Self::backward).
    /// Eval mode leaves the model untouched.
    pub fn forward_sampled(
        &mut self,
        images: &Tensor<T>,
        pixels: &PixelBatch,
        mode: BnMode,
    ) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        match mode {
            BnMode::Eval => Ok((self.predict_sampled(images, pixels)?, None)),
            BnMode::Train => {
                self.check_images(images)?;
                let taps = self.spec.taps()?;
                let depth = self.active_layers(&taps);
                let (acts, bn) = self.backbone_train(images, depth)?;
                let (hyper, samplers) = self.hypercolumns(&acts, &taps, &pixels.image_indices, &pixels.coords)?;
                let (out, head_inputs) = self.head_forward(hyper, true)?;
                Ok((
                    out,
                    Some(ForwardCache {
                        acts,
                        bn,
                        samplers,
                        head_inputs,
                    }),
                ))
            }
        }
    }

    /// Eval-mode [`forward_sampled`](Self::forward_sampled).
    pub fn predict_sampled(&self, images: &Tensor<T>, pixels: &PixelBatch) -> Result<Tensor<T>> {
        self.check_images(images)?;
        let taps = self.spec.taps()?;
        let acts = self.backbone_eval(images, self.active_layers(&taps))?;
        let (hyper, _) = self.hypercolumns(&acts, &taps, &pixels.image_indices, &pixels.coords)?;
        Ok(self.head_forward(hyper, false)?.0)
    }

    /// Eval-mode prediction at every pixel of one `[C,H,W]` image; returns
    /// `[out_dim, H, W]`.
    pub fn forward_dense(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        image.expect_rank("forward_dense", 3)?;
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let batch = image.clone().reshape(&[1, image.shape()[0], h, w])?;
        self.check_images(&batch)?;
        let taps = self.spec.taps()?;
        let acts = self.backbone_eval(&batch, self.active_layers(&taps))?;
        let coords: Vec<Point> = (0..h * w)
            .map(|i| Point::new((i / w) as f64, (i % w) as f64))
            .collect();
        let (hyper, _) = self.hypercolumns(&acts, &taps, &vec![0; h * w], &coords)?;
        let (out, _) = self.head_forward(hyper, false)?;
        let d = self.spec.out_dim;
        let mut dense = Tensor::zeros(&[d, h, w]);
        for (p, row) in out.data().chunks(d).enumerate() {
            for (k, v) in row.iter().enumerate() {
                dense.data_mut()[k * h * w + p] = *v;
            }
        }
        Ok(dense)
    }

    /// Accumulates parameter gradients for `grad_out = dLoss/dOutput`.
    pub fn backward(&mut self, cache: ForwardCache<T>, grad_out: &Tensor<T>) -> Result<()> {
        let ForwardCache {
            acts,
            bn,
            samplers,
            head_inputs,
        } = cache;
        let mut g = grad_out.clone();
        for j in (0..self.head.len()).rev() {
            let layer = &mut self.head[j];
            let lg = linear_backward(&head_inputs[j], &layer.weight.value, &g)?;
            layer.weight.accumulate(&lg.weight);
            layer.bias.accumulate(&lg.bias);
            g = lg.input;
            if j > 0 {
                relu_backward_inplace(&head_inputs[j], &mut g);
            }
        }

        let taps = self.spec.taps()?;
        let dim: usize = taps.iter().map(|(_, c)| c).sum();
        let mut act_grads: Vec<Option<Tensor<T>>> = vec![None; acts.len()];
        let mut offset = 0;
        for ((source, channels), per_image) in taps.iter().zip(&samplers) {
            if let TapSource::Layer(i) = source {
                let slot = act_grads[i + 1].get_or_insert_with(|| Tensor::zeros(acts[i + 1].shape()));
                let (c, hf, wf) = (acts[i + 1].shape()[1], acts[i + 1].shape()[2], acts[i + 1].shape()[3]);
                debug_assert_eq!(c, *channels);
                let plane = c * hf * wf;
                for (img, sampler, rows) in per_image {
                    let dst = &mut slot.data_mut()[img * plane..(img + 1) * plane];
                    sampler.scatter(g.data(), *channels, dim, offset, rows, dst);
                }
            }
            offset += channels;
        }

        for i in (0..bn.len()).rev() {
            let Some(mut ga) = act_grads[i + 1].take() else {
                continue;
            };
            relu_backward_inplace(&acts[i + 1], &mut ga);
            let layer = &mut self.convs[i];
            let bg = batchnorm_backward(&bn[i], &layer.gamma.value, &ga)?;
            layer.gamma.accumulate(&bg.gamma);
            layer.beta.accumulate(&bg.beta);
            let cg = conv2d_backward(&acts[i], &layer.weight.value, layer.stride, layer.pad, &bg.input, i > 0)?;
            layer.weight.accumulate(&cg.weight);
            layer.bias.accumulate(&cg.bias);
            if let Some(gi) = cg.input {
                match act_grads[i].as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a += *b;
                        }
                    }
                    None => act_grads[i] = Some(gi),
                }
            }
        }
        Ok(())
    }
}

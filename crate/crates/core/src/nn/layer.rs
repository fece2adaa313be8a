use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// 2-D convolution geometry. Weights are `(out, in, kh, kw)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl Conv2dSpec {
    pub fn new(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride: 1,
            padding: 0,
            bias: true,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w || self.stride == 0 {
            return None;
        }
        Some((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// Fully connected; weights are `(outputs, inputs)`.
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    Conv2d(Conv2dSpec),
    Relu,
    MaxPool2d {
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
    },
    /// Channel-and-spatial max pooling with stride equal to the kernel.
    MaxPool3d {
        kernel_c: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    Flatten,
    BatchNorm {
        channels: usize,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d(_) => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::MaxPool3d { .. } => "maxpool3d",
            LayerKind::Flatten => "flatten",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Dropout { .. } => "dropout",
        }
    }

    /// Dense and convolution layers carry prunable weight matrices.
    pub fn is_prunable(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2d(_))
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |expected: Vec<usize>| Error::shape(self.name(), &expected, input);
        match *self {
            LayerKind::Dense { inputs, outputs, .. } => {
                if input != [inputs] {
                    return Err(bad(vec![inputs]));
                }
                Ok(vec![outputs])
            }
            LayerKind::Conv2d(spec) => match input {
                &[c, h, w] if c == spec.in_channels => spec
                    .output_hw(h, w)
                    .map(|(oh, ow)| vec![spec.out_channels, oh, ow])
                    .ok_or_else(|| bad(vec![c, spec.kernel_h, spec.kernel_w])),
                _ => Err(bad(vec![spec.in_channels, 0, 0])),
            },
            LayerKind::Relu | LayerKind::Dropout { .. } => Ok(input.to_vec()),
            LayerKind::MaxPool2d {
                kernel_h,
                kernel_w,
                stride,
            } => match input {
                &[c, h, w] if h >= kernel_h && w >= kernel_w && stride > 0 => Ok(vec![
                    c,
                    (h - kernel_h) / stride + 1,
                    (w - kernel_w) / stride + 1,
                ]),
                _ => Err(bad(vec![0, kernel_h, kernel_w])),
            },
            LayerKind::MaxPool3d {
                kernel_c,
                kernel_h,
                kernel_w,
            } => match input {
                &[c, h, w]
                    if kernel_c > 0
                        && kernel_h > 0
                        && kernel_w > 0
                        && c >= kernel_c
                        && h >= kernel_h
                        && w >= kernel_w =>
                {
                    Ok(vec![c / kernel_c, h / kernel_h, w / kernel_w])
                }
                _ => Err(bad(vec![kernel_c, kernel_h, kernel_w])),
            },
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::BatchNorm { channels } => {
                if input.first() != Some(&channels) || !(input.len() == 1 || input.len() == 3) {
                    return Err(bad(vec![channels]));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Shapes of the stored parameter tensors, in slot order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Dense {
                inputs,
                outputs,
                bias,
            } => {
                let mut v = vec![vec![outputs, inputs]];
                if bias {
                    v.push(vec![outputs]);
                }
                v
            }
            LayerKind::Conv2d(s) => {
                let mut v = vec![vec![s.out_channels, s.in_channels, s.kernel_h, s.kernel_w]];
                if s.bias {
                    v.push(vec![s.out_channels]);
                }
                v
            }
            // gamma, beta, running mean, running variance
            LayerKind::BatchNorm { channels } => vec![vec![channels]; 4],
            _ => Vec::new(),
        }
    }

    /// Number of leading parameter slots that receive gradients.
    pub fn trainable_slots(&self) -> usize {
        match self {
            LayerKind::BatchNorm { .. } => 2,
            _ => self.param_shapes().len(),
        }
    }

    /// Multiply-accumulate count for one sample.
    pub fn macs(&self, input: &[usize]) -> usize {
        match *self {
            LayerKind::Dense {
                inputs, outputs, ..
            } => inputs * outputs,
            LayerKind::Conv2d(s) => match self.output_shape(input) {
                Ok(out) => out.iter().product::<usize>() * s.in_channels * s.kernel_h * s.kernel_w,
                Err(_) => 0,
            },
            _ => 0,
        }
    }
}

/// Per-layer state captured during a training forward pass.
#[derive(Clone, Debug)]
pub(crate) enum Cache<T> {
    Empty,
    Input(Tensor<T>),
    Mask(Vec<bool>),
    Argmax { indices: Vec<usize>, input_shape: Vec<usize> },
    Shape(Vec<usize>),
    BatchNorm {
        normalized: Vec<T>,
        inv_std: Vec<T>,
        per_channel: usize,
    },
    Dropout(Vec<T>),
}

/// Batch statistics observed by a batch-norm layer during training.
#[derive(Clone, Debug)]
pub(crate) struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

/// A layer kind together with its owned parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    kind: LayerKind,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(kind: LayerKind, params: Vec<Tensor<T>>) -> Result<Self> {
        let shapes = kind.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} expects {} parameter tensors, got {}",
                kind.name(),
                shapes.len(),
                params.len()
            )));
        }
        for (s, p) in shapes.iter().zip(&params) {
            if s.as_slice() != p.shape() {
                return Err(Error::shape(format!("{} parameter", kind.name()), s, p.shape()));
            }
        }
        if let LayerKind::Dropout { rate } = kind {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0,1)")));
            }
        }
        Ok(Self { kind, params })
    }

    /// He-uniform weights, zero biases, identity batch-norm.
    pub fn init(kind: LayerKind, rng: &mut ChaCha8Rng) -> Result<Self> {
        let shapes = kind.param_shapes();
        let params = match kind {
            LayerKind::Dense { .. } | LayerKind::Conv2d(_) => shapes
                .iter()
                .enumerate()
                .map(|(slot, shape)| {
                    if slot == 0 {
                        let fan_in: usize = shape[1..].iter().product();
                        let bound = (6.0 / fan_in as f64).sqrt();
                        let data = (0..shape.iter().product::<usize>())
                            .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                            .collect();
                        Tensor::new(shape.clone(), data)
                    } else {
                        Ok(Tensor::zeros(shape))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
            LayerKind::BatchNorm { channels } => vec![
                Tensor::full(&[channels], T::one()),
                Tensor::zeros(&[channels]),
                Tensor::zeros(&[channels]),
                Tensor::full(&[channels], T::one()),
            ],
            _ => Vec::new(),
        };
        Self::new(kind, params)
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// The prunable weight tensor of a dense or convolution layer.
    pub fn weight(&self) -> Option<&Tensor<T>> {
        if self.kind.is_prunable() {
            self.params.first()
        } else {
            None
        }
    }

    pub fn weight_mut(&mut self) -> Option<&mut Tensor<T>> {
        if self.kind.is_prunable() {
            self.params.first_mut()
        } else {
            None
        }
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        if self.kind.is_prunable() {
            self.params.get(1)
        } else {
            None
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Batched forward. `train` carries the dropout RNG and switches
    /// batch-norm to batch statistics; `None` is the inference path.
    pub(crate) fn forward(
        &self,
        x: &Tensor<T>,
        train: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor<T>, Cache<T>, Option<BatchStats<T>>)> {
        let shape = x.shape();
        let inner = &shape[1..];
        let out_inner = self.kind.output_shape(inner)?;
        let n = shape[0];
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(&out_inner);
        let training = train.is_some();
        match self.kind {
            LayerKind::Dense {
                inputs, outputs, ..
            } => {
                let w = self.params[0].data();
                let mut y = Vec::with_capacity(n * outputs);
                for row in x.data().chunks(inputs) {
                    for o in 0..outputs {
                        let wr = &w[o * inputs..(o + 1) * inputs];
                        let mut acc = T::zero();
                        for (a, b) in wr.iter().zip(row) {
                            acc += *a * *b;
                        }
                        if let Some(b) = self.params.get(1) {
                            acc += b.data()[o];
                        }
                        y.push(acc);
                    }
                }
                let cache = if training {
                    Cache::Input(x.clone())
                } else {
                    Cache::Empty
                };
                Ok((Tensor::new(out_shape, y)?, cache, None))
            }
            LayerKind::Conv2d(spec) => {
                let y = conv_forward(&spec, x, &self.params[0], self.params.get(1), &out_shape);
                let cache = if training {
                    Cache::Input(x.clone())
                } else {
                    Cache::Empty
                };
                Ok((Tensor::new(out_shape, y)?, cache, None))
            }
            LayerKind::Relu => {
                let mask: Vec<bool> = x.data().iter().map(|v| *v > T::zero()).collect();
                let y = x
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(v, &m)| if m { *v } else { T::zero() })
                    .collect();
                let cache = if training { Cache::Mask(mask) } else { Cache::Empty };
                Ok((Tensor::new(out_shape, y)?, cache, None))
            }
            LayerKind::MaxPool2d {
                kernel_h,
                kernel_w,
                stride,
            } => {
                let (y, idx) = maxpool_forward(x, &out_shape, (1, kernel_h, kernel_w), (1, stride, stride));
                let cache = if training {
                    Cache::Argmax {
                        indices: idx,
                        input_shape: shape.to_vec(),
                    }
                } else {
                    Cache::Empty
                };
                Ok((Tensor::new(out_shape, y)?, cache, None))
            }
            LayerKind::MaxPool3d {
                kernel_c,
                kernel_h,
                kernel_w,
            } => {
                let k = (kernel_c, kernel_h, kernel_w);
                let (y, idx) = maxpool_forward(x, &out_shape, k, k);
                let cache = if training {
                    Cache::Argmax {
                        indices: idx,
                        input_shape: shape.to_vec(),
                    }
                } else {
                    Cache::Empty
                };
                Ok((Tensor::new(out_shape, y)?, cache, None))
            }
            LayerKind::Flatten => {
                let y = x.clone().reshape(&out_shape)?;
                Ok((y, Cache::Shape(shape.to_vec()), None))
            }
            LayerKind::BatchNorm { channels } => self.batchnorm_forward(x, channels, training),
            LayerKind::Dropout { rate } => match train {
                Some(rng) if rate > 0.0 => {
                    let scale = T::from_f64_lossy(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| {
                            if rng.random::<f64>() < rate {
                                T::zero()
                            } else {
                                scale
                            }
                        })
                        .collect();
                    let y = x.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
                    Ok((Tensor::new(out_shape, y)?, Cache::Dropout(mask), None))
                }
                _ => Ok((x.clone(), Cache::Empty, None)),
            },
        }
    }

    fn batchnorm_forward(
        &self,
        x: &Tensor<T>,
        channels: usize,
        training: bool,
    ) -> Result<(Tensor<T>, Cache<T>, Option<BatchStats<T>>)> {
        let n = x.shape()[0];
        let per_channel: usize = x.shape()[2..].iter().product();
        let gamma = self.params[0].data();
        let beta = self.params[1].data();
        let eps = T::from_f64_lossy(BN_EPS);
        let count = n * per_channel;
        let (mean, var) = if training {
            let mut mean = vec![T::zero(); channels];
            let mut var = vec![T::zero(); channels];
            let inv = T::one() / T::from_usize(count).unwrap();
            for (c, m) in mean.iter_mut().enumerate() {
                *m = channel_iter(x.data(), n, channels, per_channel, c).sum::<T>() * inv;
            }
            for (c, v) in var.iter_mut().enumerate() {
                *v = channel_iter(x.data(), n, channels, per_channel, c)
                    .map(|a| (a - mean[c]) * (a - mean[c]))
                    .sum::<T>()
                    * inv;
            }
            (mean, var)
        } else {
            (self.params[2].data().to_vec(), self.params[3].data().to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut normalized = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        for (i, (&a, (nz, out))) in x
            .data()
            .iter()
            .zip(normalized.iter_mut().zip(y.iter_mut()))
            .enumerate()
        {
            let c = (i / per_channel) % channels;
            *nz = (a - mean[c]) * inv_std[c];
            *out = gamma[c] * *nz + beta[c];
        }
        let y = Tensor::new(x.shape().to_vec(), y)?;
        if training {
            let stats = BatchStats { mean, var, count };
            Ok((
                y,
                Cache::BatchNorm {
                    normalized,
                    inv_std,
                    per_channel,
                },
                Some(stats),
            ))
        } else {
            Ok((y, Cache::Empty, None))
        }
    }

    /// Returns the input gradient and one gradient per trainable slot.
    pub(crate) fn backward(
        &self,
        cache: &Cache<T>,
        grad_out: &Tensor<T>,
        input_shape: &[usize],
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let g = grad_out.data();
        match (&self.kind, cache) {
            (
                LayerKind::Dense {
                    inputs, outputs, ..
                },
                Cache::Input(x),
            ) => {
                let (inputs, outputs) = (*inputs, *outputs);
                let w = self.params[0].data();
                let mut dw = vec![T::zero(); inputs * outputs];
                let mut db = vec![T::zero(); outputs];
                let mut dx = vec![T::zero(); x.len()];
                for (row, (xr, dxr)) in x.data().chunks(inputs).zip(dx.chunks_mut(inputs)).enumerate() {
                    let gr = &g[row * outputs..(row + 1) * outputs];
                    for o in 0..outputs {
                        let go = gr[o];
                        db[o] += go;
                        let wr = &w[o * inputs..(o + 1) * inputs];
                        let dwr = &mut dw[o * inputs..(o + 1) * inputs];
                        for i in 0..inputs {
                            dwr[i] += go * xr[i];
                            dxr[i] += go * wr[i];
                        }
                    }
                }
                let mut grads = vec![Tensor::new(vec![outputs, inputs], dw)?];
                if self.params.len() > 1 {
                    grads.push(Tensor::new(vec![outputs], db)?);
                }
                Ok((Tensor::new(x.shape().to_vec(), dx)?, grads))
            }
            (LayerKind::Conv2d(spec), Cache::Input(x)) => {
                let (dx, dw, db) = conv_backward(spec, x, &self.params[0], grad_out);
                let mut grads = vec![dw];
                if spec.bias {
                    grads.push(db);
                }
                Ok((dx, grads))
            }
            (LayerKind::Relu, Cache::Mask(mask)) => {
                let dx = g
                    .iter()
                    .zip(mask)
                    .map(|(v, &m)| if m { *v } else { T::zero() })
                    .collect();
                Ok((Tensor::new(input_shape.to_vec(), dx)?, Vec::new()))
            }
            (
                LayerKind::MaxPool2d { .. } | LayerKind::MaxPool3d { .. },
                Cache::Argmax {
                    indices,
                    input_shape,
                },
            ) => {
                let mut dx = vec![T::zero(); input_shape.iter().product()];
                for (&i, &v) in indices.iter().zip(g) {
                    dx[i] += v;
                }
                Ok((Tensor::new(input_shape.clone(), dx)?, Vec::new()))
            }
            (LayerKind::Flatten, Cache::Shape(s)) => Ok((grad_out.clone().reshape(s)?, Vec::new())),
            (
                LayerKind::BatchNorm { channels },
                Cache::BatchNorm {
                    normalized,
                    inv_std,
                    per_channel,
                    ..
                },
            ) => {
                let channels = *channels;
                let n = input_shape[0];
                let count = T::from_usize(n * per_channel).unwrap();
                let gamma = self.params[0].data();
                let mut dgamma = vec![T::zero(); channels];
                let mut dbeta = vec![T::zero(); channels];
                for (i, (&gv, &nz)) in g.iter().zip(normalized).enumerate() {
                    let c = (i / per_channel) % channels;
                    dbeta[c] += gv;
                    dgamma[c] += gv * nz;
                }
                let dx = g
                    .iter()
                    .zip(normalized)
                    .enumerate()
                    .map(|(i, (&gv, &nz))| {
                        let c = (i / per_channel) % channels;
                        gamma[c] * inv_std[c] / count * (count * gv - dbeta[c] - nz * dgamma[c])
                    })
                    .collect();
                Ok((
                    Tensor::new(input_shape.to_vec(), dx)?,
                    vec![Tensor::vector(dgamma), Tensor::vector(dbeta)],
                ))
            }
            (LayerKind::Dropout { .. }, Cache::Dropout(mask)) => {
                let dx = g.iter().zip(mask).map(|(a, m)| *a * *m).collect();
                Ok((Tensor::new(input_shape.to_vec(), dx)?, Vec::new()))
            }
            (LayerKind::Dropout { .. }, Cache::Empty) => Ok((grad_out.clone(), Vec::new())),
            (kind, _) => Err(Error::Contract(format!(
                "{} backward called without a training-mode cache",
                kind.name()
            ))),
        }
    }

    /// Folds batch statistics into the running estimates.
    pub(crate) fn update_running_stats(&mut self, stats: &BatchStats<T>) {
        let m = T::from_f64_lossy(BN_MOMENTUM);
        let unbias = if stats.count > 1 {
            T::from_usize(stats.count).unwrap() / T::from_usize(stats.count - 1).unwrap()
        } else {
            T::one()
        };
        let (head, tail) = self.params.split_at_mut(3);
        for (r, b) in head[2].data_mut().iter_mut().zip(&stats.mean) {
            *r = (T::one() - m) * *r + m * *b;
        }
        for (r, b) in tail[0].data_mut().iter_mut().zip(&stats.var) {
            *r = (T::one() - m) * *r + m * *b * unbias;
        }
    }
}

fn channel_iter<T: Copy>(
    data: &[T],
    n: usize,
    channels: usize,
    per_channel: usize,
    c: usize,
) -> impl Iterator<Item = T> + '_ {
    (0..n).flat_map(move |b| {
        let start = (b * channels + c) * per_channel;
        data[start..start + per_channel].iter().copied()
    })
}

fn conv_forward<T: Scalar>(
    spec: &Conv2dSpec,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    out_shape: &[usize],
) -> Vec<T> {
    let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, oh, ow) = (out_shape[1], out_shape[2], out_shape[3]);
    let (kh, kw, s, p) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let xd = x.data();
    let wd_ = w.data();
    let mut y = vec![T::zero(); n * c_out * oh * ow];
    for bn in 0..n {
        for o in 0..c_out {
            let bias = b.map_or(T::zero(), |b| b.data()[o]);
            for r in 0..oh {
                for col in 0..ow {
                    let mut acc = T::zero();
                    for c in 0..c_in {
                        let xbase = (bn * c_in + c) * h * wd;
                        let wbase = (o * c_in + c) * kh * kw;
                        for i in 0..kh {
                            let ih = (r * s + i) as isize - p as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for j in 0..kw {
                                let iw = (col * s + j) as isize - p as isize;
                                if iw < 0 || iw >= wd as isize {
                                    continue;
                                }
                                acc += wd_[wbase + i * kw + j] * xd[xbase + ih as usize * wd + iw as usize];
                            }
                        }
                    }
                    y[((bn * c_out + o) * oh + r) * ow + col] = acc + bias;
                }
            }
        }
    }
    y
}

fn conv_backward<T: Scalar>(
    spec: &Conv2dSpec,
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, oh, ow) = (grad_out.shape()[1], grad_out.shape()[2], grad_out.shape()[3]);
    let (kh, kw, s, p) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let xd = x.data();
    let wv = w.data();
    let g = grad_out.data();
    let mut dx = vec![T::zero(); xd.len()];
    let mut dw = vec![T::zero(); wv.len()];
    let mut db = vec![T::zero(); c_out];
    for bn in 0..n {
        for o in 0..c_out {
            for r in 0..oh {
                for col in 0..ow {
                    let go = g[((bn * c_out + o) * oh + r) * ow + col];
                    db[o] += go;
                    for c in 0..c_in {
                        let xbase = (bn * c_in + c) * h * wd;
                        let wbase = (o * c_in + c) * kh * kw;
                        for i in 0..kh {
                            let ih = (r * s + i) as isize - p as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for j in 0..kw {
                                let iw = (col * s + j) as isize - p as isize;
                                if iw < 0 || iw >= wd as isize {
                                    continue;
                                }
                                let xi = xbase + ih as usize * wd + iw as usize;
                                let wi = wbase + i * kw + j;
                                dw[wi] += go * xd[xi];
                                dx[xi] += go * wv[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("input-shaped gradient"),
        Tensor::new(w.shape().to_vec(), dw).expect("weight-shaped gradient"),
        Tensor::vector(db),
    )
}

/// Windowed max over `(c, h, w)` on a `(n, C, H, W)` tensor; returns values
/// and flat argmax positions (first maximum wins).
fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    out_shape: &[usize],
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> (Vec<T>, Vec<usize>) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oc, oh, ow) = (out_shape[1], out_shape[2], out_shape[3]);
    let xd = x.data();
    let total = n * oc * oh * ow;
    let mut vals = Vec::with_capacity(total);
    let mut idx = Vec::with_capacity(total);
    for b in 0..n {
        for q in 0..oc {
            for r in 0..oh {
                for s in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0;
                    for dc in 0..kernel.0 {
                        for dh in 0..kernel.1 {
                            for dw in 0..kernel.2 {
                                let ci = q * stride.0 + dc;
                                let hi = r * stride.1 + dh;
                                let wi = s * stride.2 + dw;
                                let flat = ((b * c + ci) * h + hi) * w + wi;
                                if xd[flat] > best {
                                    best = xd[flat];
                                    best_i = flat;
                                }
                            }
                        }
                    }
                    vals.push(best);
                    idx.push(best_i);
                }
            }
        }
    }
    (vals, idx)
}

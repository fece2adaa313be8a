use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{BatchStats, Layer, LayerKind};
use super::loss::softmax_cross_entropy;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Evaluation,
}

/// Gradient for one parameter slot of one layer.
#[derive(Clone, Debug)]
pub struct ParamGrad<T> {
    pub layer: usize,
    pub slot: usize,
    pub grad: Tensor<T>,
}

/// Batch statistics to fold into a batch-norm layer's running estimates.
#[derive(Clone, Debug)]
pub struct RunningStats<T> {
    pub(crate) layer: usize,
    pub(crate) stats: BatchStats<T>,
}

#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub params: Vec<ParamGrad<T>>,
    pub running_stats: Vec<RunningStats<T>>,
}

impl<T> Gradients<T> {
    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }
}

/// Per-layer activations of one inference pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// `activations[i]` is the output of layer `i`, without batch axis.
    pub activations: Vec<Tensor<T>>,
    /// How many layers actually ran.
    pub executed: usize,
}

/// Ordered layer stack with a declared per-sample input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    frozen: Vec<bool>,
    sparsity: Vec<Option<f64>>,
    mode: Mode,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes a model from layer kinds.
    pub fn new(input_shape: &[usize], kinds: Vec<LayerKind>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = kinds
            .into_iter()
            .map(|k| Layer::init(k, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(input_shape, layers)
    }

    pub fn from_layers(input_shape: &[usize], layers: Vec<Layer<T>>) -> Result<Self> {
        let n = layers.len();
        let m = Self {
            input_shape: input_shape.to_vec(),
            layers,
            frozen: vec![false; n],
            sparsity: vec![None; n],
            mode: Mode::Evaluation,
        };
        m.layer_shapes()?;
        Ok(m)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn layer(&self, idx: usize) -> &Layer<T> {
        &self.layers[idx]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn is_frozen(&self, idx: usize) -> bool {
        self.frozen[idx]
    }

    pub fn set_frozen(&mut self, idx: usize, frozen: bool) {
        self.frozen[idx] = frozen;
    }

    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen
    }

    pub fn set_frozen_mask(&mut self, mask: &[bool]) {
        assert_eq!(mask.len(), self.layers.len());
        self.frozen = mask.to_vec();
    }

    pub fn freeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = true);
    }

    /// Recorded sparsity constraint of a layer, if any.
    pub fn sparsity(&self, idx: usize) -> Option<f64> {
        self.sparsity[idx]
    }

    pub fn set_sparsity(&mut self, idx: usize, s: Option<f64>) {
        self.sparsity[idx] = s;
    }

    /// Replaces layer `idx` with `replacement`, carrying frozen flags over
    /// and dropping the recorded sparsity of the replaced layer.
    pub fn splice(&mut self, idx: usize, replacement: Vec<Layer<T>>) -> Result<()> {
        let count = replacement.len();
        let frozen = self.frozen[idx];
        let mut next = self.clone();
        next.layers.splice(idx..=idx, replacement);
        next.frozen.splice(idx..=idx, std::iter::repeat_n(frozen, count));
        next.sparsity.splice(idx..=idx, std::iter::repeat_n(None, count));
        next.layer_shapes()?;
        *self = next;
        Ok(())
    }

    /// Per-sample output shape of every layer, validating the chain.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            shape = l.kind().output_shape(&shape).map_err(|e| match e {
                Error::Shape {
                    context,
                    expected,
                    found,
                } => Error::Shape {
                    context: format!("layer {i} ({context})"),
                    expected,
                    found,
                },
                other => other,
            })?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Input shape seen by each layer.
    pub fn layer_input_shapes(&self) -> Vec<Vec<usize>> {
        let shapes = self.layer_shapes().expect("model shapes validated at construction");
        std::iter::once(self.input_shape.clone())
            .chain(shapes.into_iter())
            .take(self.layers.len())
            .collect()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layer_shapes()
            .expect("model shapes validated at construction")
            .pop()
            .unwrap_or_else(|| self.input_shape.clone())
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Total entries in prunable weight matrices.
    pub fn prunable_weight_count(&self) -> usize {
        self.layers.iter().filter_map(Layer::weight).map(Tensor::len).sum()
    }

    /// Nonzero entries in prunable weight matrices.
    pub fn prunable_nonzero_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::weight)
            .map(Tensor::count_nonzero)
            .sum()
    }

    /// Nonzero parameters across all layers.
    pub fn nonzero_param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params().iter())
            .map(Tensor::count_nonzero)
            .sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::shape("model input", &self.input_shape, x.shape()));
        }
        Ok(())
    }

    fn batched(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut s = vec![1];
        s.extend_from_slice(x.shape());
        x.clone().reshape(&s)
    }

    /// Inference forward pass on one sample: running batch-norm statistics,
    /// no dropout. Returns the flattened logits.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.batched(x)?;
        for l in &self.layers {
            h = l.forward(&h, None)?.0;
        }
        let n = h.len();
        h.reshape(&[n])
    }

    /// Inference on a `(batch, ...)` tensor.
    pub fn forward_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if &x.shape()[1..] != self.input_shape.as_slice() {
            return Err(Error::shape("model batch input", &self.input_shape, &x.shape()[1..]));
        }
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h, None)?.0;
        }
        Ok(h)
    }

    /// Inference pass recording every layer output, stopping after layer
    /// `stop_after` when given. Layers past the stop point do not run.
    pub fn forward_trace(&self, x: &Tensor<T>, stop_after: Option<usize>) -> Result<Trace<T>> {
        self.check_input(x)?;
        let last = match stop_after {
            Some(i) if i >= self.layers.len() => {
                return Err(Error::InvalidArgument(format!(
                    "stop layer {i} beyond model of {} layers",
                    self.layers.len()
                )))
            }
            Some(i) => i,
            None => self.layers.len().saturating_sub(1),
        };
        let mut h = self.batched(x)?;
        let mut activations = Vec::new();
        for l in self.layers.iter().take(last + 1) {
            h = l.forward(&h, None)?.0;
            activations.push(h.clone().reshape(&h.shape()[1..])?);
        }
        Ok(Trace {
            executed: activations.len(),
            activations,
        })
    }

    /// Runs a single layer on one sample; used by layer-at-a-time runtimes.
    pub fn forward_layer(&self, idx: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.batched(x)?;
        let y = self.layers[idx].forward(&h, None)?.0;
        let s = y.shape()[1..].to_vec();
        y.reshape(&s)
    }

    /// Mean softmax cross-entropy over a batch and gradients for every
    /// unfrozen trainable parameter. Requires training mode.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor<T>,
        labels: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(T, Gradients<T>)> {
        if self.mode != Mode::Training {
            return Err(Error::Contract("backward requires training mode".into()));
        }
        if &batch.shape()[1..] != self.input_shape.as_slice() || batch.shape()[0] != labels.len() {
            return Err(Error::shape("training batch", &self.input_shape, batch.shape()));
        }
        let n = labels.len();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut running_stats = Vec::new();
        let mut h = batch.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let (y, cache, stats) = l.forward(&h, Some(rng))?;
            if let Some(stats) = stats {
                if !self.frozen[i] {
                    running_stats.push(RunningStats { layer: i, stats });
                }
            }
            inputs.push(h.shape().to_vec());
            caches.push(cache);
            h = y;
        }
        let classes = h.len() / n;
        let scale = T::one() / T::from_usize(n).unwrap();
        let mut loss = T::zero();
        let mut grad = Vec::with_capacity(h.len());
        for (row, &y) in h.data().chunks(classes).zip(labels) {
            if y >= classes {
                return Err(Error::InvalidArgument(format!("label {y} >= {classes} classes")));
            }
            let (l, g) = softmax_cross_entropy(row, y);
            loss += l * scale;
            grad.extend(g.into_iter().map(|v| v * scale));
        }
        // Layers before the first unfrozen one need no backward pass.
        let first_live = self.frozen.iter().position(|f| !f).unwrap_or(self.layers.len());
        let mut params = Vec::new();
        let mut g = Tensor::new(h.shape().to_vec(), grad)?;
        for i in (first_live..self.layers.len()).rev() {
            let (dx, pg) = self.layers[i].backward(&caches[i], &g, &inputs[i])?;
            if !self.frozen[i] {
                for (slot, grad) in pg.into_iter().enumerate() {
                    params.push(ParamGrad { layer: i, slot, grad });
                }
            }
            g = dx;
        }
        params.reverse();
        Ok((
            loss,
            Gradients {
                params,
                running_stats,
            },
        ))
    }

    /// Single-sample convenience wrapper around [`Model::loss_and_gradients`].
    pub fn backward(&self, x: &Tensor<T>, label: usize, rng: &mut ChaCha8Rng) -> Result<Gradients<T>> {
        self.check_input(x)?;
        let b = self.batched(x)?;
        Ok(self.loss_and_gradients(&b, &[label], rng)?.1)
    }

    pub(crate) fn apply_running_stats(&mut self, stats: &[RunningStats<T>]) {
        for s in stats {
            if !self.frozen[s.layer] {
                self.layers[s.layer].update_running_stats(&s.stats);
            }
        }
    }

    /// Bitwise parameter equality, layer by layer.
    pub fn params_bitwise_eq(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.params().len() == b.params().len()
                    && a.params().iter().zip(b.params()).all(|(x, y)| x.bitwise_eq(y))
            })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Layer::new(l.kind().clone(), l.params().iter().map(Tensor::cast).collect())
                    .expect("cast keeps shapes")
            })
            .collect();
        Model {
            input_shape: self.input_shape.clone(),
            layers,
            frozen: self.frozen.clone(),
            sparsity: self.sparsity.clone(),
            mode: self.mode,
        }
    }
}

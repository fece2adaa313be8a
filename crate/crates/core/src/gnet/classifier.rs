use super::features::PaddedFeatureSet;
use super::plan::PoolPlan;
use crate::error::{Error, Result};
use crate::nn::{Layer, LayerKind, Model, Tensor};
use crate::scalar::Scalar;

/// Pool plan plus a single Dense classifier over the concatenated features.
///
/// The classifier is an ordinary one-layer [`Model`], so the compression
/// pipeline applies to it unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct GNetModel<T = f32> {
    pub plan: PoolPlan,
    pub classifier: Model<T>,
}

impl<T: Scalar> GNetModel<T> {
    /// He-initialized classifier from `seed`.
    pub fn new(plan: PoolPlan, classes: usize, seed: u64) -> Result<Self> {
        let len = plan.feature_len();
        let classifier = Model::new(&[len], vec![Self::kind(len, classes)], seed)?;
        Ok(Self { plan, classifier })
    }

    /// All-zero classifier.
    pub fn zeros(plan: PoolPlan, classes: usize) -> Result<Self> {
        let len = plan.feature_len();
        let layer = Layer::new(
            Self::kind(len, classes),
            vec![Tensor::zeros(&[classes, len]), Tensor::zeros(&[classes])],
        )?;
        Self::from_parts(plan, Model::from_layers(&[len], vec![layer])?)
    }

    pub fn from_parts(plan: PoolPlan, classifier: Model<T>) -> Result<Self> {
        let len = plan.feature_len();
        let ok = classifier.len() == 1
            && matches!(
                classifier.layer(0).kind(),
                LayerKind::Dense { inputs, bias: true, .. } if *inputs == len
            );
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "global exit classifier must be a single Dense({len} -> classes) layer with bias"
            )));
        }
        Ok(Self { plan, classifier })
    }

    fn kind(len: usize, classes: usize) -> LayerKind {
        LayerKind::Dense {
            inputs: len,
            outputs: classes,
            bias: true,
        }
    }

    pub fn classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn param_count(&self) -> usize {
        self.classifier.param_count()
    }

    pub fn weight(&self) -> &Tensor<T> {
        self.classifier.layer(0).weight().expect("dense classifier weight")
    }

    pub fn bias(&self) -> &Tensor<T> {
        self.classifier.layer(0).bias().expect("dense classifier bias")
    }

    pub fn cast<U: Scalar>(&self) -> GNetModel<U> {
        GNetModel {
            plan: self.plan.clone(),
            classifier: self.classifier.cast(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Multiply over every slot, zero or not.
    Dense,
    /// Skip the zero-padded slots.
    Compressed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GNetOutput<T = f32> {
    pub logits: Tensor<T>,
    pub macs: usize,
}

pub fn gnet_forward<T: Scalar>(
    g: &GNetModel<T>,
    fs: &PaddedFeatureSet<T>,
    mode: ForwardMode,
) -> Result<GNetOutput<T>> {
    if fs.slots.len() != g.plan.len() || fs.valid > g.plan.len() {
        return Err(Error::InvalidArgument(format!(
            "feature set has {} slots ({} valid), plan has {}",
            fs.slots.len(),
            fs.valid,
            g.plan.len()
        )));
    }
    for (s, e) in fs.slots.iter().zip(&g.plan.exits) {
        if s.shape() != e.pooled {
            return Err(Error::shape("feature slot", &e.pooled, s.shape()));
        }
    }
    let len = g.plan.feature_len();
    let x = fs.flatten();
    let classes = g.classes();
    match mode {
        ForwardMode::Dense => Ok(GNetOutput {
            logits: g.classifier.forward(&Tensor::new(vec![len], x)?)?,
            macs: len * classes,
        }),
        ForwardMode::Compressed => {
            let used = g.plan.valid_len(fs.valid);
            let w = g.weight().data();
            let logits = g
                .bias()
                .data()
                .iter()
                .enumerate()
                .map(|(k, &b)| {
                    let row = &w[k * len..k * len + used];
                    b + row.iter().zip(&x[..used]).map(|(&a, &v)| a * v).sum::<T>()
                })
                .collect();
            Ok(GNetOutput {
                logits: Tensor::new(vec![classes], logits)?,
                macs: used * classes,
            })
        }
    }
}

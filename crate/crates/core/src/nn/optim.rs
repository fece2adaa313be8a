use std::collections::BTreeMap;

use super::model::{Gradients, Model};
use super::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// First-order optimizer. Weight decay is L2 on dense/conv weight slots only.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    learning_rate: f64,
    weight_decay: f64,
    steps: u64,
    state: BTreeMap<(usize, usize), Moments<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            learning_rate,
            weight_decay,
            steps: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>) {
        self.steps += 1;
        let lr = T::from_f64_lossy(self.learning_rate);
        let wd = T::from_f64_lossy(self.weight_decay);
        for pg in &grads.params {
            if model.is_frozen(pg.layer) {
                continue;
            }
            let decays = pg.slot == 0 && model.layer(pg.layer).kind().is_prunable() && self.weight_decay > 0.0;
            let param: &mut Tensor<T> = &mut model.layers_mut()[pg.layer].params_mut()[pg.slot];
            let g = pg.grad.data();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &gv) in param.data_mut().iter_mut().zip(g) {
                        let gv = if decays { gv + wd * *p } else { gv };
                        *p -= lr * gv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let n = g.len();
                    let st = self.state.entry((pg.layer, pg.slot)).or_insert_with(|| Moments {
                        m: vec![T::zero(); n],
                        v: vec![T::zero(); n],
                    });
                    let b1 = T::from_f64_lossy(beta1);
                    let b2 = T::from_f64_lossy(beta2);
                    let c1 = T::from_f64_lossy(1.0 - beta1.powi(self.steps as i32));
                    let c2 = T::from_f64_lossy(1.0 - beta2.powi(self.steps as i32));
                    let e = T::from_f64_lossy(eps);
                    for (((p, &gv), m), v) in param
                        .data_mut()
                        .iter_mut()
                        .zip(g)
                        .zip(st.m.iter_mut())
                        .zip(st.v.iter_mut())
                    {
                        let gv = if decays { gv + wd * *p } else { gv };
                        *m = b1 * *m + (T::one() - b1) * gv;
                        *v = b2 * *v + (T::one() - b2) * gv * gv;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *p -= lr * mh / (vh.sqrt() + e);
                    }
                }
            }
        }
        model.apply_running_stats(&grads.running_stats);
    }
}

use super::plan::{feature_chw, ExitPool, PoolPlan};
use crate::error::{Error, Result};
use crate::nn::{Model, Tensor};
use crate::scalar::Scalar;

/// Pooled features of every exit slot; slots past `valid` are all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedFeatureSet<T = f32> {
    pub slots: Vec<Tensor<T>>,
    pub valid: usize,
}

impl<T: Scalar> PaddedFeatureSet<T> {
    /// Slot tensors concatenated into one flat vector.
    pub fn flatten(&self) -> Vec<T> {
        self.slots.iter().flat_map(|s| s.data().iter().copied()).collect()
    }

    pub fn zeros(plan: &PoolPlan) -> Self {
        Self {
            slots: plan.exits.iter().map(|e| Tensor::zeros(&e.pooled)).collect(),
            valid: 0,
        }
    }
}

/// Window `[start, end)` of output cell `r` among `out` cells over `len`.
fn window(r: usize, out: usize, len: usize) -> (usize, usize) {
    (r * len / out, ((r + 1) * len).div_ceil(out))
}

/// Max-pools one exit's feature map to its planned shape. Channels are
/// grouped in contiguous runs of `k_c`; spatial windows are adaptive.
pub fn pool_feature<T: Scalar>(feature: &Tensor<T>, exit: &ExitPool) -> Result<Tensor<T>> {
    let [c, h, w] = feature_chw(feature.shape())?;
    if [c, h, w] != exit.source {
        return Err(Error::shape("exit feature", &exit.source, &[c, h, w]));
    }
    let [cp, h0, w0] = exit.pooled;
    let kc = exit.kernel[0];
    let d = feature.data();
    let mut out = Vec::with_capacity(cp * h0 * w0);
    for g in 0..cp {
        for r in 0..h0 {
            let (y0, y1) = window(r, h0, h);
            for q in 0..w0 {
                let (x0, x1) = window(q, w0, w);
                let mut best = T::neg_infinity();
                for ch in g * kc..(g + 1) * kc {
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let v = d[(ch * h + y) * w + x];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(exit.pooled.to_vec(), out)
}

/// Runs the baseline up to exit point `exit` (1-based), pools the features
/// of exits `1..=exit` and zero-fills the rest. Also returns how many
/// baseline layers ran.
pub fn extract_features_traced<T: Scalar>(
    model: &Model<T>,
    plan: &PoolPlan,
    x: &Tensor<T>,
    exit: usize,
) -> Result<(PaddedFeatureSet<T>, usize)> {
    if exit == 0 || exit > plan.len() {
        return Err(Error::InvalidArgument(format!(
            "exit {exit} outside 1..={}",
            plan.len()
        )));
    }
    let trace = model.forward_trace(x, Some(plan.exits[exit - 1].layer))?;
    let mut slots = Vec::with_capacity(plan.len());
    for (j, e) in plan.exits.iter().enumerate() {
        if j < exit {
            slots.push(pool_feature(&trace.activations[e.layer], e)?);
        } else {
            slots.push(Tensor::zeros(&e.pooled));
        }
    }
    Ok((PaddedFeatureSet { slots, valid: exit }, trace.executed))
}

pub fn extract_features<T: Scalar>(
    model: &Model<T>,
    plan: &PoolPlan,
    x: &Tensor<T>,
    exit: usize,
) -> Result<PaddedFeatureSet<T>> {
    Ok(extract_features_traced(model, plan, x, exit)?.0)
}

/// Features with every slot valid, computed from one full pass.
pub(crate) fn full_features<T: Scalar>(model: &Model<T>, plan: &PoolPlan, x: &Tensor<T>) -> Result<Vec<T>> {
    Ok(extract_features(model, plan, x, plan.len())?.flatten())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_windows_cover_input() {
        assert_eq!(window(0, 4, 6), (0, 2));
        assert_eq!(window(1, 4, 6), (1, 3));
        assert_eq!(window(3, 4, 6), (4, 6));
        assert_eq!(window(1, 8, 16), (2, 4));
    }

    #[test]
    fn pools_channels_and_space() {
        let f = Tensor::<f32>::new(vec![2, 2, 2], vec![1., 5., 3., 2., -1., 0., 7., -4.]).unwrap();
        let e = ExitPool {
            layer: 0,
            source: [2, 2, 2],
            kernel: [2, 2, 2],
            pooled: [1, 1, 1],
        };
        assert_eq!(pool_feature(&f, &e).unwrap().data(), &[7.0]);
        let e = ExitPool {
            layer: 0,
            source: [2, 2, 2],
            kernel: [1, 2, 1],
            pooled: [2, 1, 2],
        };
        assert_eq!(pool_feature(&f, &e).unwrap().data(), &[3., 5., 7., 0.]);
    }
}

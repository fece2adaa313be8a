use crate::error::{Error, Result};
use crate::nn::{LayerKind, Model};
use crate::scalar::Scalar;

/// Layer indices whose outputs feed the global exit, in execution order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExitPointSet {
    layers: Vec<usize>,
}

impl ExitPointSet {
    pub fn new(layers: Vec<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("at least one exit point is required".into()));
        }
        if layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "exit points {layers:?} must be strictly increasing"
            )));
        }
        Ok(Self { layers })
    }

    /// One exit after each convolution's activation: the ReLU directly
    /// following a Conv2d, or the Conv2d itself when none follows.
    pub fn after_convolutions<T: Scalar>(model: &Model<T>) -> Result<Self> {
        let layers = model.layers();
        let mut exits = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            if matches!(l.kind(), LayerKind::Conv2d(_)) {
                let relu = layers.get(i + 1).is_some_and(|n| matches!(n.kind(), LayerKind::Relu));
                exits.push(if relu { i + 1 } else { i });
            }
        }
        if exits.is_empty() {
            return Err(Error::InvalidArgument("model has no convolutional layers to exit after".into()));
        }
        Self::new(exits)
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Pooling of one exit's feature map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExitPool {
    /// Baseline layer whose output is pooled.
    pub layer: usize,
    /// `(C, H, W)` of the layer output; vectors are read as `(C, 1, 1)`.
    pub source: [usize; 3],
    /// Nominal `(k_c, k_h, k_w)` window. Spatial windows are adaptive so the
    /// output is exactly the target shape.
    pub kernel: [usize; 3],
    /// `(C / k_c, H₀, W₀)`.
    pub pooled: [usize; 3],
}

impl ExitPool {
    pub fn len(&self) -> usize {
        self.pooled.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolPlan {
    pub exits: Vec<ExitPool>,
    pub target: (usize, usize),
    pub budget: usize,
}

impl PoolPlan {
    pub fn len(&self) -> usize {
        self.exits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exits.is_empty()
    }

    pub fn exit_points(&self) -> ExitPointSet {
        ExitPointSet {
            layers: self.exits.iter().map(|e| e.layer).collect(),
        }
    }

    /// Concatenated channel count `Σ C'_i`.
    pub fn total_channels(&self) -> usize {
        self.exits.iter().map(|e| e.pooled[0]).sum()
    }

    /// Flattened classifier input size.
    pub fn feature_len(&self) -> usize {
        self.exits.iter().map(ExitPool::len).sum()
    }

    /// Flat offset of slot `j` (0-based) in the concatenated features.
    pub fn slot_offset(&self, j: usize) -> usize {
        self.exits[..j].iter().map(ExitPool::len).sum()
    }

    /// Flat length of the valid prefix when exiting at `exit` (1-based).
    pub fn valid_len(&self, exit: usize) -> usize {
        self.slot_offset(exit.min(self.len()))
    }
}

pub(crate) fn feature_chw(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        [c] => Ok([*c, 1, 1]),
        [c, h, w] => Ok([*c, *h, *w]),
        s => Err(Error::shape("exit feature", &[0, 0, 0], s)),
    }
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// Plans pooling of every exit's feature map into the target spatial shape
/// of the last exit, widening channel windows from the earliest exit on
/// until the concatenated features fit `budget` elements.
pub fn plan_pooling<T: Scalar>(model: &Model<T>, exits: &ExitPointSet, budget: usize) -> Result<PoolPlan> {
    let shapes = model.layer_shapes()?;
    let mut sources = Vec::with_capacity(exits.len());
    for &l in exits.layers() {
        let shape = shapes.get(l).ok_or_else(|| {
            Error::InvalidArgument(format!("exit layer {l} beyond model of {} layers", model.len()))
        })?;
        sources.push(feature_chw(shape)?);
    }
    let last = sources[sources.len() - 1];
    let (h0, w0) = (last[1], last[2]);
    let cell = h0 * w0;
    for (i, s) in sources.iter().enumerate() {
        if s[1] < h0 || s[2] < w0 {
            return Err(Error::InvalidArgument(format!(
                "exit {} has spatial shape {}x{} smaller than the final {h0}x{w0}",
                i + 1,
                s[1],
                s[2]
            )));
        }
    }
    if budget < exits.len() * cell {
        return Err(Error::Infeasible(format!(
            "feature budget {budget} below the minimum {} for {} exits at {h0}x{w0}",
            exits.len() * cell,
            exits.len()
        )));
    }
    let options: Vec<Vec<usize>> = sources.iter().map(|s| divisors(s[0])).collect();
    let mut choice = vec![0usize; sources.len()];
    let total = |choice: &[usize]| -> usize {
        sources
            .iter()
            .zip(choice)
            .zip(&options)
            .map(|((s, &c), o)| s[0] / o[c] * cell)
            .sum()
    };
    while total(&choice) > budget {
        let Some(i) = (0..sources.len()).find(|&i| choice[i] + 1 < options[i].len()) else {
            break;
        };
        choice[i] += 1;
    }
    let plan_exits = sources
        .iter()
        .zip(exits.layers())
        .zip(choice.iter().zip(&options))
        .map(|((s, &layer), (&c, o))| ExitPool {
            layer,
            source: *s,
            kernel: [o[c], s[1].div_ceil(h0), s[2].div_ceil(w0)],
            pooled: [s[0] / o[c], h0, w0],
        })
        .collect();
    Ok(PoolPlan {
        exits: plan_exits,
        target: (h0, w0),
        budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Conv2dSpec;

    fn conv(o: usize, c: usize) -> LayerKind {
        LayerKind::Conv2d(Conv2dSpec::new(o, c, 3, 3).padding(1))
    }

    #[test]
    fn single_exit_is_identity() {
        let m = Model::<f32>::new(&[1, 4, 4], vec![conv(8, 1), LayerKind::Relu], 0).unwrap();
        let e = ExitPointSet::after_convolutions(&m).unwrap();
        assert_eq!(e.layers(), &[1]);
        let p = plan_pooling(&m, &e, 128).unwrap();
        assert_eq!(p.exits[0].kernel, [1, 1, 1]);
        assert_eq!(p.exits[0].pooled, [8, 4, 4]);
    }

    #[test]
    fn spatial_kernels_and_budget() {
        let m = Model::<f32>::new(
            &[1, 16, 16],
            vec![
                conv(4, 1),
                LayerKind::Relu,
                LayerKind::MaxPool2d {
                    kernel_h: 2,
                    kernel_w: 2,
                    stride: 2,
                },
                conv(4, 4),
                LayerKind::Relu,
            ],
            0,
        )
        .unwrap();
        let e = ExitPointSet::after_convolutions(&m).unwrap();
        assert_eq!(e.layers(), &[1, 4]);
        let p = plan_pooling(&m, &e, 1 << 20).unwrap();
        assert_eq!(p.target, (8, 8));
        assert_eq!(&p.exits[0].kernel[1..], &[2, 2]);
        assert_eq!(&p.exits[1].kernel[1..], &[1, 1]);
        // budget binds: earliest exit's channels shrink first
        let p = plan_pooling(&m, &e, 6 * 64).unwrap();
        assert_eq!(p.exits[0].pooled[0], 2);
        assert_eq!(p.exits[1].pooled[0], 4);
        assert!(p.feature_len() <= 6 * 64);
        assert!(plan_pooling(&m, &e, 64).is_err());
    }

    #[test]
    fn exit_validation() {
        assert!(ExitPointSet::new(vec![]).is_err());
        assert!(ExitPointSet::new(vec![3, 3]).is_err());
        assert!(ExitPointSet::new(vec![1, 3]).is_ok());
    }
}

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Fraction `sparsity` of a layer's weights that must be exactly zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsityConstraint {
    pub layer: usize,
    pub sparsity: f64,
}

impl SparsityConstraint {
    pub fn new(layer: usize, sparsity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&sparsity) {
            return Err(Error::InvalidArgument(format!("sparsity {sparsity} outside [0, 1]")));
        }
        Ok(Self { layer, sparsity })
    }

    pub fn is_satisfied_by<T: Scalar>(&self, w: &Tensor<T>) -> bool {
        w.count_zero() >= required_zeros(w.len(), self.sparsity)
    }
}

/// Zero entries demanded by sparsity `s` over `total` entries:
/// `ceil(s * total)`, tolerant of representation error in `s`.
pub fn required_zeros(total: usize, s: f64) -> usize {
    let raw = s.clamp(0.0, 1.0) * total as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Keeps the `total - ceil(s * total)` largest-magnitude entries and zeroes
/// the rest. Equal magnitudes keep the lower flat index first.
pub fn hard_threshold<T: Scalar>(w: &Tensor<T>, s: f64) -> Tensor<T> {
    let mut out = w.clone();
    hard_threshold_in_place(&mut out, s);
    out
}

pub fn hard_threshold_in_place<T: Scalar>(w: &mut Tensor<T>, s: f64) {
    let total = w.len();
    let zeros = required_zeros(total, s);
    if zeros == 0 {
        return;
    }
    let data = w.data_mut();
    if zeros == total {
        data.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let keep = total - zeros;
    // With the index tie-break every entry has a distinct rank, so the
    // surviving set is the unique top-`keep` prefix.
    let by_rank = |a: &usize, b: &usize| -> Ordering {
        data[*b]
            .abs()
            .partial_cmp(&data[*a].abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    let mut order: Vec<usize> = (0..total).collect();
    order.select_nth_unstable_by(keep - 1, by_rank);
    let mut survive = vec![false; total];
    for &i in &order[..keep] {
        survive[i] = true;
    }
    for (v, s) in data.iter_mut().zip(survive) {
        if !s {
            *v = T::zero();
        }
    }
}

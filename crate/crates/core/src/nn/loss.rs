use crate::scalar::Scalar;

/// Index of the maximum; the lowest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy of one logit row. Returns the loss and its
/// gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let log_sum = sum.ln() + max;
    let loss = log_sum - logits[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let p = e / sum;
            if i == label {
                p - T::one()
            } else {
                p
            }
        })
        .collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in 2..12 {
            let (loss, grad) = softmax_cross_entropy(&vec![0.37f64; k], 0);
            assert!((loss - (k as f64).ln()).abs() < 1e-6);
            assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        }
        let (loss, _) = softmax_cross_entropy(&[0.0f32; 4], 3);
        assert!((f64::from(loss) - 4f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn loss_is_non_negative_for_extreme_logits() {
        let (loss, _) = softmax_cross_entropy(&[1000.0f32, -1000.0, 0.0], 0);
        assert!(loss >= 0.0 && loss.is_finite());
        let (loss, _) = softmax_cross_entropy(&[1000.0f32, -1000.0, 0.0], 1);
        assert!(loss > 1000.0 && loss.is_finite());
    }
}

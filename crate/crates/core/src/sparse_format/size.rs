use crate::nn::{Layer, LayerKind, Model};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageMode {
    Dense,
    Csr,
}

/// Shape of a prunable layer's weights viewed as a matrix: dense layers are
/// `(outputs, inputs)`, convolutions `(out_channels, in_channels * kh * kw)`.
pub fn weight_matrix_dims(kind: &LayerKind) -> Option<(usize, usize)> {
    match *kind {
        LayerKind::Dense { inputs, outputs, .. } => Some((outputs, inputs)),
        LayerKind::Conv2d(s) => Some((s.out_channels, s.in_channels * s.kernel_h * s.kernel_w)),
        _ => None,
    }
}

/// Bytes for one layer. In CSR mode the weight matrix costs
/// `(value + 2) * nnz + 4 * (rows + 1)`; biases and batch-norm parameters
/// stay dense in both modes.
pub fn layer_size_bytes<T: Scalar>(layer: &Layer<T>, mode: StorageMode) -> usize {
    let dense: usize = layer.param_count() * T::BYTES;
    match (mode, layer.weight(), weight_matrix_dims(layer.kind())) {
        (StorageMode::Csr, Some(w), Some((rows, _))) => {
            let rest = (layer.param_count() - w.len()) * T::BYTES;
            w.count_nonzero() * (T::BYTES + 2) + 4 * (rows + 1) + rest
        }
        _ => dense,
    }
}

pub fn size_bytes<T: Scalar>(model: &Model<T>, mode: StorageMode) -> usize {
    model.layers().iter().map(|l| layer_size_bytes(l, mode)).sum()
}

/// Density below which a `rows x cols` f32 matrix is smaller in CSR form.
pub fn csr_break_even_density(rows: usize, cols: usize) -> f64 {
    let rc = (rows * cols) as f64;
    (4.0 * rc - 4.0 * rows as f64 - 4.0) / (6.0 * rc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Tensor};

    fn dense10(weight: Tensor<f32>) -> Model<f32> {
        let kind = LayerKind::Dense {
            inputs: 10,
            outputs: 10,
            bias: true,
        };
        let layer = Layer::new(kind, vec![weight, Tensor::full(&[10], 0.5)]).unwrap();
        Model::from_layers(&[10], vec![layer]).unwrap()
    }

    #[test]
    fn dense_and_csr_formulas() {
        let full = dense10(Tensor::full(&[10, 10], 1.0));
        assert_eq!(size_bytes(&full, StorageMode::Dense), 440);
        assert_eq!(size_bytes(&full, StorageMode::Csr), 600 + 44 + 40);
        let empty = dense10(Tensor::zeros(&[10, 10]));
        assert_eq!(size_bytes(&empty, StorageMode::Csr), 44 + 40);
        assert_eq!(size_bytes(&empty, StorageMode::Dense), 440);
    }

    #[test]
    fn break_even_matches_formula() {
        let (r, c) = (10usize, 10usize);
        let d = csr_break_even_density(r, c);
        let nnz_below = (d * 100.0).floor() as usize;
        let csr = |nnz: usize| 6 * nnz + 4 * (r + 1);
        assert!(csr(nnz_below) < 4 * r * c);
        assert!(csr(nnz_below + 1) >= 4 * r * c);
    }
}

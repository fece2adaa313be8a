use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};

use super::buffer::buffer_profile;
use crate::error::{Error, Result};
use crate::nn::{Conv2dSpec, Layer, LayerKind, Model, Tensor};
use crate::scalar::Scalar;

fn to_matrix<T: Scalar>(rows: usize, cols: usize, data: &[T]) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows, cols, data.iter().map(|v| v.to_f64_lossy()))
}

fn matrix_dims<T: Scalar>(w: &Tensor<T>) -> Result<(usize, usize)> {
    match w.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::shape("matrix", &[0, 0], s)),
    }
}

/// Thin SVD with singular triplets sorted by decreasing singular value.
fn sorted_svd(a: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = a.svd(true, true);
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
        return Err(Error::Contract("SVD did not produce singular vectors".into()));
    };
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt = DMatrix::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
    let sigma = order.iter().map(|&i| sigma[i]).collect();
    Ok((u, sigma, vt))
}

/// Singular values of a 2-D tensor, largest first.
pub fn singular_values<T: Scalar>(w: &Tensor<T>) -> Result<Vec<f64>> {
    let (m, n) = matrix_dims(w)?;
    let mut s: Vec<f64> = to_matrix(m, n, w.data()).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    Ok(s)
}

/// Smallest `k` whose leading singular values hold fraction `tau` of the
/// squared-singular-value energy. A zero matrix has rank estimate 1.
pub fn estimate_rank_from_singular_values(sigma: &[f64], tau: f64) -> usize {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total <= 0.0 || sigma.is_empty() {
        return 1;
    }
    let goal = tau.clamp(0.0, 1.0) * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        acc += s * s;
        if acc >= goal {
            return i + 1;
        }
    }
    sigma.len()
}

pub fn estimate_rank<T: Scalar>(w: &Tensor<T>, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("energy fraction {tau} outside (0, 1]")));
    }
    Ok(estimate_rank_from_singular_values(&singular_values(w)?, tau))
}

/// Rank-`k` factorization `W ≈ A·B` with `A = U_k Σ_k` (m×k) and
/// `B = V_kᵀ` (k×n).
pub fn separate_fc<T: Scalar>(w: &Tensor<T>, k: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, n) = matrix_dims(w)?;
    let max = m.min(n);
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange { rank: k, max });
    }
    let (u, sigma, vt) = sorted_svd(to_matrix(m, n, w.data()))?;
    let mut a = Vec::with_capacity(m * k);
    for r in 0..m {
        for c in 0..k {
            a.push(T::from_f64_lossy(u[(r, c)] * sigma[c]));
        }
    }
    let mut b = Vec::with_capacity(k * n);
    for r in 0..k {
        for c in 0..n {
            b.push(T::from_f64_lossy(vt[(r, c)]));
        }
    }
    Ok((Tensor::new(vec![m, k], a)?, Tensor::new(vec![k, n], b)?))
}

/// Replaces a Dense layer by `Dense(in, k, no bias)` then `Dense(k, out)`
/// carrying the original bias.
pub fn separate_dense_layer<T: Scalar>(layer: &Layer<T>, k: usize) -> Result<Vec<Layer<T>>> {
    let LayerKind::Dense { inputs, outputs, bias } = *layer.kind() else {
        return Err(Error::InvalidTarget {
            layer: 0,
            kind: layer.kind().name().into(),
        });
    };
    let w = layer.weight().expect("dense layers carry weights");
    let (a, b) = separate_fc(w, k)?;
    let first = Layer::new(
        LayerKind::Dense {
            inputs,
            outputs: k,
            bias: false,
        },
        vec![b],
    )?;
    let mut params = vec![a];
    if bias {
        params.push(layer.params()[1].clone());
    }
    let second = Layer::new(
        LayerKind::Dense {
            inputs: k,
            outputs,
            bias,
        },
        params,
    )?;
    Ok(vec![first, second])
}

/// Tucker-2 factors of a conv kernel along its channel modes.
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerFactors<T = f32> {
    /// `(r_in, C, 1, 1)`: projects input channels, `U_inᵀ`.
    pub input_projection: Tensor<T>,
    /// `(r_out, r_in, kh, kw)`.
    pub core: Tensor<T>,
    /// `(O, r_out, 1, 1)`: expands to output channels, `U_out`.
    pub output_projection: Tensor<T>,
}

/// Leading `r` eigenvectors of `M Mᵀ`, as columns, sorted by decreasing
/// eigenvalue. Gives a full orthonormal basis even when `M` is wide.
fn leading_basis(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let gram = m * m.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    DMatrix::from_fn(m.nrows(), r, |row, c| eig.eigenvectors[(row, order[c])])
}

fn kernel_dims<T: Scalar>(k: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match k.shape() {
        [o, c, h, w] => Ok((*o, *c, *h, *w)),
        s => Err(Error::shape("conv kernel", &[0, 0, 0, 0], s)),
    }
}

/// Mode-0 (output channel) and mode-1 (input channel) unfoldings.
fn unfoldings<T: Scalar>(k: &Tensor<T>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (o, c, h, w) = kernel_dims(k)?;
    let d = k.data();
    let s = h * w;
    let mode0 = DMatrix::from_fn(o, c * s, |r, col| d[r * c * s + col].to_f64_lossy());
    let mode1 = DMatrix::from_fn(c, o * s, |r, col| {
        let (oo, rest) = (col / s, col % s);
        d[(oo * c + r) * s + rest].to_f64_lossy()
    });
    Ok((mode0, mode1))
}

/// HOSVD Tucker-2 decomposition with ranks `(r_in, r_out)`.
pub fn separate_conv<T: Scalar>(kernel: &Tensor<T>, ranks: (usize, usize)) -> Result<TuckerFactors<T>> {
    let (o, c, h, w) = kernel_dims(kernel)?;
    let (r_in, r_out) = ranks;
    if r_in == 0 || r_in > c {
        return Err(Error::RankOutOfRange { rank: r_in, max: c });
    }
    if r_out == 0 || r_out > o {
        return Err(Error::RankOutOfRange { rank: r_out, max: o });
    }
    let (mode0, mode1) = unfoldings(kernel)?;
    let u_out = leading_basis(&mode0, r_out);
    let u_in = leading_basis(&mode1, r_in);
    let s = h * w;
    let d = kernel.data();
    // core[ro, ri, p] = sum_{o, c} u_out[o, ro] * u_in[c, ri] * K[o, c, p]
    let mut partial = vec![0.0f64; r_out * c * s];
    for ro in 0..r_out {
        for oo in 0..o {
            let f = u_out[(oo, ro)];
            if f == 0.0 {
                continue;
            }
            for cc in 0..c {
                for p in 0..s {
                    partial[(ro * c + cc) * s + p] += f * d[(oo * c + cc) * s + p].to_f64_lossy();
                }
            }
        }
    }
    let mut core = vec![0.0f64; r_out * r_in * s];
    for ro in 0..r_out {
        for ri in 0..r_in {
            for cc in 0..c {
                let f = u_in[(cc, ri)];
                for p in 0..s {
                    core[(ro * r_in + ri) * s + p] += f * partial[(ro * c + cc) * s + p];
                }
            }
        }
    }
    let input_projection = (0..r_in)
        .flat_map(|ri| (0..c).map(move |cc| (ri, cc)))
        .map(|(ri, cc)| T::from_f64_lossy(u_in[(cc, ri)]))
        .collect();
    let output_projection = (0..o)
        .flat_map(|oo| (0..r_out).map(move |ro| (oo, ro)))
        .map(|(oo, ro)| T::from_f64_lossy(u_out[(oo, ro)]))
        .collect();
    Ok(TuckerFactors {
        input_projection: Tensor::new(vec![r_in, c, 1, 1], input_projection)?,
        core: Tensor::new(vec![r_out, r_in, h, w], core.into_iter().map(T::from_f64_lossy).collect())?,
        output_projection: Tensor::new(vec![o, r_out, 1, 1], output_projection)?,
    })
}

/// Replaces a Conv2d layer by its three Tucker-2 convolutions. The core keeps
/// stride and padding; the output projection carries the bias.
pub fn separate_conv_layer<T: Scalar>(layer: &Layer<T>, ranks: (usize, usize)) -> Result<Vec<Layer<T>>> {
    let LayerKind::Conv2d(spec) = *layer.kind() else {
        return Err(Error::InvalidTarget {
            layer: 0,
            kind: layer.kind().name().into(),
        });
    };
    let f = separate_conv(layer.weight().expect("conv layers carry weights"), ranks)?;
    let (r_in, r_out) = ranks;
    let first = Layer::new(
        LayerKind::Conv2d(Conv2dSpec::new(r_in, spec.in_channels, 1, 1).bias(false)),
        vec![f.input_projection],
    )?;
    let core = Layer::new(
        LayerKind::Conv2d(
            Conv2dSpec::new(r_out, r_in, spec.kernel_h, spec.kernel_w)
                .stride(spec.stride)
                .padding(spec.padding)
                .bias(false),
        ),
        vec![f.core],
    )?;
    let mut params = vec![f.output_projection];
    if spec.bias {
        params.push(layer.params()[1].clone());
    }
    let last = Layer::new(
        LayerKind::Conv2d(Conv2dSpec::new(spec.out_channels, r_out, 1, 1).bias(spec.bias)),
        params,
    )?;
    Ok(vec![first, core, last])
}

/// One separation performed by [`separate_for_budget`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeparationStep {
    /// Index of the layer in the model at the time it was separated.
    pub layer: usize,
    pub kind: String,
    /// `[k]` for Dense, `[r_in, r_out]` for Conv2d.
    pub ranks: Vec<usize>,
    pub requirement_before: usize,
    pub working_buffer_after: usize,
}

#[derive(Clone, Debug)]
pub struct SeparationOutcome<T = f32> {
    pub model: Model<T>,
    pub steps: Vec<SeparationStep>,
    pub working_buffer: usize,
    pub budget: usize,
    pub budget_met: bool,
}

/// Ranks that fit the budget, or `None` when no rank brings the separated
/// layers under it or no reduction is possible.
fn dense_rank(n: usize, m: usize, estimate: usize, budget: usize) -> Option<usize> {
    let cap = budget.checked_sub(n.max(m))?;
    let k = estimate.min(cap).min(n.min(m).saturating_sub(1));
    (k >= 1).then_some(k)
}

fn conv_ranks(
    c_hw: (usize, usize),
    o_hw: (usize, usize),
    estimate: (usize, usize),
    budget: usize,
) -> Option<(usize, usize)> {
    let (c, hw_in) = c_hw;
    let (o, hw_out) = o_hw;
    let cap_in = budget.checked_sub(c * hw_in)? / hw_in;
    let cap_out = budget.checked_sub(o * hw_out)? / hw_out;
    let mut r_in = estimate.0.min(cap_in).min(c);
    let mut r_out = estimate.1.min(cap_out).min(o);
    while r_in >= 1 && r_out >= 1 && r_in * hw_in + r_out * hw_out > budget {
        if r_in * hw_in >= r_out * hw_out {
            r_in -= 1;
        } else {
            r_out -= 1;
        }
    }
    (r_in >= 1 && r_out >= 1).then_some((r_in, r_out))
}

/// Separates the layers with the largest buffer requirement until the
/// working buffer fits `budget` elements. Separation ranks start at the
/// `tau` energy estimate and shrink to fit. Each original layer is
/// separated at most once; when the largest requirement belongs to a layer
/// that cannot be separated (further), the outcome is flagged unmet.
pub fn separate_for_budget<T: Scalar>(model: Model<T>, budget: usize, tau: f64) -> Result<SeparationOutcome<T>> {
    if budget == 0 {
        return Err(Error::InvalidArgument("buffer budget must be > 0".into()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("energy fraction {tau} outside (0, 1]")));
    }
    let mut model = model;
    let mut separated = vec![false; model.len()];
    let mut steps = Vec::new();
    loop {
        let profile = buffer_profile(&model, model.input_shape())?;
        let working = profile.working_buffer();
        if working <= budget {
            return Ok(SeparationOutcome {
                model,
                steps,
                working_buffer: working,
                budget,
                budget_met: true,
            });
        }
        let unmet = |model: Model<T>, steps| {
            Ok(SeparationOutcome {
                model,
                steps,
                working_buffer: working,
                budget,
                budget_met: false,
            })
        };
        let Some(idx) = profile.largest() else {
            return unmet(model, steps);
        };
        if separated[idx] {
            return unmet(model, steps);
        }
        let layer = model.layer(idx).clone();
        let input_shape = model.layer_input_shapes()[idx].clone();
        let requirement = profile.layers[idx].requirement();
        let (replacement, ranks) = match *layer.kind() {
            LayerKind::Dense { inputs, outputs, .. } => {
                let est = estimate_rank(layer.weight().expect("dense weight"), tau)?;
                let Some(k) = dense_rank(inputs, outputs, est, budget) else {
                    return unmet(model, steps);
                };
                (separate_dense_layer(&layer, k)?, vec![k])
            }
            LayerKind::Conv2d(spec) => {
                let out_shape = layer.kind().output_shape(&input_shape)?;
                let hw_in = input_shape[1] * input_shape[2];
                let hw_out = out_shape[1] * out_shape[2];
                let (mode0, mode1) = unfoldings(layer.weight().expect("conv weight"))?;
                let est_out = estimate_rank_from_singular_values(
                    &mode0.singular_values().iter().copied().collect::<Vec<_>>(),
                    tau,
                );
                let est_in = estimate_rank_from_singular_values(
                    &mode1.singular_values().iter().copied().collect::<Vec<_>>(),
                    tau,
                );
                let Some(r) = conv_ranks(
                    (spec.in_channels, hw_in),
                    (spec.out_channels, hw_out),
                    (est_in, est_out),
                    budget,
                ) else {
                    return unmet(model, steps);
                };
                (separate_conv_layer(&layer, r)?, vec![r.0, r.1])
            }
            _ => return unmet(model, steps),
        };
        let count = replacement.len();
        model.splice(idx, replacement)?;
        separated.splice(idx..=idx, std::iter::repeat_n(true, count));
        let after = buffer_profile(&model, model.input_shape())?.working_buffer();
        steps.push(SeparationStep {
            layer: idx,
            kind: layer.kind().name().into(),
            ranks,
            requirement_before: requirement,
            working_buffer_after: after,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_estimates() {
        let eye = Tensor::<f64>::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(estimate_rank(&eye, 0.9).unwrap(), 3);
        let d = Tensor::<f64>::new(vec![2, 2], vec![3., 0., 0., 1.]).unwrap();
        assert_eq!(estimate_rank(&d, 0.9).unwrap(), 1);
        assert_eq!(estimate_rank(&d, 1.0).unwrap(), 2);
        assert_eq!(estimate_rank(&Tensor::<f64>::zeros(&[2, 3]), 0.5).unwrap(), 1);
    }

    #[test]
    fn rank_one_reconstruction() {
        let w = Tensor::<f64>::new(vec![2, 3], vec![3., 4., 5., 6., 8., 10.]).unwrap();
        let (a, b) = separate_fc(&w, 1).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let v = a.data()[i] * b.data()[j];
                assert!((v - w.data()[i * 3 + j]).abs() < 1e-9);
            }
        }
        assert!(separate_fc(&w, 0).is_err());
        assert!(separate_fc(&w, 3).is_err());
    }

    #[test]
    fn rank_caps() {
        assert_eq!(dense_rank(100, 10, 10, 106), Some(6));
        assert_eq!(dense_rank(100, 10, 3, 106), Some(3));
        assert_eq!(dense_rank(100, 10, 10, 100), None);
        assert_eq!(conv_ranks((4, 16), (4, 16), (4, 4), 16), None);
    }
}

mod common;

use common::{conv, dense};
use kbnet_core::nn::{Dataset, Layer, LayerKind, Model, OptimizerKind, SyntheticKind, Tensor, TrainConfig};
use kbnet_core::sparse_format::{size_bytes, StorageMode};
use kbnet_core::sparsecomp::{
    auto_compress, buffer_profile, estimate_rank, hard_threshold, projected_retrain, projected_retrain_with,
    separate_conv, separate_conv_layer, separate_dense_layer, separate_fc, separate_for_budget, IterationOutcome,
    CompressionPlan, SparsityConstraint,
};
use kbnet_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Sort-by-magnitude oracle: the surviving flat indices.
fn oracle_mask(values: &[f32], s: f64) -> Vec<bool> {
    let total = values.len();
    let zeros = ((s * total as f64) - 1e-9).ceil().min(total as f64) as usize;
    let keep = total - zeros;
    let mut idx: Vec<usize> = (0..total).collect();
    idx.sort_by(|&a, &b| values[b].abs().partial_cmp(&values[a].abs()).unwrap().then(a.cmp(&b)));
    let mut mask = vec![false; total];
    for &i in &idx[..keep] {
        mask[i] = true;
    }
    mask
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn hard_threshold_matches_sort_oracle(rows in 1usize..=64, cols in 1usize..=64, seed in any::<u64>(), tenth in 1usize..=9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let w = Tensor::new(vec![rows, cols], values.clone()).unwrap();
        let s = tenth as f64 / 10.0;
        let out = hard_threshold(&w, s);
        let mask = oracle_mask(&values, s);
        for (i, (&v, &keep)) in out.data().iter().zip(&mask).enumerate() {
            if keep {
                prop_assert_eq!(v.to_bits(), values[i].to_bits());
            } else {
                prop_assert_eq!(v, 0.0);
            }
        }
        prop_assert!(SparsityConstraint::new(0, s).unwrap().is_satisfied_by(&out));
        prop_assert!(hard_threshold(&out, s).bitwise_eq(&out));
    }
}

#[test]
fn hard_threshold_examples() {
    let w = Tensor::vector(vec![3.0f32, -1.0, 0.5, 2.0]);
    assert_eq!(hard_threshold(&w, 0.5).data(), &[3.0, 0.0, 0.0, 2.0]);
    assert!(hard_threshold(&w, 0.0).bitwise_eq(&w));
    assert_eq!(hard_threshold(&w, 1.0).count_nonzero(), 0);
}

fn retrain_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: 0.02,
        optimizer: OptimizerKind::Sgd,
        weight_decay: 0.0,
        seed: 3,
    }
}

#[test]
fn projected_retrain_holds_constraint_at_every_epoch() {
    let (m, tr, _, _) = common::trained_blob_mlp(2);
    let mut m = m;
    m.set_sparsity(4, Some(0.75));
    let w4 = hard_threshold(m.layer(4).weight().unwrap(), 0.75);
    *m.layers_mut()[4].weight_mut().unwrap() = w4;
    let before0 = m.layer(0).params().to_vec();
    let mut epochs = 0;
    let (out, hist) = projected_retrain_with(m, 2, 0.5, &tr, None, &retrain_cfg(30), &mut |_, model| {
        epochs += 1;
        let c2 = SparsityConstraint::new(2, 0.5).unwrap();
        let c4 = SparsityConstraint::new(4, 0.75).unwrap();
        assert!(c2.is_satisfied_by(model.layer(2).weight().unwrap()));
        assert!(c4.is_satisfied_by(model.layer(4).weight().unwrap()));
        assert_eq!(model.layer(2).weight().unwrap().count_zero(), 2048);
    })
    .unwrap();
    assert_eq!(epochs, 30);
    assert_eq!(hist.train_loss.len(), 30);
    assert!(out.layer(0).params().iter().zip(&before0).all(|(a, b)| a.bitwise_eq(b)));
    assert_eq!(out.sparsity(2), Some(0.5));
    assert!(out.frozen_mask().iter().all(|f| !f));
}

#[test]
fn projected_retrain_zero_epochs_only_projects() {
    let (m, tr, _, _) = common::trained_blob_mlp(2);
    let out = projected_retrain(m.clone(), 2, 0.9, &tr, &retrain_cfg(0)).unwrap();
    let expect = hard_threshold(m.layer(2).weight().unwrap(), 0.9);
    assert!(out.layer(2).weight().unwrap().bitwise_eq(&expect));
    for i in [0, 4] {
        assert!(out.layer(i).params().iter().zip(m.layer(i).params()).all(|(a, b)| a.bitwise_eq(b)));
    }
    assert!(out.layer(2).bias().unwrap().bitwise_eq(m.layer(2).bias().unwrap()));
}

#[test]
fn projected_retrain_rejects_parameterless_target() {
    let (m, tr, _, _) = common::trained_blob_mlp(2);
    let err = projected_retrain(m, 1, 0.5, &tr, &retrain_cfg(1)).unwrap_err();
    assert!(matches!(err, Error::InvalidTarget { layer: 1, .. }));
}

#[test]
fn auto_compress_is_a_noop_when_target_exceeds_size() {
    let (m, tr, va, _) = common::trained_blob_mlp(2);
    let plan = CompressionPlan::new(size_bytes(&m, StorageMode::Csr) + 1);
    let (out, rep) = auto_compress(m.clone(), &plan, &tr, Some(&va)).unwrap();
    assert!(rep.iterations.is_empty());
    assert_eq!(rep.compression_rate(), 1.0);
    assert!(rep.target_met);
    assert!(out.params_bitwise_eq(&m));
}

#[test]
fn auto_compress_with_zero_tolerance_on_noisy_data_misses_target() {
    let all: Dataset<f32> = SyntheticKind::Blobs { classes: 4, std: 0.25 }.generate(600, 9).unwrap();
    let (tr, va, _) = all.split_three(0.6, 0.2, 10).unwrap();
    let m: Model<f32> = Model::new(&[2], vec![dense(2, 64), LayerKind::Relu, dense(64, 4)], 9).unwrap();
    let (m, _) = kbnet_core::nn::train(m, &tr, None, &retrain_cfg(20)).unwrap();
    let mut plan = CompressionPlan::new(size_bytes(&m, StorageMode::Dense) / 10);
    plan.max_accuracy_drop = 0.0;
    plan.retrain = retrain_cfg(2);
    let (_, rep) = auto_compress(m, &plan, &tr, Some(&va)).unwrap();
    assert!(!rep.target_met);
    assert!(!rep.iterations.is_empty());
    assert!(rep
        .iterations
        .iter()
        .any(|r| matches!(r.outcome, IterationOutcome::Fragile | IterationOutcome::Reverted)));
}

#[test]
fn auto_compress_never_increases_nonzeros_and_keeps_constraints() {
    let (m, tr, va, _) = common::trained_blob_mlp(3);
    let mut plan = CompressionPlan::new(size_bytes(&m, StorageMode::Dense) / 4);
    plan.retrain = retrain_cfg(3);
    let (out, rep) = auto_compress(m.clone(), &plan, &tr, Some(&va)).unwrap();
    let mut last = m.nonzero_param_count();
    for r in &rep.iterations {
        if r.outcome == IterationOutcome::Accepted {
            assert!(r.nonzero_params <= last);
            last = r.nonzero_params;
        }
    }
    for (i, s) in rep.layer_sparsity.iter().enumerate() {
        if let Some(s) = s {
            assert!(SparsityConstraint::new(i, *s).unwrap().is_satisfied_by(out.layer(i).weight().unwrap()));
        }
    }
    assert_eq!(rep.final_csr_bytes, size_bytes(&out, StorageMode::Csr));
    assert!(rep.compression_rate() >= 1.0);
    assert!(rep.target_met);
}

#[test]
fn full_rank_fc_separation_is_lossless() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kind = dense(12, 7);
    let layer = Layer::<f64>::new(kind, vec![random_tensor(&[7, 12], &mut rng), random_tensor(&[7], &mut rng)]).unwrap();
    let original = Model::from_layers(&[12], vec![layer.clone()]).unwrap();
    let split = Model::from_layers(&[12], separate_dense_layer(&layer, 7).unwrap()).unwrap();
    for _ in 0..10 {
        let x = random_tensor(&[12], &mut rng);
        let (a, b) = (split.forward(&x).unwrap(), original.forward(&x).unwrap());
        assert!(rel_err(a.data(), b.data()) <= 1e-4);
    }
    let (a, b) = separate_fc(layer.weight().unwrap(), 3).unwrap();
    assert_eq!((a.shape(), b.shape()), (&[7usize, 3][..], &[3usize, 12][..]));
    assert!(matches!(separate_fc(layer.weight().unwrap(), 0), Err(Error::RankOutOfRange { .. })));
    assert!(matches!(separate_fc(layer.weight().unwrap(), 8), Err(Error::RankOutOfRange { .. })));
}

#[test]
fn full_rank_tucker_separation_is_lossless() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let kind = conv(4, 4, 3);
    let layer = Layer::<f64>::new(kind, vec![random_tensor(&[4, 4, 3, 3], &mut rng), random_tensor(&[4], &mut rng)]).unwrap();
    let original = Model::from_layers(&[4, 6, 6], vec![layer.clone()]).unwrap();
    let split = Model::from_layers(&[4, 6, 6], separate_conv_layer(&layer, (4, 4)).unwrap()).unwrap();
    for _ in 0..10 {
        let x = random_tensor(&[4, 6, 6], &mut rng);
        let (a, b) = (split.forward(&x).unwrap(), original.forward(&x).unwrap());
        assert!(rel_err(a.data(), b.data()) <= 1e-4);
    }
    assert!(separate_conv(layer.weight().unwrap(), (0, 2)).is_err());
    assert!(separate_conv(layer.weight().unwrap(), (2, 5)).is_err());
}

#[test]
fn rank_one_tucker_kernel_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (o, c) = (3, 5);
    let u: Vec<f64> = (0..o).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut k = Vec::with_capacity(o * c * 9);
    for uo in &u {
        for vc in &v {
            k.extend(g.iter().map(|gs| uo * vc * gs));
        }
    }
    let kernel = Tensor::new(vec![o, c, 3, 3], k.clone()).unwrap();
    let f = separate_conv(&kernel, (1, 1)).unwrap();
    let mut rebuilt = vec![0.0; o * c * 9];
    for oo in 0..o {
        for cc in 0..c {
            for s in 0..9 {
                rebuilt[(oo * c + cc) * 9 + s] =
                    f.output_projection.data()[oo] * f.core.data()[s] * f.input_projection.data()[cc];
            }
        }
    }
    assert!(rel_err(&rebuilt, &k) <= 1e-5);
}

#[test]
fn rank_estimates() {
    let eye = Tensor::new(vec![3, 3], vec![1.0f64, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(estimate_rank(&eye, 0.9).unwrap(), 3);
    let diag = Tensor::new(vec![2, 2], vec![3.0f64, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(estimate_rank(&diag, 0.9).unwrap(), 1);
    let r1 = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, 2.0, 4.0, 6.0]).unwrap();
    for tau in [0.1, 0.5, 0.99, 1.0] {
        assert_eq!(estimate_rank(&r1, tau).unwrap(), 1);
    }
}

#[test]
fn buffer_profiles() {
    let m: Model<f32> = Model::new(&[100], vec![dense(100, 10)], 1).unwrap();
    let p = buffer_profile(&m, &[100]).unwrap();
    assert_eq!(p.working_buffer(), 110);
    let layer = m.layer(0).clone();
    let split = Model::from_layers(&[100], separate_dense_layer(&layer, 5).unwrap()).unwrap();
    let p = buffer_profile(&split, &[100]).unwrap();
    let reqs: Vec<usize> = p.layers.iter().map(|l| l.requirement()).collect();
    assert_eq!(reqs, vec![105, 15]);
    assert_eq!(p.working_buffer(), 105);
    let c: Model<f32> = Model::new(&[1, 8, 8], vec![conv(8, 1, 3)], 1).unwrap();
    assert_eq!(buffer_profile(&c, &[1, 8, 8]).unwrap().working_buffer(), 352);
}

#[test]
fn separate_for_budget_examples() {
    let m: Model<f32> = Model::new(&[100], vec![dense(100, 10)], 1).unwrap();
    let same = separate_for_budget(m.clone(), 110, 0.9).unwrap();
    assert!(same.budget_met && same.steps.is_empty());
    assert!(same.model.params_bitwise_eq(&m));

    let out = separate_for_budget(m.clone(), 106, 0.9).unwrap();
    assert!(out.budget_met);
    assert!(out.working_buffer <= 106);
    assert_eq!(out.steps.len(), 1);
    assert!(out.steps[0].ranks[0] <= 6);
    assert_eq!(buffer_profile(&out.model, &[100]).unwrap().working_buffer(), out.working_buffer);

    let tiny = separate_for_budget(m, 3, 0.9).unwrap();
    assert!(!tiny.budget_met);
    let cnn = separate_for_budget(common::desk_cnn(4, 1), 3, 0.9).unwrap();
    assert!(!cnn.budget_met);
}

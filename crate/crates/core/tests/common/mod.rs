#![allow(dead_code)]

use kbnet_core::gnet::{plan_pooling, ExitPointSet, GNetModel};
use kbnet_core::nn::{train, Conv2dSpec, Dataset, LayerKind, Model, OptimizerKind, Split, SyntheticKind, TrainConfig};

pub fn dense(inputs: usize, outputs: usize) -> LayerKind {
    LayerKind::Dense {
        inputs,
        outputs,
        bias: true,
    }
}

pub fn conv(o: usize, c: usize, k: usize) -> LayerKind {
    LayerKind::Conv2d(Conv2dSpec::new(o, c, k, k))
}

/// Train, validation and test splits of the 4-class blob problem.
pub fn blob_splits(seed: u64) -> (Dataset<f32>, Dataset<f32>, Dataset<f32>) {
    let all: Dataset<f32> = SyntheticKind::blobs(4).generate(1200, seed).unwrap();
    let (tr, va, te) = all.split_three(0.6, 0.2, seed + 1).unwrap();
    (tr, va.with_split(Split::Validation), te.with_split(Split::Test))
}

pub fn blob_mlp(seed: u64) -> Model<f32> {
    Model::new(
        &[2],
        vec![dense(2, 64), LayerKind::Relu, dense(64, 64), LayerKind::Relu, dense(64, 4)],
        seed,
    )
    .unwrap()
}

pub fn trained_blob_mlp(seed: u64) -> (Model<f32>, Dataset<f32>, Dataset<f32>, Dataset<f32>) {
    let (tr, va, te) = blob_splits(seed);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 16,
        learning_rate: 5e-3,
        optimizer: OptimizerKind::adam(),
        weight_decay: 0.0,
        seed,
    };
    let (m, _) = train(blob_mlp(seed), &tr, Some(&va), &cfg).unwrap();
    (m, tr, va, te)
}

/// Four-convolution model on `1 x 16 x 16` inputs whose last exit is
/// spatially `1 x 1`.
pub fn desk_cnn(classes: usize, seed: u64) -> Model<f32> {
    Model::new(
        &[1, 16, 16],
        vec![
            conv(8, 1, 3),
            LayerKind::Relu,
            LayerKind::MaxPool2d {
                kernel_h: 2,
                kernel_w: 2,
                stride: 2,
            },
            conv(16, 8, 3),
            LayerKind::Relu,
            conv(16, 16, 3),
            LayerKind::Relu,
            conv(16, 16, 3),
            LayerKind::Relu,
            LayerKind::Flatten,
            dense(16, classes),
        ],
        seed,
    )
    .unwrap()
}

pub fn desk_gnet(model: &Model<f32>, classes: usize, budget: usize, seed: u64) -> GNetModel<f32> {
    let exits = ExitPointSet::after_convolutions(model).unwrap();
    let plan = plan_pooling(model, &exits, budget).unwrap();
    GNetModel::new(plan, classes, seed).unwrap()
}

pub fn stripes(n: usize, seed: u64) -> Dataset<f32> {
    SyntheticKind::Stripes {
        side: 16,
        classes: 4,
        noise: 0.05,
    }
    .generate(n, seed)
    .unwrap()
}

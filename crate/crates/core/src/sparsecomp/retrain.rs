use super::threshold::hard_threshold_in_place;
use crate::error::{Error, Result};
use crate::nn::{train_with, Dataset, Model, TrainConfig, TrainHistory, TrainHooks};
use crate::scalar::Scalar;

/// Projects the target layer and every later layer that carries a recorded
/// sparsity back onto its constraint set.
fn project<T: Scalar>(model: &mut Model<T>, from: usize) {
    for idx in from..model.len() {
        if let Some(s) = model.sparsity(idx) {
            if let Some(w) = model.layers_mut()[idx].weight_mut() {
                hard_threshold_in_place(w, s);
            }
        }
    }
}

struct Projection<'a, T> {
    target: usize,
    on_epoch: &'a mut dyn FnMut(usize, &Model<T>),
}

impl<T: Scalar> TrainHooks<T> for Projection<'_, T> {
    fn after_step(&mut self, model: &mut Model<T>) {
        project(model, self.target);
    }

    fn after_epoch(&mut self, epoch: usize, model: &Model<T>) {
        (self.on_epoch)(epoch, model);
    }
}

/// Projected-gradient retraining of `target` at sparsity `s`.
///
/// Layers before the target are frozen for the duration; the target and all
/// later layers train, and after every step the target plus any later
/// layer with a recorded sparsity is hard-thresholded. The original frozen
/// mask is restored on return.
pub fn projected_retrain<T: Scalar>(
    model: Model<T>,
    target: usize,
    s: f64,
    data: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<Model<T>> {
    Ok(projected_retrain_with(model, target, s, data, None, cfg, &mut |_, _| {})?.0)
}

/// [`projected_retrain`] with an optional validation split and a callback
/// invoked at every epoch boundary.
pub fn projected_retrain_with<T: Scalar>(
    mut model: Model<T>,
    target: usize,
    s: f64,
    data: &Dataset<T>,
    validation: Option<&Dataset<T>>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &Model<T>),
) -> Result<(Model<T>, TrainHistory)> {
    if target >= model.len() {
        return Err(Error::InvalidArgument(format!(
            "target layer {target} beyond model of {} layers",
            model.len()
        )));
    }
    if !model.layer(target).kind().is_prunable() {
        return Err(Error::InvalidTarget {
            layer: target,
            kind: model.layer(target).kind().name().into(),
        });
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("sparsity {s} outside [0, 1]")));
    }
    let saved_mask = model.frozen_mask().to_vec();
    let mask: Vec<bool> = (0..model.len()).map(|i| i < target).collect();
    model.set_frozen_mask(&mask);
    model.set_sparsity(target, Some(s));
    project(&mut model, target);
    let mut hooks = Projection { target, on_epoch };
    let result = train_with(&mut model, data, validation, cfg, &mut hooks);
    model.set_frozen_mask(&saved_mask);
    Ok((model, result?))
}

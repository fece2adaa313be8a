use super::classifier::{gnet_forward, ForwardMode, GNetModel};
use super::features::extract_features;
use super::plan::PoolPlan;
use crate::error::Result;
use crate::nn::{evaluate, Dataset, Model};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ExitStats {
    /// 1-based exit index.
    pub exit: usize,
    /// Baseline layer the exit follows.
    pub layer: usize,
    pub accuracy: f64,
    /// Classifier MACs with zero slots skipped.
    pub macs: usize,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitEvaluation {
    pub exits: Vec<ExitStats>,
    /// Accuracy of the baseline run to completion.
    pub baseline_accuracy: f64,
}

impl ExitEvaluation {
    /// Tab-separated table, one row per exit.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("exit\tlayer\taccuracy\tmacs\tparams\n");
        for e in &self.exits {
            s.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\t{}\n",
                e.exit, e.layer, e.accuracy, e.macs, e.params
            ));
        }
        s.push_str(&format!("baseline\t-\t{:.6}\t-\t-\n", self.baseline_accuracy));
        s
    }
}

/// Accuracy at every forced exit, plus the baseline's own accuracy.
pub fn evaluate_exits<T: Scalar>(model: &Model<T>, g: &GNetModel<T>, data: &Dataset<T>) -> Result<ExitEvaluation> {
    let mut exits = Vec::with_capacity(g.plan.len());
    for (j, e) in g.plan.exits.iter().enumerate() {
        let exit = j + 1;
        let mut macs = 0;
        let accuracy = crate::nn::accuracy_with(data, |x| {
            let fs = extract_features(model, &g.plan, x, exit)?;
            let out = gnet_forward(g, &fs, ForwardMode::Compressed)?;
            macs = out.macs;
            Ok(out.logits)
        })?;
        exits.push(ExitStats {
            exit,
            layer: e.layer,
            accuracy,
            macs,
            params: g.param_count(),
        });
    }
    Ok(ExitEvaluation {
        exits,
        baseline_accuracy: evaluate(model, data)?,
    })
}

/// Parameter counts of one shared classifier against one Dense branch per
/// exit over the same pooled features.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamComparison {
    pub gnet_params: usize,
    pub per_branch_params: usize,
    /// `per_branch_params / gnet_params`.
    pub ratio: f64,
}

pub fn exit_param_comparison(plan: &PoolPlan, classes: usize) -> ParamComparison {
    let gnet_params = plan.feature_len() * classes + classes;
    let per_branch_params = plan.exits.iter().map(|e| e.len() * classes + classes).sum();
    ParamComparison {
        gnet_params,
        per_branch_params,
        ratio: per_branch_params as f64 / gnet_params as f64,
    }
}

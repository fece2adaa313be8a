use super::cost::CostModel;
use super::engine::{simulate, ExitTaken, SimConfig, SimResult};
use super::policy::ExitPolicy;
use super::trace::EnergyTrace;
use crate::error::Result;
use crate::gnet::GNetModel;
use crate::nn::{Model, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    /// `Cont.`, `Int.` or `E.E.`.
    pub regime: &'static str,
    pub time_s: f64,
    pub energy_j: f64,
    pub exit: ExitTaken,
    pub failures: usize,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("regime\ttime_s\tenergy_mJ\texit\tfailures\tcompleted\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{}\t{}\t{}\n",
                r.regime,
                r.time_s,
                r.energy_j * 1e3,
                r.exit.label(),
                r.failures,
                r.completed
            ));
        }
        s
    }
}

fn row<T: Scalar>(regime: &'static str, r: &SimResult<T>) -> ComparisonRow {
    ComparisonRow {
        regime,
        time_s: r.completion_time_s,
        energy_j: r.energy_consumed_j,
        exit: r.exit_taken,
        failures: r.failures(),
        completed: r.completed(),
    }
}

/// Continuous power, intermittent power, and intermittent power with a
/// deadline policy set to the continuous completion time.
pub fn run_comparison<T: Scalar>(
    model: &Model<T>,
    gnet: Option<&GNetModel<T>>,
    input: &Tensor<T>,
    trace: &EnergyTrace,
    costs: &CostModel,
    cfg: &SimConfig,
) -> Result<(ComparisonTable, [SimResult<T>; 3])> {
    let plain = SimConfig {
        policy: ExitPolicy::none(),
        ..cfg.clone()
    };
    let cont = simulate(model, gnet, input, &EnergyTrace::unlimited(), costs, &plain)?;
    let int = simulate(model, gnet, input, trace, costs, &plain)?;
    let ee_cfg = SimConfig {
        policy: ExitPolicy {
            half_life_s: cfg.policy.half_life_s,
            ..ExitPolicy::deadline(cont.completion_time_s)
        },
        ..cfg.clone()
    };
    let ee = simulate(model, gnet, input, trace, costs, &ee_cfg)?;
    let table = ComparisonTable {
        rows: vec![row("Cont.", &cont), row("Int.", &int), row("E.E.", &ee)],
    };
    Ok((table, [cont, int, ee]))
}

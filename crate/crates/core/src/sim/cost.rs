use crate::error::{Error, Result};
use crate::gnet::GNetModel;
use crate::nn::Model;
use crate::scalar::Scalar;

/// Per-operation hardware costs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HwParams {
    pub t_mac_s: f64,
    pub e_mac_j: f64,
    /// Per activation element read or written.
    pub t_mem_s: f64,
    pub e_mem_j: f64,
    /// Per byte committed to nonvolatile memory.
    pub t_nvm_byte_s: f64,
    pub e_nvm_byte_j: f64,
}

impl Default for HwParams {
    /// 1 MHz-class microcontroller: 1 µs and 1.9 nJ per MAC.
    fn default() -> Self {
        Self {
            t_mac_s: 1e-6,
            e_mac_j: 1.9e-9,
            t_mem_s: 0.1e-6,
            e_mem_j: 0.19e-9,
            t_nvm_byte_s: 0.05e-6,
            e_nvm_byte_j: 0.095e-9,
        }
    }
}

impl HwParams {
    /// Default costs scaled by 50, so that desk-sized models outlast one
    /// capacitor charge the way full-size models do on real hardware.
    pub fn desk() -> Self {
        Self::default().scaled(50.0)
    }

    pub fn scaled(self, f: f64) -> Self {
        Self {
            t_mac_s: self.t_mac_s * f,
            e_mac_j: self.e_mac_j * f,
            t_mem_s: self.t_mem_s * f,
            e_mem_j: self.e_mem_j * f,
            t_nvm_byte_s: self.t_nvm_byte_s * f,
            e_nvm_byte_j: self.e_nvm_byte_j * f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t_mac_s,
            self.e_mac_j,
            self.t_mem_s,
            self.e_mem_j,
            self.t_nvm_byte_s,
            self.e_nvm_byte_j,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("hardware costs must be positive: {self:?}")))
        }
    }

    fn cost(&self, macs: usize, elements: usize, nvm_bytes: usize) -> TaskCost {
        TaskCost {
            time_s: macs as f64 * self.t_mac_s + elements as f64 * self.t_mem_s + nvm_bytes as f64 * self.t_nvm_byte_s,
            energy_j: macs as f64 * self.e_mac_j + elements as f64 * self.e_mem_j + nvm_bytes as f64 * self.e_nvm_byte_j,
        }
    }
}

/// Time and energy of one atomic task on continuous power.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaskCost {
    pub time_s: f64,
    pub energy_j: f64,
}

impl TaskCost {
    pub fn power_w(&self) -> f64 {
        self.energy_j / self.time_s
    }
}

impl std::ops::Add for TaskCost {
    type Output = TaskCost;

    fn add(self, o: TaskCost) -> TaskCost {
        TaskCost {
            time_s: self.time_s + o.time_s,
            energy_j: self.energy_j + o.energy_j,
        }
    }
}

impl std::iter::Sum for TaskCost {
    fn sum<I: Iterator<Item = TaskCost>>(iter: I) -> TaskCost {
        iter.fold(TaskCost::default(), |a, b| a + b)
    }
}

/// Pre-recorded costs of every layer and exit branch.
#[derive(Clone, Debug, PartialEq)]
pub struct CostModel {
    pub hw: HwParams,
    /// Layer compute plus its output commit.
    pub layers: Vec<TaskCost>,
    /// Baseline layer of each exit point.
    pub exit_layers: Vec<usize>,
    /// Pooling and storing each exit's features, charged to its layer.
    pub pools: Vec<TaskCost>,
    /// Global exit classifier when exiting at exit `j + 1`, zero slots skipped.
    pub branches: Vec<TaskCost>,
}

impl CostModel {
    /// Cost of baseline layer `k`, including feature pooling at exit points.
    pub fn task(&self, k: usize) -> TaskCost {
        let mut c = self.layers[k];
        if let Some(j) = self.exit_layers.iter().position(|&l| l == k) {
            c = c + self.pools[j];
        }
        c
    }

    /// Cost of layers `from..to`.
    pub fn span(&self, from: usize, to: usize) -> TaskCost {
        (from..to).map(|k| self.task(k)).sum()
    }

    /// Whole baseline on continuous power.
    pub fn full(&self) -> TaskCost {
        self.span(0, self.layers.len())
    }
}

/// Costs from MAC and activation counts. Every layer reads its input,
/// writes its output and commits the output to nonvolatile memory.
pub fn profile_costs<T: Scalar>(model: &Model<T>, gnet: Option<&GNetModel<T>>, hw: &HwParams) -> Result<CostModel> {
    hw.validate()?;
    let inputs = model.layer_input_shapes();
    let outputs = model.layer_shapes()?;
    let layers = model
        .layers()
        .iter()
        .zip(inputs.iter().zip(&outputs))
        .map(|(l, (i, o))| {
            let (ni, no): (usize, usize) = (i.iter().product(), o.iter().product());
            hw.cost(l.kind().macs(i), ni + no, no * 4)
        })
        .collect();
    let (exit_layers, pools, branches) = match gnet {
        None => (Vec::new(), Vec::new(), Vec::new()),
        Some(g) => {
            let classes = g.classes();
            let pools = g
                .plan
                .exits
                .iter()
                .map(|e| {
                    let src: usize = e.source.iter().product();
                    hw.cost(0, src + e.len(), e.len() * 4)
                })
                .collect();
            let branches = (1..=g.plan.len())
                .map(|i| {
                    let valid = g.plan.valid_len(i);
                    hw.cost(valid * classes, valid + classes, classes * 4)
                })
                .collect();
            (g.plan.exit_points().layers().to_vec(), pools, branches)
        }
    };
    Ok(CostModel {
        hw: *hw,
        layers,
        exit_layers,
        pools,
        branches,
    })
}

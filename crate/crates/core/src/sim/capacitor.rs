use crate::error::{Error, Result};

/// Storage capacitor with turn-on, brown-out and ceiling voltages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapacitorState {
    pub capacitance_f: f64,
    pub voltage: f64,
    pub v_on: f64,
    pub v_off: f64,
    pub v_max: f64,
}

impl Default for CapacitorState {
    fn default() -> Self {
        Self {
            capacitance_f: 1e-3,
            voltage: 0.0,
            v_on: 3.0,
            v_off: 1.8,
            v_max: 5.25,
        }
    }
}

impl CapacitorState {
    pub fn validate(&self) -> Result<()> {
        let ok = self.capacitance_f > 0.0
            && self.v_off >= 0.0
            && self.v_off < self.v_on
            && self.v_on <= self.v_max
            && (0.0..=self.v_max).contains(&self.voltage);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "capacitor needs C > 0 and 0 <= V_off < V_on <= V_max with V in [0, V_max], got {self:?}"
            )))
        }
    }

    /// `½CV²` at voltage `v`.
    pub fn energy_at(&self, v: f64) -> f64 {
        0.5 * self.capacitance_f * v * v
    }

    pub fn energy(&self) -> f64 {
        self.energy_at(self.voltage)
    }

    pub fn voltage_for(&self, energy: f64) -> f64 {
        (2.0 * energy.max(0.0) / self.capacitance_f).sqrt()
    }

    /// Energy available between the turn-on and brown-out voltages.
    pub fn usable_per_cycle(&self) -> f64 {
        self.energy_at(self.v_on) - self.energy_at(self.v_off)
    }
}

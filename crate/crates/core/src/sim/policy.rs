use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyKind {
    /// Always run the full model.
    None,
    /// Finish within `deadline_s` of the first turn-on if possible, as deep
    /// as possible.
    Deadline { deadline_s: f64 },
    /// Exit as soon as observed harvested power drops below the threshold.
    EnergyThreshold { min_power_w: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitPolicy {
    pub kind: PolicyKind,
    /// Half-life of the exponential average of observed harvested power.
    pub half_life_s: f64,
}

impl ExitPolicy {
    pub fn none() -> Self {
        Self {
            kind: PolicyKind::None,
            half_life_s: 1.0,
        }
    }

    pub fn deadline(deadline_s: f64) -> Self {
        Self {
            kind: PolicyKind::Deadline { deadline_s },
            half_life_s: 1.0,
        }
    }

    pub fn energy_threshold(min_power_w: f64) -> Self {
        Self {
            kind: PolicyKind::EnergyThreshold { min_power_w },
            half_life_s: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_life_s > 0.0) {
            return Err(Error::InvalidArgument("power estimator half-life must be > 0".into()));
        }
        match self.kind {
            PolicyKind::Deadline { deadline_s } if !(deadline_s > 0.0) => {
                Err(Error::InvalidArgument(format!("deadline {deadline_s} s must be > 0")))
            }
            PolicyKind::EnergyThreshold { min_power_w } if !(min_power_w >= 0.0) => {
                Err(Error::InvalidArgument(format!("power threshold {min_power_w} W must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == PolicyKind::None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitTarget {
    /// 1-based exit point.
    Exit(usize),
    Full,
}

/// Remaining continuous-power work to finish at `target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitOption {
    pub target: ExitTarget,
    pub time_s: f64,
    pub energy_j: f64,
}

/// What the policy sees at a committed exit point.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgressState {
    /// Current 1-based exit point.
    pub exit: usize,
    /// Time since the first turn-on.
    pub elapsed_s: f64,
    /// Exponential average of harvested power after conversion losses.
    pub observed_power_w: f64,
    /// Stored energy above the brown-out level.
    pub usable_energy_j: f64,
    /// Options from shallowest (exit now) to deepest (full model).
    pub options: Vec<ExitOption>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    ExitNow(usize),
}

impl ProgressState {
    /// Wall time to finish `o`: active time, or longer when the stored
    /// energy falls short and the deficit has to be harvested first.
    pub fn estimate(&self, o: &ExitOption) -> f64 {
        if o.energy_j <= self.usable_energy_j {
            return o.time_s;
        }
        if self.observed_power_w <= 0.0 {
            return f64::INFINITY;
        }
        o.time_s.max((o.energy_j - self.usable_energy_j) / self.observed_power_w)
    }
}

pub fn choose_exit(policy: &ExitPolicy, state: &ProgressState) -> Decision {
    match policy.kind {
        PolicyKind::None => Decision::Continue,
        PolicyKind::EnergyThreshold { min_power_w } => {
            if state.observed_power_w < min_power_w {
                Decision::ExitNow(state.exit)
            } else {
                Decision::Continue
            }
        }
        PolicyKind::Deadline { deadline_s } => {
            let remaining = deadline_s - state.elapsed_s;
            let slack = 1e-9 * deadline_s.abs().max(1e-12);
            let deepest = state
                .options
                .iter()
                .rev()
                .find(|o| state.estimate(o) <= remaining + slack);
            match deepest.map(|o| o.target) {
                Some(ExitTarget::Exit(j)) if j == state.exit => Decision::ExitNow(j),
                Some(_) => Decision::Continue,
                None => Decision::ExitNow(state.exit),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(power: f64) -> ProgressState {
        ProgressState {
            exit: 1,
            elapsed_s: 0.0,
            observed_power_w: power,
            usable_energy_j: 1.0,
            options: vec![
                ExitOption {
                    target: ExitTarget::Exit(1),
                    time_s: 1.0,
                    energy_j: 0.5,
                },
                ExitOption {
                    target: ExitTarget::Exit(2),
                    time_s: 2.0,
                    energy_j: 2.0,
                },
                ExitOption {
                    target: ExitTarget::Full,
                    time_s: 3.0,
                    energy_j: 4.0,
                },
            ],
        }
    }

    #[test]
    fn deadline_picks_deepest_fit() {
        assert_eq!(choose_exit(&ExitPolicy::deadline(f64::INFINITY), &state(0.0)), Decision::Continue);
        // full needs max(3, 3/1) = 3 s
        assert_eq!(choose_exit(&ExitPolicy::deadline(3.0), &state(1.0)), Decision::Continue);
        // exit 2 needs max(2, 1/0.5) = 2 s, full needs 6 s
        assert_eq!(choose_exit(&ExitPolicy::deadline(2.5), &state(0.5)), Decision::Continue);
        assert_eq!(choose_exit(&ExitPolicy::deadline(1.5), &state(0.5)), Decision::ExitNow(1));
        assert_eq!(choose_exit(&ExitPolicy::deadline(0.1), &state(0.5)), Decision::ExitNow(1));
    }

    #[test]
    fn threshold_and_none() {
        assert_eq!(choose_exit(&ExitPolicy::energy_threshold(1e-3), &state(1e-4)), Decision::ExitNow(1));
        assert_eq!(choose_exit(&ExitPolicy::energy_threshold(1e-3), &state(1e-2)), Decision::Continue);
        assert_eq!(choose_exit(&ExitPolicy::none(), &state(0.0)), Decision::Continue);
        assert!(ExitPolicy::deadline(0.0).validate().is_err());
    }
}

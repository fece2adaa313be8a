use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Harvested input power over time.
///
/// Sampled traces interpolate linearly between samples and deliver nothing
/// before the first or after the last sample.
#[derive(Clone, Debug, PartialEq)]
pub enum EnergyTrace {
    Samples { times_s: Vec<f64>, power_w: Vec<f64> },
    Constant { power_w: f64 },
    /// Continuous supply: the capacitor never limits execution.
    Unlimited,
}

/// Linear piece `p(t + τ) = start + slope·τ` valid for `τ ∈ [0, len)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Segment {
    pub start: f64,
    pub slope: f64,
    pub len: f64,
}

impl EnergyTrace {
    /// Trace from `(time_s, power_mW)` samples.
    pub fn from_samples_mw(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("trace needs at least one sample".into()));
        }
        for (i, &(t, p)) in samples.iter().enumerate() {
            if !t.is_finite() || !p.is_finite() || p < 0.0 || t < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "trace sample {i} ({t}, {p}) must have finite time >= 0 and power >= 0"
                )));
            }
            if i > 0 && t <= samples[i - 1].0 {
                return Err(Error::InvalidArgument(format!("trace times must increase strictly at sample {i}")));
            }
        }
        Ok(EnergyTrace::Samples {
            times_s: samples.iter().map(|s| s.0).collect(),
            power_w: samples.iter().map(|s| s.1 * 1e-3).collect(),
        })
    }

    pub fn constant_mw(power_mw: f64) -> Result<Self> {
        if !(power_mw.is_finite() && power_mw >= 0.0) {
            return Err(Error::InvalidArgument(format!("constant power {power_mw} mW must be finite and >= 0")));
        }
        Ok(EnergyTrace::Constant {
            power_w: power_mw * 1e-3,
        })
    }

    pub fn unlimited() -> Self {
        EnergyTrace::Unlimited
    }

    /// Seeded random trace sampled every `step_s` over `duration_s`, with
    /// powers uniform in `[0, 2·mean_mw]`.
    pub fn stochastic(mean_mw: f64, duration_s: f64, step_s: f64, seed: u64) -> Result<Self> {
        if !(mean_mw >= 0.0 && duration_s > 0.0 && step_s > 0.0) {
            return Err(Error::InvalidArgument("stochastic trace needs mean >= 0, duration > 0, step > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (duration_s / step_s).ceil() as usize + 1;
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|i| (i as f64 * step_s, rng.random_range(0.0..=2.0 * mean_mw)))
            .collect();
        Self::from_samples_mw(&samples)
    }

    /// Parses `time_s,power_mW` rows; a non-numeric first row is a header.
    pub fn parse_csv(text: &str, source_name: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = match fields.as_slice() {
                [t, p] => t.parse::<f64>().ok().zip(p.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some(s) => samples.push(s),
                None if i == 0 => continue,
                None => {
                    return Err(Error::Format {
                        source_name: source_name.into(),
                        location: format!("line {}", i + 1),
                        message: format!("expected `time_s,power_mW`, found `{line}`"),
                    })
                }
            }
        }
        Self::from_samples_mw(&samples).map_err(|e| Error::Format {
            source_name: source_name.into(),
            location: "trace".into(),
            message: e.to_string(),
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    /// `time_s,power_mW` rendering with header; constant traces emit one row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s,power_mW\n");
        match self {
            EnergyTrace::Samples { times_s, power_w } => {
                for (t, p) in times_s.iter().zip(power_w) {
                    let _ = writeln!(s, "{t},{}", p * 1e3);
                }
            }
            EnergyTrace::Constant { power_w } => {
                let _ = writeln!(s, "0,{}", power_w * 1e3);
            }
            EnergyTrace::Unlimited => {}
        }
        s
    }

    pub fn is_unlimited(&self) -> bool {
        matches!(self, EnergyTrace::Unlimited)
    }

    pub fn power_at(&self, t: f64) -> f64 {
        match self {
            EnergyTrace::Unlimited => f64::INFINITY,
            _ => self.segment(t).start,
        }
    }

    /// Mean power over the samples' span, or the constant power.
    pub fn mean_power_w(&self) -> f64 {
        match self {
            EnergyTrace::Samples { times_s, .. } => {
                let (a, b) = (times_s[0], times_s[times_s.len() - 1]);
                if b > a {
                    self.energy_between(a, b) / (b - a)
                } else {
                    0.0
                }
            }
            EnergyTrace::Constant { power_w } => *power_w,
            EnergyTrace::Unlimited => f64::INFINITY,
        }
    }

    /// Harvested energy over `[a, b]` before conversion losses.
    pub fn energy_between(&self, a: f64, b: f64) -> f64 {
        let mut t = a;
        let mut total = 0.0;
        while t < b {
            let s = self.segment(t);
            let tau = s.len.min(b - t);
            total += s.start * tau + 0.5 * s.slope * tau * tau;
            t += tau;
        }
        total
    }

    pub(crate) fn segment(&self, t: f64) -> Segment {
        match self {
            EnergyTrace::Constant { power_w } => Segment {
                start: *power_w,
                slope: 0.0,
                len: f64::INFINITY,
            },
            EnergyTrace::Unlimited => Segment {
                start: f64::INFINITY,
                slope: 0.0,
                len: f64::INFINITY,
            },
            EnergyTrace::Samples { times_s, power_w } => {
                let n = times_s.len();
                if t < times_s[0] {
                    return Segment {
                        start: 0.0,
                        slope: 0.0,
                        len: times_s[0] - t,
                    };
                }
                if t >= times_s[n - 1] {
                    return Segment {
                        start: 0.0,
                        slope: 0.0,
                        len: f64::INFINITY,
                    };
                }
                let k = times_s.partition_point(|&x| x <= t) - 1;
                let (t0, t1) = (times_s[k], times_s[k + 1]);
                let slope = (power_w[k + 1] - power_w[k]) / (t1 - t0);
                Segment {
                    start: (power_w[k] + slope * (t - t0)).max(0.0),
                    slope,
                    len: t1 - t,
                }
            }
        }
    }
}

//! Event-driven simulation of inference under harvested power.
//!
//! A capacitor charges from an [`EnergyTrace`] until the turn-on voltage,
//! then runs one layer at a time. Each layer reads the committed buffer and
//! writes the other one, so a brown-out mid-layer loses only that layer's
//! progress. After every exit point the [`ExitPolicy`] may stop execution
//! early and answer with the global exit classifier.
//!
//! All physical quantities are SI `f64`: seconds, joules, watts, volts.

mod capacitor;
mod compare;
mod cost;
mod engine;
mod integrate;
mod policy;
mod trace;

pub use capacitor::CapacitorState;
pub use compare::{run_comparison, ComparisonRow, ComparisonTable};
pub use cost::{profile_costs, CostModel, HwParams, TaskCost};
pub use engine::{simulate, Event, EventKind, ExitTaken, FailureInjection, InjectionPoint, SimConfig, SimResult};
pub use policy::{choose_exit, Decision, ExitOption, ExitPolicy, ExitTarget, PolicyKind, ProgressState};
pub use trace::EnergyTrace;

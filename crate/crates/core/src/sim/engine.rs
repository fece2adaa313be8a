use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::capacitor::CapacitorState;
use super::cost::{CostModel, TaskCost};
use super::integrate::{evolve, Request, Stop};
use super::policy::{choose_exit, Decision, ExitOption, ExitPolicy, ExitTarget, ProgressState};
use super::trace::EnergyTrace;
use crate::error::{Error, Result};
use crate::gnet::{gnet_forward, pool_feature, ForwardMode, GNetModel, PaddedFeatureSet};
use crate::nn::{Model, Tensor};
use crate::scalar::Scalar;

/// Forced failure part-way through the `task`-th executed task (0-based,
/// counting layers then the exit branch in execution order).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InjectionPoint {
    pub task: usize,
    /// Fraction of the task completed when power is cut, in `(0, 1)`.
    pub fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FailureInjection {
    pub points: Vec<InjectionPoint>,
}

impl FailureInjection {
    pub fn none() -> Self {
        Self::default()
    }

    /// `count` seeded points spread over the first `tasks` tasks.
    pub fn random(count: usize, tasks: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..count)
            .map(|_| InjectionPoint {
                task: rng.random_range(0..tasks.max(1)),
                fraction: rng.random_range(0.01..0.99),
            })
            .collect();
        Self { points }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub capacitor: CapacitorState,
    /// Harvester conversion efficiency η.
    pub efficiency: f64,
    pub policy: ExitPolicy,
    pub failures: FailureInjection,
    /// Attempts per task before the run is declared livelocked.
    pub max_attempts: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            capacitor: CapacitorState::default(),
            efficiency: 0.7,
            policy: ExitPolicy::none(),
            failures: FailureInjection::none(),
            max_attempts: 10_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.capacitor.validate()?;
        self.policy.validate()?;
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::InvalidArgument(format!("efficiency {} outside (0, 1]", self.efficiency)));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidArgument("max attempts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitTaken {
    Full,
    /// 1-based exit point.
    Exit(usize),
    /// The run did not finish.
    Incomplete,
}

impl ExitTaken {
    pub fn label(&self) -> String {
        match self {
            ExitTaken::Full => "full".into(),
            ExitTaken::Exit(j) => format!("E{j}"),
            ExitTaken::Incomplete => "incomplete".into(),
        }
    }

    /// Depth rank: exits by index, the full model deepest.
    pub fn depth(&self, exits: usize) -> usize {
        match self {
            ExitTaken::Incomplete => 0,
            ExitTaken::Exit(j) => *j,
            ExitTaken::Full => exits + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    ChargeStart,
    TurnOn,
    /// Task committed; `layer` is `None` for the exit branch.
    Commit { task: usize, layer: Option<usize> },
    BrownOut { task: usize },
    InjectedFailure { task: usize },
    ExitDecision { exit: usize, decision: Decision },
    Finish { exit: ExitTaken },
    EnergyExhausted,
    Livelock { task: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time_s: f64,
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult<T = f32> {
    /// Wall time from the start of charging to the end of the run.
    pub completion_time_s: f64,
    pub active_time_s: f64,
    pub energy_consumed_j: f64,
    /// Raw harvested energy, before conversion efficiency.
    pub energy_harvested_j: f64,
    /// Converted energy discarded at the voltage ceiling.
    pub energy_spilled_j: f64,
    pub initial_energy_j: f64,
    pub final_energy_j: f64,
    pub efficiency: f64,
    pub brownouts: usize,
    pub injected_failures: usize,
    pub exit_taken: ExitTaken,
    pub layers_committed: usize,
    pub events: Vec<Event>,
    pub logits: Option<Tensor<T>>,
    pub energy_exhausted: bool,
    pub livelock: bool,
}

impl<T: Scalar> SimResult<T> {
    pub fn failures(&self) -> usize {
        self.brownouts + self.injected_failures
    }

    pub fn completed(&self) -> bool {
        self.exit_taken != ExitTaken::Incomplete
    }

    /// `η·harvested − consumed − spilled − ΔE`; zero up to integration error.
    pub fn ledger_imbalance(&self) -> f64 {
        self.efficiency * self.energy_harvested_j
            - self.energy_consumed_j
            - self.energy_spilled_j
            - (self.final_energy_j - self.initial_energy_j)
    }

    pub fn event_log(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            let _ = write!(s, "{:.9} ", e.time_s);
            let _ = match e.kind {
                EventKind::ChargeStart => writeln!(s, "charge-start"),
                EventKind::TurnOn => writeln!(s, "turn-on"),
                EventKind::Commit { task, layer: Some(l) } => writeln!(s, "commit task={task} layer={l}"),
                EventKind::Commit { task, layer: None } => writeln!(s, "commit task={task} branch"),
                EventKind::BrownOut { task } => writeln!(s, "brown-out task={task}"),
                EventKind::InjectedFailure { task } => writeln!(s, "injected-failure task={task}"),
                EventKind::ExitDecision { exit, decision } => match decision {
                    Decision::Continue => writeln!(s, "exit-decision exit={exit} continue"),
                    Decision::ExitNow(j) => writeln!(s, "exit-decision exit={exit} exit-now=E{j}"),
                },
                EventKind::Finish { exit } => writeln!(s, "finish exit={}", exit.label()),
                EventKind::EnergyExhausted => writeln!(s, "energy-exhausted"),
                EventKind::Livelock { task } => writeln!(s, "livelock task={task}"),
            };
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "completion_time_s={:.9}\nactive_time_s={:.9}\nenergy_consumed_j={:.9e}\nenergy_harvested_j={:.9e}\nenergy_spilled_j={:.9e}\nbrownouts={}\ninjected_failures={}\nexit={}\nlayers_committed={}\nenergy_exhausted={}\nlivelock={}\n",
            self.completion_time_s,
            self.active_time_s,
            self.energy_consumed_j,
            self.energy_harvested_j,
            self.energy_spilled_j,
            self.brownouts,
            self.injected_failures,
            self.exit_taken.label(),
            self.layers_committed,
            self.energy_exhausted,
            self.livelock
        )
    }
}

enum Attempt {
    Done,
    /// Power lost after this fraction of the task.
    Lost(f64),
    Injected(f64),
}

struct Machine<'a> {
    trace: &'a EnergyTrace,
    cfg: &'a SimConfig,
    unlimited: bool,
    t: f64,
    energy: f64,
    on: bool,
    first_on: Option<f64>,
    observed: Option<f64>,
    active: f64,
    consumed: f64,
    harvested: f64,
    spilled: f64,
    brownouts: usize,
    injected: usize,
    events: Vec<Event>,
    pending: Vec<Vec<f64>>,
}

impl Machine<'_> {
    fn log(&mut self, kind: EventKind) {
        self.events.push(Event { time_s: self.t, kind });
    }

    fn e_off(&self) -> f64 {
        self.cfg.capacitor.energy_at(self.cfg.capacitor.v_off)
    }

    fn ceiling(&self) -> f64 {
        self.cfg.capacitor.energy_at(self.cfg.capacitor.v_max)
    }

    fn observe(&mut self, dt: f64, raw: f64) {
        if dt <= 0.0 {
            return;
        }
        let mean = self.cfg.efficiency * raw / dt;
        self.observed = Some(match self.observed {
            None => mean,
            Some(p) => {
                let alpha = 1.0 - 0.5f64.powf(dt / self.cfg.policy.half_life_s);
                p + alpha * (mean - p)
            }
        });
    }

    fn observed_power(&self) -> f64 {
        if self.unlimited {
            f64::INFINITY
        } else {
            self.observed.unwrap_or(0.0)
        }
    }

    fn usable(&self) -> f64 {
        if self.unlimited {
            f64::INFINITY
        } else {
            (self.energy - self.e_off()).max(0.0)
        }
    }

    /// Charges to the turn-on level. `false` when that never happens.
    fn power_up(&mut self) -> bool {
        if self.on {
            return true;
        }
        self.log(EventKind::ChargeStart);
        if !self.unlimited {
            let cap = self.cfg.capacitor;
            let req = Request {
                efficiency: self.cfg.efficiency,
                draw: 0.0,
                ceiling: self.ceiling(),
                low: None,
                high: Some(cap.energy_at(cap.v_on)),
                duration: f64::INFINITY,
            };
            let start = self.t;
            let ev = evolve(self.trace, self.t, self.energy, &req);
            self.absorb(&ev);
            self.observe(self.t - start, ev.harvested);
            if ev.stop != Stop::High {
                return false;
            }
        }
        self.on = true;
        self.first_on.get_or_insert(self.t);
        self.log(EventKind::TurnOn);
        true
    }

    fn absorb(&mut self, ev: &super::integrate::Evolution) {
        self.t = ev.t;
        self.energy = ev.energy;
        self.harvested += ev.harvested;
        self.consumed += ev.consumed;
        self.spilled += ev.spilled;
    }

    /// Runs `cost` for at most `fraction` of its duration.
    fn run(&mut self, cost: TaskCost, fraction: f64) -> Attempt {
        let duration = cost.time_s * fraction;
        if self.unlimited {
            let e = cost.energy_j * fraction;
            self.t += duration;
            self.active += duration;
            self.consumed += e;
            self.harvested += e / self.cfg.efficiency;
            return if fraction < 1.0 { Attempt::Injected(fraction) } else { Attempt::Done };
        }
        let req = Request {
            efficiency: self.cfg.efficiency,
            draw: cost.power_w(),
            ceiling: self.ceiling(),
            low: Some(self.e_off()),
            high: None,
            duration,
        };
        let start = self.t;
        let ev = evolve(self.trace, self.t, self.energy, &req);
        self.absorb(&ev);
        let ran = self.t - start;
        self.active += ran;
        self.observe(ran, ev.harvested);
        match ev.stop {
            Stop::Low => Attempt::Lost(ran / cost.time_s),
            _ if fraction < 1.0 => Attempt::Injected(fraction),
            _ => Attempt::Done,
        }
    }
}

struct Buffers<T> {
    data: [Vec<T>; 2],
    shape: Vec<usize>,
    active: usize,
}

impl<T: Scalar> Buffers<T> {
    fn input(&self) -> Result<Tensor<T>> {
        Tensor::new(self.shape.clone(), self.data[self.active].clone())
    }

    /// Writes the first `fraction` of `out` into the inactive buffer.
    fn write_partial(&mut self, out: &Tensor<T>, fraction: f64) {
        let n = ((out.len() as f64) * fraction.clamp(0.0, 1.0)) as usize;
        let target = &mut self.data[1 - self.active];
        target.resize(out.len(), T::zero());
        target[..n].copy_from_slice(&out.data()[..n]);
    }

    fn commit(&mut self, out: Tensor<T>) {
        self.shape = out.shape().to_vec();
        self.data[1 - self.active] = out.into_data();
        self.active = 1 - self.active;
    }
}

/// Runs one inference of `model` on `input` under harvested power.
///
/// Layers are atomic tasks over a double buffer: a task reads the
/// committed buffer, writes the other, and commits by flipping. A lost task
/// restarts from the committed input, so the final output never depends on
/// where failures struck. When `gnet` is given, each exit-point layer also
/// pools and stores its features, and the policy is consulted after it.
pub fn simulate<T: Scalar>(
    model: &Model<T>,
    gnet: Option<&GNetModel<T>>,
    input: &Tensor<T>,
    trace: &EnergyTrace,
    costs: &CostModel,
    cfg: &SimConfig,
) -> Result<SimResult<T>> {
    cfg.validate()?;
    if costs.layers.len() != model.len() {
        return Err(Error::InvalidArgument(format!(
            "cost model covers {} layers, model has {}",
            costs.layers.len(),
            model.len()
        )));
    }
    if input.shape() != model.input_shape() {
        return Err(Error::shape("simulation input", model.input_shape(), input.shape()));
    }
    if let Some(g) = gnet {
        if costs.branches.len() != g.plan.len() || costs.exit_layers != g.plan.exit_points().layers() {
            return Err(Error::InvalidArgument("cost model was profiled for a different exit plan".into()));
        }
    }
    let mut pending = vec![Vec::new(); model.len() + 1];
    for p in &cfg.failures.points {
        if p.task < pending.len() && p.fraction > 0.0 && p.fraction < 1.0 {
            pending[p.task].push(p.fraction);
        }
    }
    for v in &mut pending {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    }
    let initial = cfg.capacitor.energy();
    let mut m = Machine {
        trace,
        cfg,
        unlimited: trace.is_unlimited(),
        t: 0.0,
        energy: initial,
        on: false,
        first_on: None,
        observed: None,
        active: 0.0,
        consumed: 0.0,
        harvested: 0.0,
        spilled: 0.0,
        brownouts: 0,
        injected: 0,
        events: Vec::new(),
        pending,
    };
    let mut buffers = Buffers {
        data: [input.data().to_vec(), Vec::new()],
        shape: input.shape().to_vec(),
        active: 0,
    };
    let exit_layers: Vec<usize> = gnet.map(|g| g.plan.exit_points().layers().to_vec()).unwrap_or_default();
    let mut features: Vec<Option<Tensor<T>>> = vec![None; exit_layers.len()];
    let consult = gnet.is_some() && !cfg.policy.is_none();
    let mut committed = 0usize;
    let mut logits = None;
    let mut exit_taken = ExitTaken::Incomplete;
    let mut exhausted = false;
    let mut livelock = false;

    // Runs one task to commit. `Ok(false)` stops the simulation.
    let mut execute = |m: &mut Machine, task: usize, cost: TaskCost, mut on_partial: Box<dyn FnMut(f64) + '_>| -> bool {
        let mut attempts = 0usize;
        loop {
            if !m.power_up() {
                m.log(EventKind::EnergyExhausted);
                exhausted = true;
                return false;
            }
            attempts += 1;
            if attempts > cfg.max_attempts {
                m.log(EventKind::Livelock { task });
                livelock = true;
                return false;
            }
            let fraction = m.pending[task].pop().unwrap_or(1.0);
            match m.run(cost, fraction) {
                Attempt::Done => return true,
                Attempt::Lost(done) => {
                    if fraction < 1.0 {
                        m.pending[task].push(fraction);
                    }
                    on_partial(done);
                    m.brownouts += 1;
                    m.on = false;
                    m.log(EventKind::BrownOut { task });
                }
                Attempt::Injected(done) => {
                    on_partial(done);
                    m.injected += 1;
                    m.log(EventKind::InjectedFailure { task });
                }
            }
        }
    };

    let mut stopped = false;
    for k in 0..model.len() {
        let out = model.forward_layer(k, &buffers.input()?)?;
        let ok = {
            let out_ref = &out;
            let bufs = &mut buffers;
            execute(&mut m, k, costs.task(k), Box::new(move |f| bufs.write_partial(out_ref, f)))
        };
        if !ok {
            stopped = true;
            break;
        }
        // The output is recomputed from the committed input to make
        // re-execution explicit; it matches the first computation.
        let out = model.forward_layer(k, &buffers.input()?)?;
        buffers.commit(out);
        committed += 1;
        m.log(EventKind::Commit { task: k, layer: Some(k) });
        let Some(j) = exit_layers.iter().position(|&l| l == k) else { continue };
        let g = gnet.expect("exit layers imply a global exit");
        features[j] = Some(pool_feature(&buffers.input()?, &g.plan.exits[j])?);
        if !consult {
            continue;
        }
        let mut options = vec![ExitOption {
            target: ExitTarget::Exit(j + 1),
            time_s: costs.branches[j].time_s,
            energy_j: costs.branches[j].energy_j,
        }];
        for jj in j + 1..exit_layers.len() {
            let c = costs.span(k + 1, exit_layers[jj] + 1) + costs.branches[jj];
            options.push(ExitOption {
                target: ExitTarget::Exit(jj + 1),
                time_s: c.time_s,
                energy_j: c.energy_j,
            });
        }
        let c = costs.span(k + 1, model.len());
        options.push(ExitOption {
            target: ExitTarget::Full,
            time_s: c.time_s,
            energy_j: c.energy_j,
        });
        let state = ProgressState {
            exit: j + 1,
            elapsed_s: m.t - m.first_on.unwrap_or(m.t),
            observed_power_w: m.observed_power(),
            usable_energy_j: m.usable(),
            options,
        };
        let decision = choose_exit(&cfg.policy, &state);
        m.log(EventKind::ExitDecision { exit: j + 1, decision });
        if let Decision::ExitNow(e) = decision {
            let fs = PaddedFeatureSet {
                slots: features
                    .iter()
                    .zip(&g.plan.exits)
                    .map(|(f, p)| f.clone().unwrap_or_else(|| Tensor::zeros(&p.pooled)))
                    .collect(),
                valid: e,
            };
            let out = gnet_forward(g, &fs, ForwardMode::Compressed)?;
            if !execute(&mut m, k + 1, costs.branches[e - 1], Box::new(|_| {})) {
                stopped = true;
                break;
            }
            m.log(EventKind::Commit { task: k + 1, layer: None });
            logits = Some(out.logits);
            exit_taken = ExitTaken::Exit(e);
            m.log(EventKind::Finish { exit: exit_taken });
            break;
        }
    }
    if !stopped && exit_taken == ExitTaken::Incomplete {
        let out = buffers.input()?;
        let n = out.len();
        logits = Some(out.reshape(&[n])?);
        exit_taken = ExitTaken::Full;
        m.log(EventKind::Finish { exit: exit_taken });
    }
    Ok(SimResult {
        completion_time_s: m.t,
        active_time_s: m.active,
        energy_consumed_j: m.consumed,
        energy_harvested_j: m.harvested,
        energy_spilled_j: m.spilled,
        initial_energy_j: initial,
        final_energy_j: m.energy,
        efficiency: cfg.efficiency,
        brownouts: m.brownouts,
        injected_failures: m.injected,
        exit_taken,
        layers_committed: committed,
        events: m.events,
        logits,
        energy_exhausted: exhausted,
        livelock,
    })
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use kbnet_core::gnet::{
    evaluate_exits, exit_param_comparison, plan_pooling, train_gnet, ExitPointSet, GNetModel, GNetTrainConfig,
};
use kbnet_core::nn::{evaluate, train, Model, OptimizerKind, Tensor, TrainConfig};
use kbnet_core::sim::{
    profile_costs, run_comparison, simulate, CapacitorState, EnergyTrace, ExitPolicy, FailureInjection, HwParams,
    SimConfig, SimResult,
};
use kbnet_core::sparse_format::{emit_c_headers, load_bundle, save_bundle, size_bytes, StorageMode};
use kbnet_core::sparsecomp::{auto_compress, separate_for_budget, CompressionPlan};

use crate::arch::build_model;
use crate::config::Config;
use crate::data;
use crate::fail::{input, io, runtime, Result};
use crate::run::{sha256_file, RunDir, CONFIG, MANIFEST};

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run directory holding every artifact.
    #[arg(long, env = "KBNET_OUT", default_value = "kbnet-run")]
    pub run: PathBuf,
    /// Pipeline config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    /// Run config, then `--config`, then `--seed`.
    fn config(&self) -> Result<Config> {
        let mut cfg = Config::default();
        let stored = self.run.join(CONFIG);
        if stored.is_file() {
            cfg.merge(&Config::load(&stored)?);
        }
        if let Some(p) = &self.config {
            cfg.merge(&Config::load(p)?);
        }
        cfg.set_opt("seed", self.seed);
        Ok(cfg)
    }
}

fn optimizer(name: &str) -> Result<OptimizerKind> {
    match name {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::adam()),
        other => Err(input(format!("unknown optimizer `{other}` (sgd, adam)"))),
    }
}

fn train_config(cfg: &Config, section: &str, defaults: TrainConfig) -> Result<TrainConfig> {
    let key = |k: &str| format!("{section}.{k}");
    let opt = match cfg.raw(&key("optimizer")) {
        Some(o) => optimizer(o)?,
        None => defaults.optimizer,
    };
    let t = TrainConfig {
        epochs: cfg.get_or(&key("epochs"), defaults.epochs)?,
        batch_size: cfg.get_or(&key("batch_size"), defaults.batch_size)?,
        learning_rate: cfg.get_or(&key("lr"), defaults.learning_rate)?,
        optimizer: opt,
        weight_decay: cfg.get_or(&key("weight_decay"), defaults.weight_decay)?,
        seed: cfg.get_or("seed", defaults.seed)?,
    };
    t.validate()?;
    Ok(t)
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// blobs, spirals, stripes, idx or csv.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Layer list such as `F:2x64,R,F:64x4`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<String>,
}

pub fn train_cmd(a: &TrainArgs) -> Result<String> {
    let mut cfg = a.common.config()?;
    cfg.set_opt("data.kind", a.dataset.as_ref());
    cfg.set_opt("data.samples", a.samples);
    cfg.set_opt("model.arch", a.arch.as_ref());
    cfg.set_opt("train.epochs", a.epochs);
    cfg.set_opt("train.lr", a.lr);
    cfg.set_opt("train.batch_size", a.batch_size);
    cfg.set_opt("train.optimizer", a.optimizer.as_ref());
    let splits = data::load(&cfg)?;
    let sample = splits.train.sample_shape().ok_or_else(|| input("training split is empty"))?.to_vec();
    let classes = splits.train.num_classes();
    let arch = match cfg.raw("model.arch") {
        Some(s) => s.to_string(),
        None => data::default_arch(&sample, classes)
            .ok_or_else(|| input(format!("no default architecture for inputs {sample:?}; set model.arch")))?,
    };
    cfg.set("model.arch", &arch);
    let tcfg = train_config(
        &cfg,
        "train",
        TrainConfig {
            epochs: 40,
            batch_size: 16,
            learning_rate: 5e-3,
            optimizer: OptimizerKind::adam(),
            weight_decay: 0.0,
            seed: 0,
        },
    )?;
    let seed = cfg.get_or("seed", 0u64)?;
    let model = build_model(&arch, &sample, seed)?;
    let (model, hist) = train(model, &splits.train, Some(&splits.validation), &tcfg)?;

    let run = RunDir::create(&a.common.run)?;
    let conf = run.write(CONFIG, &cfg.render())?;
    let bundle = run.clean_dir("model")?;
    save_bundle(&model, None, &bundle)?;
    let mut s = String::new();
    let _ = writeln!(s, "architecture={arch}");
    let _ = writeln!(s, "params={}", model.param_count());
    let _ = writeln!(s, "dense_bytes={}", size_bytes(&model, StorageMode::Dense));
    let _ = writeln!(s, "csr_bytes={}", size_bytes(&model, StorageMode::Csr));
    let _ = writeln!(s, "epochs={}", hist.train_loss.len());
    if let Some(l) = hist.train_loss.last() {
        let _ = writeln!(s, "final_train_loss={l:.6}");
    }
    if let Some(l) = hist.validation_loss.last() {
        let _ = writeln!(s, "final_validation_loss={l:.6}");
    }
    let _ = writeln!(s, "train_accuracy={:.6}", evaluate(&model, &splits.train)?);
    let _ = writeln!(s, "validation_accuracy={:.6}", evaluate(&model, &splits.validation)?);
    let _ = writeln!(s, "test_accuracy={:.6}", evaluate(&model, &splits.test)?);
    let metrics = run.write("train.txt", &s)?;
    let mut inputs = splits.files.clone();
    inputs.insert(0, conf.clone());
    run.record("train", &inputs, &[bundle, metrics])?;
    Ok(s)
}

fn bundle_input(run: &RunDir, explicit: Option<&PathBuf>, default: Option<&str>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    match default {
        Some(d) if run.path(d).join("manifest").is_file() => Ok(run.path(d)),
        Some(d) => Err(input(format!("no bundle at {}; run the earlier stage first", run.path(d).display()))),
        None => run.latest_bundle(),
    }
}

fn bundle_files(p: &Path) -> Vec<PathBuf> {
    vec![p.join("manifest"), p.join("weights.bin")]
}

#[derive(Args, Debug, Clone)]
pub struct CompressArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input bundle; defaults to the run's trained model.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// CSR-accounted size to reach.
    #[arg(long)]
    pub target_bytes: Option<usize>,
    /// Fraction of the training data used for retraining, in (0, 1].
    #[arg(long)]
    pub data_fraction: Option<f64>,
    /// Working-buffer budget in elements; separates layers first.
    #[arg(long)]
    pub budget_elements: Option<usize>,
    #[arg(long)]
    pub max_drop: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

pub fn compress_cmd(a: &CompressArgs) -> Result<String> {
    let mut cfg = a.common.config()?;
    cfg.set_opt("compress.target_bytes", a.target_bytes);
    cfg.set_opt("compress.data_fraction", a.data_fraction);
    cfg.set_opt("compress.budget_elements", a.budget_elements);
    cfg.set_opt("compress.max_drop", a.max_drop);
    cfg.set_opt("compress.epochs", a.epochs);
    let fraction: f64 = cfg.get_or("compress.data_fraction", 1.0)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(input(format!("--data-fraction {fraction} outside (0, 1]")));
    }
    let target: usize = cfg
        .get("compress.target_bytes")?
        .ok_or_else(|| input("compress needs --target-bytes (or compress.target_bytes)"))?;
    let run = RunDir::open(&a.common.run)?;
    let src = bundle_input(&run, a.bundle.as_ref(), Some("model"))?;
    let (mut model, _) = load_bundle(&src)?;
    let splits = data::load(&cfg)?;

    let mut s = String::new();
    if let Some(budget) = cfg.get::<usize>("compress.budget_elements")? {
        let out = separate_for_budget(model, budget, cfg.get_or("compress.tau", 0.9)?)?;
        let _ = writeln!(s, "separation_budget={budget}");
        let _ = writeln!(s, "separation_working_buffer={}", out.working_buffer);
        let _ = writeln!(s, "separation_budget_met={}", out.budget_met);
        let _ = writeln!(s, "separation_steps={}", out.steps.len());
        model = out.model;
    }
    let mut plan = CompressionPlan::new(target);
    plan.data_fraction = fraction;
    plan.max_accuracy_drop = cfg.get_or("compress.max_drop", plan.max_accuracy_drop)?;
    plan.seed = cfg.get_or("seed", 0)?;
    plan.retrain = train_config(&cfg, "compress", TrainConfig { epochs: 5, ..TrainConfig::default() })?;
    plan.validate()?;
    let (out, rep) = auto_compress(model, &plan, &splits.train, Some(&splits.validation))?;
    s.push_str(&rep.to_text());
    let _ = writeln!(s, "compression_rate={:.4}", rep.size_ratio());
    let _ = writeln!(s, "test_accuracy={:.6}", evaluate(&out, &splits.test)?);
    let dst = run.clean_dir("compressed")?;
    save_bundle(&out, None, &dst)?;
    let report = run.write("compress.txt", &s)?;
    run.record("compress", &bundle_files(&src), &[dst, report])?;
    Ok(s)
}

#[derive(Args, Debug, Clone)]
pub struct GnetArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input bundle; defaults to the compressed model, else the trained one.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Comma-separated baseline layer indices; defaults to every convolution.
    #[arg(long, value_delimiter = ',')]
    pub exits: Option<Vec<usize>>,
    /// Total pooled feature elements.
    #[arg(long)]
    pub feature_budget: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

pub fn gnet_cmd(a: &GnetArgs) -> Result<String> {
    let mut cfg = a.common.config()?;
    if let Some(e) = &a.exits {
        cfg.set("gnet.exits", e.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    }
    cfg.set_opt("gnet.feature_budget", a.feature_budget);
    cfg.set_opt("gnet.epochs", a.epochs);
    cfg.set_opt("gnet.patience", a.patience);
    let run = RunDir::open(&a.common.run)?;
    let src = match &a.bundle {
        Some(p) => p.clone(),
        None if run.path("compressed").join("manifest").is_file() => run.path("compressed"),
        None => bundle_input(&run, None, Some("model"))?,
    };
    let (model, _) = load_bundle(&src)?;
    let splits = data::load(&cfg)?;
    let exits = match cfg.raw("gnet.exits") {
        Some(list) => {
            let layers = list
                .split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|_| input(format!("bad exit layer `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            ExitPointSet::new(layers)?
        }
        None => ExitPointSet::after_convolutions(&model)?,
    };
    let budget: usize = cfg.get_or("gnet.feature_budget", 64)?;
    let plan = plan_pooling(&model, &exits, budget)?;
    let classes = model.num_classes();
    let seed: u64 = cfg.get_or("seed", 0)?;
    let g = GNetModel::new(plan, classes, seed)?;
    let defaults = GNetTrainConfig::default();
    let gcfg = GNetTrainConfig {
        train: train_config(&cfg, "gnet", defaults.train.clone())?,
        patience: cfg.get_or("gnet.patience", defaults.patience)?,
    };
    let (g, hist) = train_gnet(&model, g, &splits.train, Some(&splits.validation), &gcfg)?;
    let eval = evaluate_exits(&model, &g, &splits.test)?;
    let cmp = exit_param_comparison(&g.plan, classes);

    let mut s = String::from("exit\tlayer\tfeatures\taccuracy\tmacs\tbranch_params\n");
    for (e, p) in eval.exits.iter().zip(&g.plan.exits) {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.6}\t{}\t{}",
            e.exit,
            e.layer,
            p.len(),
            e.accuracy,
            e.macs,
            p.len() * classes + classes
        );
    }
    let _ = writeln!(s, "baseline\t-\t-\t{:.6}\t-\t-", eval.baseline_accuracy);
    let _ = writeln!(s, "# gnet_params={}", cmp.gnet_params);
    let _ = writeln!(s, "# per_branch_params={}", cmp.per_branch_params);
    let _ = writeln!(s, "# ratio={:.6}", cmp.ratio);
    let _ = writeln!(s, "# epochs={} best_epoch={}", hist.train_loss.len(), hist.best_epoch.map_or("-".into(), |e| e.to_string()));
    let dst = run.clean_dir("gnet")?;
    save_bundle(&model, Some(&g), &dst)?;
    let table = run.write("gnet.tsv", &s)?;
    run.record("gnet-train", &bundle_files(&src), &[dst, table])?;
    Ok(s)
}

#[derive(Args, Debug, Clone)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value = "csr-headers")]
    pub format: String,
}

pub fn export_cmd(a: &ExportArgs) -> Result<String> {
    if a.format != "csr-headers" {
        return Err(input(format!("unknown export format `{}` (csr-headers)", a.format)));
    }
    let run = RunDir::open(&a.common.run)?;
    let src = bundle_input(&run, a.bundle.as_ref(), None)?;
    let (model, _) = load_bundle(&src)?;
    let dst = run.clean_dir("headers")?;
    let files = emit_c_headers(&model, &dst)?;
    run.record("export", &bundle_files(&src), &[dst])?;
    let mut s = String::new();
    for f in files {
        let _ = writeln!(s, "{}", f.strip_prefix(&run.root).unwrap_or(&f).display());
    }
    Ok(s)
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// CSV trace of `time_s,power_mW`.
    #[arg(long, conflicts_with = "const_mw")]
    pub trace: Option<PathBuf>,
    /// Constant harvested power in mW.
    #[arg(long)]
    pub const_mw: Option<f64>,
    /// none, deadline or energy.
    #[arg(long)]
    pub policy: Option<String>,
    /// Deadline in seconds; defaults to the continuous execution time.
    #[arg(long)]
    pub deadline: Option<f64>,
    /// Power threshold for the energy policy, in mW.
    #[arg(long)]
    pub min_power_mw: Option<f64>,
    /// Constant-power sweep `FROM:TO:COUNT` in mW.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Number of seeded failure injections.
    #[arg(long)]
    pub failures: Option<usize>,
    /// Test-split sample to run.
    #[arg(long)]
    pub sample: Option<usize>,
}

struct SimSetup {
    model: Model<f32>,
    gnet: Option<GNetModel<f32>>,
    costs: kbnet_core::sim::CostModel,
    input: Tensor<f32>,
    cfg: SimConfig,
}

impl SimSetup {
    fn run(&self, trace: &EnergyTrace, cfg: &SimConfig) -> Result<SimResult<f32>> {
        Ok(simulate(&self.model, self.gnet.as_ref(), &self.input, trace, &self.costs, cfg)?)
    }
}

fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || input(format!("--sweep expects FROM:TO:COUNT, found `{s}`"));
    let [a, b, n] = parts.as_slice() else { return Err(bad()) };
    let (a, b): (f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    let n: usize = n.parse().map_err(|_| bad())?;
    if n == 0 || !(a >= 0.0) || !(b >= a) {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
}

pub fn simulate_cmd(a: &SimulateArgs) -> Result<String> {
    let mut cfg = a.common.config()?;
    cfg.set_opt("sim.trace", a.trace.as_ref().map(|p| p.display()));
    cfg.set_opt("sim.const_mw", a.const_mw);
    cfg.set_opt("sim.policy", a.policy.as_ref());
    cfg.set_opt("sim.deadline_s", a.deadline);
    cfg.set_opt("sim.min_power_mw", a.min_power_mw);
    cfg.set_opt("sim.failures", a.failures);
    cfg.set_opt("sim.sample", a.sample);
    let sweep = a.sweep.as_deref().map(parse_sweep).transpose()?;
    let trace = match (cfg.raw("sim.trace"), cfg.get::<f64>("sim.const_mw")?) {
        (Some(p), _) if a.const_mw.is_none() => {
            let p = Path::new(p);
            if !p.is_file() {
                return Err(input(format!("trace file {} not found", p.display())));
            }
            Some((EnergyTrace::load_csv(p)?, Some(p.to_path_buf())))
        }
        (_, Some(mw)) => Some((EnergyTrace::constant_mw(mw)?, None)),
        _ => None,
    };
    if trace.is_none() && sweep.is_none() {
        return Err(input("simulate needs --trace, --const-mw or --sweep"));
    }
    let run = RunDir::open(&a.common.run)?;
    let src = bundle_input(&run, a.bundle.as_ref(), None)?;
    let (model, gnet) = load_bundle(&src)?;
    let splits = data::load(&cfg)?;
    let idx: usize = cfg.get_or("sim.sample", 0)?;
    let input_x = splits
        .test
        .inputs()
        .get(idx)
        .cloned()
        .ok_or_else(|| input(format!("test split has {} samples, no sample {idx}", splits.test.len())))?;
    let hw = HwParams::default().scaled(cfg.get_or("sim.hw_scale", 50.0)?);
    let costs = profile_costs(&model, gnet.as_ref(), &hw)?;
    let capacitor = CapacitorState {
        capacitance_f: cfg.get_or("sim.capacitance_f", 1e-3)?,
        ..CapacitorState::default()
    };
    let seed: u64 = cfg.get_or("seed", 0)?;
    let base = SimConfig {
        capacitor,
        efficiency: cfg.get_or("sim.efficiency", 0.7)?,
        failures: match cfg.get::<usize>("sim.failures")? {
            Some(n) if n > 0 => FailureInjection::random(n, model.len(), seed),
            _ => FailureInjection::none(),
        },
        ..SimConfig::default()
    };
    let setup = SimSetup {
        model,
        gnet,
        costs,
        input: input_x,
        cfg: base,
    };
    let cont = setup.run(&EnergyTrace::unlimited(), &SimConfig { policy: ExitPolicy::none(), ..setup.cfg.clone() })?;
    let default_policy = if setup.gnet.is_some() { "deadline" } else { "none" };
    let policy = match cfg.raw("sim.policy").unwrap_or(default_policy) {
        "none" => ExitPolicy::none(),
        "deadline" => ExitPolicy::deadline(cfg.get_or("sim.deadline_s", cont.completion_time_s)?),
        "energy" => ExitPolicy::energy_threshold(cfg.get_or("sim.min_power_mw", 1.0)? * 1e-3),
        other => return Err(input(format!("unknown policy `{other}` (none, deadline, energy)"))),
    };
    if !policy.is_none() && setup.gnet.is_none() {
        return Err(input("exit policies need a bundle with a gNet; run `gnet-train` first"));
    }
    let sim_cfg = SimConfig { policy, ..setup.cfg.clone() };
    sim_cfg.validate()?;

    let mut inputs = bundle_files(&src);
    let mut outputs = Vec::new();
    run.clean_dir("sim")?;
    let mut s = String::new();
    if let Some((trace, path)) = &trace {
        let r = setup.run(trace, &sim_cfg)?;
        outputs.push(run.write("sim/summary.txt", &r.summary())?);
        outputs.push(run.write("sim/events.log", &r.event_log())?);
        let (table, _) = run_comparison(
            &setup.model,
            setup.gnet.as_ref(),
            &setup.input,
            trace,
            &setup.costs,
            &sim_cfg,
        )?;
        outputs.push(run.write("sim/comparison.tsv", &table.to_tsv())?);
        s.push_str(&r.summary());
        s.push('\n');
        s.push_str(&table.to_tsv());
        inputs.extend(path.clone());
    }
    if let Some(powers) = sweep {
        let n = setup.gnet.as_ref().map_or(0, |g| g.plan.len());
        // Independent runs; results are merged by index.
        let results: Vec<Result<SimResult<f32>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = powers
                .iter()
                .map(|&p| {
                    let (setup, sim_cfg) = (&setup, &sim_cfg);
                    scope.spawn(move || setup.run(&EnergyTrace::constant_mw(p)?, sim_cfg))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(runtime("simulation thread panicked"))))
                .collect()
        });
        let mut table = String::from("power_mW\texit\tdepth\ttime_s\tenergy_mJ\tfailures\tcompleted\n");
        for (i, (p, r)) in powers.iter().zip(results).enumerate() {
            let r = r?;
            let _ = writeln!(
                table,
                "{p:.6}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}",
                r.exit_taken.label(),
                r.exit_taken.depth(n),
                r.completion_time_s,
                r.energy_consumed_j * 1e3,
                r.failures(),
                r.completed()
            );
            outputs.push(run.write(&format!("sim/sweep/{i:03}.txt"), &r.summary())?);
        }
        outputs.push(run.write("sim/sweep.tsv", &table)?);
        s.push_str(&table);
    }
    run.record("simulate", &inputs, &outputs)?;
    Ok(s)
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    #[arg(long, env = "KBNET_OUT", default_value = "kbnet-run")]
    pub run: PathBuf,
}

/// Summary of the run plus a provenance check. Fails with an input error
/// when recorded hashes no longer match.
pub fn report_cmd(a: &ReportArgs) -> Result<String> {
    let run = RunDir::open(&a.run)?;
    let entries = run.entries()?;
    if entries.is_empty() {
        return Err(input(format!("{} records no stages", run.path(MANIFEST).display())));
    }
    let mut s = String::from("kbnet run report\n");
    let mut stages: Vec<&str> = Vec::new();
    for e in &entries {
        if !stages.contains(&e.stage.as_str()) {
            stages.push(&e.stage);
        }
    }
    let _ = writeln!(s, "stages={}", stages.join(","));
    let read = |rel: &str| std::fs::read_to_string(run.path(rel)).ok();
    if let Some(t) = read("train.txt") {
        s.push_str("\n[train]\n");
        s.push_str(&t);
    }
    if let Some(t) = read("compress.txt") {
        s.push_str("\n[compress]\n");
        for line in t.lines().filter(|l| !l.starts_with("iteration.")) {
            let _ = writeln!(s, "{line}");
        }
    }
    if let Some(t) = read("gnet.tsv") {
        s.push_str("\n[gnet]\n");
        s.push_str(&t);
    }
    if run.path("headers").is_dir() {
        s.push_str("\n[export]\n");
        for e in entries.iter().filter(|e| e.stage == "export" && e.role == "output") {
            let _ = writeln!(s, "{}", e.path);
        }
    }
    for (title, rel) in [("simulate", "sim/summary.txt"), ("comparison", "sim/comparison.tsv"), ("sweep", "sim/sweep.tsv")] {
        if let Some(t) = read(rel) {
            let _ = write!(s, "\n[{title}]\n{t}");
        }
    }
    s.push_str("\n[provenance]\n");
    let mut bad = 0;
    for e in &entries {
        let p = run.resolve(&e.path);
        let status = if !p.is_file() {
            "missing"
        } else if sha256_file(&p)? == e.hash {
            "ok"
        } else {
            "modified"
        };
        if status != "ok" {
            bad += 1;
        }
        let _ = writeln!(s, "{} {} {} {status}", e.stage, e.role, e.path);
    }
    let _ = writeln!(s, "provenance={}", if bad == 0 { "verified" } else { "broken" });
    let out = run.path("report.txt");
    std::fs::write(&out, &s).map_err(|e| io(&out, e))?;
    if bad > 0 {
        print!("{s}");
        return Err(input(format!("{bad} recorded artifacts are missing or modified")));
    }
    Ok(s)
}

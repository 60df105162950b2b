use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use advbound::attack::{evaluate_attack, AttackConfig};
use advbound::bound::{
    estimate_bound_from_distances, invert_bound_from_distances, sweep_spheres_from_distances, BoundConfig,
};
use advbound::classifier::{train_toy_classifier, ToyClassifier, TrainConfig, ATTACK_TEMPERATURE};
use advbound::dataset::{load_dataset, load_distances, DatasetFormat, DatasetSource, Normalize};
use advbound::{DistanceMatrix, MetricKind, MetricSpace, ReportDocument};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tracing_subscriber::EnvFilter;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "advbound", version, about = "Adversarial error lower bounds and attack evaluation")]
struct Cli {
    /// Worker threads; numeric output does not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the lower bound on adversarial risk at a given clean error rate.
    Bound(BoundCmd),
    /// Train or load the toy classifier and measure clean and adversarial error.
    Attack(AttackCmd),
    /// Train/test expansion fractions for several sphere counts.
    SweepT(SweepCmd),
    /// Largest attack strength keeping the bound within a risk budget.
    Invert(InvertCmd),
    /// Compute the pairwise distance matrix and write it as a binary cache.
    Distances(DistancesCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Idx,
    BinaryCache,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizeArg {
    None,
    UnitL2,
    #[value(name = "scale-1-over-255")]
    Scale1Over255,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    L2,
    TraceAmplitude,
    TraceAngle,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::L2 => MetricKind::L2,
            MetricArg::TraceAmplitude => MetricKind::TraceAmplitude,
            MetricArg::TraceAngle => MetricKind::TraceAngle,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    PgdL2,
    TdPgd,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// IDX label file for --format idx.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Zero-based CSV column holding class labels.
    #[arg(long)]
    label_column: Option<usize>,
    #[arg(long, value_enum, default_value = "none")]
    normalize: NormalizeArg,
    /// Keep only these labels (comma separated), relabelled 0, 1, ...
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u32>>,
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    subsample_seed: u64,
}

impl DataArgs {
    fn source(&self) -> DatasetSource {
        DatasetSource {
            path: self.input.clone(),
            format: match self.format {
                FormatArg::Csv => DatasetFormat::Csv,
                FormatArg::Idx => DatasetFormat::Idx,
                FormatArg::BinaryCache => DatasetFormat::BinaryCache,
            },
            labels_path: self.labels.clone(),
            label_column: self.label_column,
            normalize: match self.normalize {
                NormalizeArg::None => Normalize::None,
                NormalizeArg::UnitL2 => Normalize::UnitL2,
                NormalizeArg::Scale1Over255 => Normalize::Scale1Over255,
            },
            classes: self.classes.clone(),
            subsample: self.subsample,
            subsample_seed: self.subsample_seed,
        }
    }
}

#[derive(Args)]
struct EstimatorArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Defaults to the cache's metric for binary caches and to l2 otherwise.
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Clean error rate of the reference model.
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = advbound::bound::DEFAULT_SPHERES)]
    spheres: usize,
    #[arg(long, default_value_t = advbound::bound::DEFAULT_ITERATIONS)]
    iterations: usize,
    /// Training risk range LO:HI; defaults to alpha:1.1*alpha.
    #[arg(long)]
    alpha_range: Option<String>,
    #[arg(long, default_value_t = advbound::bound::DEFAULT_SPLIT)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BoundCmd {
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long)]
    epsilon: f64,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    t_values: Vec<usize>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct InvertCmd {
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long)]
    risk_budget: f64,
    #[arg(long)]
    eps_hi: f64,
    #[arg(long, default_value_t = 0.01)]
    tol: f64,
}

#[derive(Args)]
struct AttackCmd {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    attack: AttackArg,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = advbound::attack::DEFAULT_STEPS)]
    steps: usize,
    /// Defaults to 2.5·ε/steps for pgd-l2 and 2·asin(ε)/steps for td-pgd.
    #[arg(long)]
    step_size: Option<f64>,
    /// Softmax temperature used while attacking.
    #[arg(long, default_value_t = ATTACK_TEMPERATURE)]
    temperature: f64,
    /// Leave negative amplitudes in td-pgd iterates.
    #[arg(long)]
    no_clamp: bool,
    /// Train the classifier on the input data.
    #[arg(long, conflicts_with = "model_in")]
    train: bool,
    #[arg(long)]
    model_in: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    train_temperature: f64,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DistancesCmd {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "l2")]
    metric: MetricArg,
    #[arg(long)]
    output: PathBuf,
}

struct Timer {
    start: Instant,
    laps: std::collections::BTreeMap<String, f64>,
}

impl Timer {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            laps: Default::default(),
        }
    }

    fn lap(&mut self, name: &str) {
        let total: f64 = self.laps.values().sum();
        self.laps
            .insert(name.to_string(), self.start.elapsed().as_secs_f64() - total);
    }
}

fn distances_for(data: &DataArgs, metric: Option<MetricArg>) -> anyhow::Result<(DistanceMatrix, DatasetSource)> {
    let source = data.source();
    let dist = if source.format == DatasetFormat::BinaryCache {
        let dist = load_distances(&source)?;
        if let Some(m) = metric {
            if MetricKind::from(m) != dist.metric() {
                bail!(advbound::Error::MetricMismatch {
                    region: dist.metric().to_string(),
                    request: MetricKind::from(m).to_string(),
                });
            }
        }
        dist
    } else {
        let samples = load_dataset(&source)?;
        let kind = metric.map_or(MetricKind::L2, MetricKind::from);
        DistanceMatrix::compute(&samples, &MetricSpace::new(kind))?
    };
    Ok((dist, source))
}

fn bound_config(est: &EstimatorArgs, metric: MetricKind, epsilon: f64) -> anyhow::Result<BoundConfig> {
    let mut cfg = BoundConfig::new(metric, epsilon, est.alpha);
    cfg.spheres = est.spheres;
    cfg.iterations = est.iterations;
    cfg.split_fraction = est.split;
    cfg.seed = est.seed;
    if let Some(range) = &est.alpha_range {
        let (lo, hi) = range
            .split_once(':')
            .ok_or_else(|| advbound::Error::Config(format!("alpha range {range:?} is not LO:HI")))?;
        cfg.alpha_lo = lo
            .trim()
            .parse()
            .map_err(|_| advbound::Error::Config(format!("bad alpha range bound {lo:?}")))?;
        cfg.alpha_hi = hi
            .trim()
            .parse()
            .map_err(|_| advbound::Error::Config(format!("bad alpha range bound {hi:?}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(doc: &mut ReportDocument, timer: Timer, output: Option<&PathBuf>) -> anyhow::Result<()> {
    doc.runtime.threads = rayon::current_num_threads();
    doc.runtime.timings = timer.laps;
    let text = doc.to_json()?;
    match output {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn run_bound(cmd: &BoundCmd) -> anyhow::Result<()> {
    let mut timer = Timer::new();
    let (dist, source) = distances_for(&cmd.est.data, cmd.est.metric)?;
    timer.lap("distances");
    let cfg = bound_config(&cmd.est, dist.metric(), cmd.epsilon)?;
    let report = estimate_bound_from_distances(&dist, &cfg)?;
    timer.lap("estimate");
    let warnings = report.warnings.clone();
    let mut doc = ReportDocument::new("bound", &json!({ "dataset": source, "bound": cfg }), &report)?;
    doc.warnings = warnings;
    emit(&mut doc, timer, cmd.est.output.as_ref())
}

fn run_sweep(cmd: &SweepCmd) -> anyhow::Result<()> {
    let mut timer = Timer::new();
    let (dist, source) = distances_for(&cmd.est.data, cmd.est.metric)?;
    timer.lap("distances");
    let cfg = bound_config(&cmd.est, dist.metric(), cmd.epsilon)?;
    let records = sweep_spheres_from_distances(&dist, &cfg, &cmd.t_values)?;
    timer.lap("sweep");
    if let Some(path) = &cmd.csv {
        let mut text = String::from("spheres,train_risk,train_expansion,test_risk,test_expansion\n");
        for r in &records {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                r.spheres, r.train_risk, r.train_expansion, r.test_risk, r.test_expansion
            ));
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut doc = ReportDocument::new(
        "sweep-t",
        &json!({ "dataset": source, "bound": cfg, "t_values": cmd.t_values }),
        &records,
    )?;
    emit(&mut doc, timer, cmd.est.output.as_ref())
}

fn run_invert(cmd: &InvertCmd) -> anyhow::Result<()> {
    let mut timer = Timer::new();
    let (dist, source) = distances_for(&cmd.est.data, cmd.est.metric)?;
    timer.lap("distances");
    let cfg = bound_config(&cmd.est, dist.metric(), 0.0)?;
    let inversion = invert_bound_from_distances(&dist, &cfg, cmd.risk_budget, cmd.eps_hi, cmd.tol)?;
    timer.lap("invert");
    let mut doc = ReportDocument::new(
        "invert",
        &json!({
            "dataset": source,
            "bound": cfg,
            "risk_budget": cmd.risk_budget,
            "eps_hi": cmd.eps_hi,
            "tol": cmd.tol,
        }),
        &inversion,
    )?;
    emit(&mut doc, timer, cmd.est.output.as_ref())
}

fn run_attack(cmd: &AttackCmd) -> anyhow::Result<()> {
    let mut timer = Timer::new();
    let source = cmd.data.source();
    let samples = load_dataset(&source)?;
    samples.require_labels()?;
    timer.lap("load");
    let train_cfg = TrainConfig {
        temperature: cmd.train_temperature,
        learning_rate: cmd.learning_rate,
        epochs: cmd.epochs,
        batch_size: TrainConfig::default().batch_size,
        seed: cmd.seed,
    };
    let model = match (&cmd.model_in, cmd.train) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let m: ToyClassifier = serde_json::from_str(&text).map_err(advbound::Error::from)?;
            m.validate()?;
            m
        }
        (None, true) => train_toy_classifier(&samples, &train_cfg)?,
        (None, false) => bail!(advbound::Error::Config("either --train or --model-in is required".into())),
    };
    timer.lap("train");
    if let Some(path) = &cmd.model_out {
        fs::write(path, serde_json::to_string_pretty(&model)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let mut attack_cfg = match cmd.attack {
        AttackArg::PgdL2 => AttackConfig::pgd_l2(cmd.epsilon),
        AttackArg::TdPgd => AttackConfig::td_pgd(cmd.epsilon),
    };
    attack_cfg.steps = cmd.steps;
    attack_cfg.step_size = match (cmd.step_size, cmd.attack) {
        (Some(s), _) => s,
        (None, AttackArg::PgdL2) => 2.5 * cmd.epsilon / cmd.steps.max(1) as f64,
        (None, AttackArg::TdPgd) => 2.0 * cmd.epsilon.clamp(0.0, 1.0).asin() / cmd.steps.max(1) as f64,
    };
    attack_cfg.clamp_nonnegative = matches!(cmd.attack, AttackArg::TdPgd) && !cmd.no_clamp;
    let attacked = model.with_temperature(cmd.temperature);
    let summary = evaluate_attack(&attacked, &samples, &attack_cfg)?;
    timer.lap("attack");
    let mut doc = ReportDocument::new(
        "attack",
        &json!({
            "dataset": source,
            "attack": attack_cfg,
            "temperature": cmd.temperature,
            "model_in": cmd.model_in,
            "train": if cmd.model_in.is_none() { Some(&train_cfg) } else { None },
        }),
        &summary,
    )?;
    if summary.violations > 0 {
        doc.warnings
            .push(format!("{} attacked samples violate the constraint", summary.violations));
    }
    emit(&mut doc, timer, cmd.output.as_ref())
}

fn run_distances(cmd: &DistancesCmd) -> anyhow::Result<()> {
    let samples = load_dataset(&cmd.data.source())?;
    let dist = DistanceMatrix::compute(&samples, &MetricSpace::new(cmd.metric.into()))?;
    dist.write_cache(&cmd.output)?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<advbound::Error>()) {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    let result = match &cli.command {
        Command::Bound(c) => run_bound(c),
        Command::Attack(c) => run_attack(c),
        Command::SweepT(c) => run_sweep(c),
        Command::Invert(c) => run_invert(c),
        Command::Distances(c) => run_distances(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

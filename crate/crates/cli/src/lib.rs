//! Commands behind the `sscsr` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, ValueEnum};
use sscsr_core::config::{parse_run_config, EmaSetting, RunConfig};
use sscsr_core::dataio::{
    assign_condition, read_dataset, write_dataset, write_manifest, DataCondition, DatasetManifest, PartitionCounts,
    SignalDataset,
};
use sscsr_core::losses::{scaled_cross_entropy, ConsistencyForm};
use sscsr_core::netcore::{read_checkpoint, write_checkpoint, ArchConfig, Checkpoint, Network};
use sscsr_core::sigsim::{draw_profiles, simulate_dataset};
use sscsr_core::trainer::{
    evaluate, tally_trials, train_observed, train_supervised_observed, EpochStats, RunReport, StabilityTally,
    TrainConfig, TrainOutput,
};

mod svg;

pub use svg::line_chart;

pub const DATASET_FILE: &str = "dataset.bin";
pub const MANIFEST_FILE: &str = "dataset.manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const CURVES_CSV: &str = "loss_curves.csv";
pub const CURVES_SVG: &str = "loss_curves.svg";

pub const BENCH_HEADER: &str = "form,condition,gamma,best_accuracy,m,n,trials,status";

/// Seed override read when `--seed` is absent.
pub const SEED_ENV: &str = "SSCSR_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sscsr_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 configuration, 3 data format or shape, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use sscsr_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Config(_)) => 2,
            CliError::Core(E::Format { .. } | E::Shape(_)) => 3,
            CliError::Core(E::Divergence(_)) => 4,
            CliError::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    Train,
    Eval,
    Bench,
    PlotLoss,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "sscsr", version, about = "Semi-supervised RF fingerprint recognition lab")]
pub struct RunSpec {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON run configuration; built-in desk defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the simulation and training seeds (also `SSCSR_SEED`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel benchmark cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Omit wall-clock fields so reruns produce byte-identical files.
    #[arg(long)]
    pub deterministic: bool,
    /// Train on the labeled partition only (N = 0).
    #[arg(long)]
    pub supervised_only: bool,
    /// Dataset file; defaults to `<out>/dataset.bin`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Checkpoint for `eval`; defaults to `<out>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Focusing parameters plotted by `plot-loss`.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 1.0, 2.0, 3.0, 4.0])]
    pub alphas: Vec<f64>,
    /// Class count for `plot-loss`.
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
}

impl RunSpec {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        RunSpec {
            command,
            config: None,
            out: out.into(),
            seed: None,
            jobs: 1,
            deterministic: false,
            supervised_only: false,
            dataset: None,
            checkpoint: None,
            alphas: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            classes: 10,
        }
    }

    fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join(DATASET_FILE))
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join(CHECKPOINT_FILE))
    }
}

/// Loads and validates the run configuration with seed overrides and the
/// supervised-only flag applied.
pub fn load_config(spec: &RunSpec) -> CliResult<RunConfig> {
    let mut config = match &spec.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            parse_run_config(&text)?
        }
        None => RunConfig::default(),
    };
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
        ),
        Err(_) => None,
    };
    if let Some(seed) = spec.seed.or(env_seed) {
        config.sim.seed = seed;
        config.train.seed = seed;
    }
    if spec.supervised_only {
        config.condition.n_unlabeled_per_class = 0;
        for c in &mut config.bench.conditions {
            c.n_unlabeled_per_class = 0;
        }
    }
    if spec.jobs < 1 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    if spec.command == Command::PlotLoss {
        if spec.classes < 2 {
            return Err(CliError::Usage("--classes must be at least 2".into()));
        }
        if spec.alphas.is_empty() || spec.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(CliError::Usage("--alphas must be finite values >= 0".into()));
        }
    }
    config.validate()?;
    Ok(config)
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} does not exist", path.display())))
    }
}

fn create_out(spec: &RunSpec) -> CliResult<()> {
    fs::create_dir_all(&spec.out).map_err(sscsr_core::Error::from)?;
    Ok(())
}

fn write_file(path: PathBuf, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(sscsr_core::Error::from)?;
    Ok(())
}

/// Runs the command named by `spec`, printing progress to `log`.
pub fn run(spec: &RunSpec, log: &mut (dyn std::io::Write + Send)) -> CliResult<()> {
    let config = load_config(spec)?;
    match spec.command {
        Command::Simulate => cmd_simulate(spec, &config, log),
        Command::Train => cmd_train(spec, &config, log).map(|_| ()),
        Command::Eval => cmd_eval(spec, &config, log).map(|_| ()),
        Command::Bench => cmd_bench(spec, &config, log).map(|_| ()),
        Command::PlotLoss => cmd_plot_loss(spec, log),
    }
}

fn logln(log: &mut (dyn std::io::Write + Send), line: impl AsRef<str>) {
    let _ = writeln!(log, "{}", line.as_ref());
}

pub fn cmd_simulate(spec: &RunSpec, config: &RunConfig, log: &mut (dyn std::io::Write + Send)) -> CliResult<()> {
    let sim = &config.sim;
    let profiles = draw_profiles(sim.num_devices, sim.seed);
    let dataset = simulate_dataset(sim, &profiles)?;
    create_out(spec)?;
    write_dataset(&dataset, spec.dataset_path())?;
    let manifest = DatasetManifest {
        sim: sim.clone(),
        profiles,
        profile_seed: sim.seed,
        counts: PartitionCounts::of(&dataset),
    };
    write_manifest(&manifest, spec.out.join(MANIFEST_FILE))?;
    logln(log, "class,train,val,test");
    for class in 0..dataset.num_classes {
        let count = |split: &[sscsr_core::dataio::LabeledSample]| split.iter().filter(|s| s.label == class).count();
        logln(
            log,
            format!(
                "{class},{},{},{}",
                count(&dataset.labeled),
                count(&dataset.val),
                count(&dataset.test)
            ),
        );
    }
    logln(
        log,
        format!(
            "total,{},{},{}",
            dataset.labeled.len(),
            dataset.val.len(),
            dataset.test.len()
        ),
    );
    Ok(())
}

fn load_dataset(spec: &RunSpec, config: &RunConfig) -> CliResult<SignalDataset> {
    let path = spec.dataset_path();
    require_file(&path)?;
    let dataset = read_dataset(&path)?;
    let arch = config.arch();
    if dataset.num_classes != arch.num_classes || dataset.sample_len != arch.input_len {
        return Err(sscsr_core::Error::Shape(format!(
            "dataset has {} classes of length {}, configuration expects {} of length {}",
            dataset.num_classes, dataset.sample_len, arch.num_classes, arch.input_len
        ))
        .into());
    }
    Ok(dataset)
}

/// Trains on `condition` of `pool` with `config.seed` choosing both the data
/// partition and the training streams. `supervised` selects the labeled-only
/// baseline loop.
pub fn run_trial(
    pool: &SignalDataset,
    condition: DataCondition,
    arch: &ArchConfig,
    config: &TrainConfig,
    supervised: bool,
    observer: &mut dyn FnMut(&EpochStats),
) -> CliResult<TrainOutput> {
    let data = assign_condition(pool, condition, config.seed)?;
    let out = if supervised {
        train_supervised_observed(&data.supervised_only(), arch, config, observer)?
    } else {
        train_observed(&data, arch, config, observer)?
    };
    Ok(out)
}

pub fn progress_line(e: &EpochStats) -> String {
    let val = e.val_accuracy.map_or("-".to_string(), |v| format!("{v:.4}"));
    format!(
        "epoch {:>4}  L_s {:.6}  L_u {:.6}  val {val}",
        e.epoch, e.loss_supervised, e.loss_unsupervised
    )
}

pub fn cmd_train(spec: &RunSpec, config: &RunConfig, log: &mut (dyn std::io::Write + Send)) -> CliResult<RunReport> {
    let pool = load_dataset(spec, config)?;
    create_out(spec)?;
    let arch = config.arch();
    let out = run_trial(&pool, config.condition, &arch, &config.train, false, &mut |e| {
        logln(log, progress_line(e))
    })?;
    let mut report = out.report;
    if spec.deterministic {
        report.wall_time_secs = None;
    }
    let ckpt = Checkpoint {
        arch,
        params: out.params,
        adam: out.adam,
    };
    write_checkpoint(&ckpt, spec.out.join(CHECKPOINT_FILE))?;
    write_file(spec.out.join(REPORT_FILE), report.to_json()?)?;
    logln(log, format!("test accuracy {:.4}", report.test_accuracy));
    Ok(report)
}

pub fn confusion_csv(confusion: &[Vec<usize>]) -> String {
    let mut s = String::from("true\\predicted");
    for j in 0..confusion.len() {
        s.push_str(&format!(",{j}"));
    }
    s.push('\n');
    for (i, row) in confusion.iter().enumerate() {
        s.push_str(&i.to_string());
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// Evaluates a checkpoint on the test split; returns the accuracy.
pub fn cmd_eval(spec: &RunSpec, config: &RunConfig, log: &mut (dyn std::io::Write + Send)) -> CliResult<f64> {
    let ckpt_path = spec.checkpoint_path();
    require_file(&ckpt_path)?;
    let dataset = load_dataset(spec, config)?;
    let ckpt = read_checkpoint(&ckpt_path)?;
    if ckpt.arch.num_classes != dataset.num_classes || ckpt.arch.input_len != dataset.sample_len {
        return Err(sscsr_core::Error::Shape(format!(
            "checkpoint expects {} classes of length {}, dataset has {} of length {}",
            ckpt.arch.num_classes, ckpt.arch.input_len, dataset.num_classes, dataset.sample_len
        ))
        .into());
    }
    let net = Network::new(&ckpt.arch)?;
    let eval = evaluate(&net, &ckpt.params, &dataset.test)?;
    create_out(spec)?;
    let csv = confusion_csv(&eval.confusion);
    write_file(spec.out.join(CONFUSION_FILE), &csv)?;
    logln(log, format!("accuracy {:.6}", eval.accuracy));
    let _ = log.write_all(csv.as_bytes());
    Ok(eval.accuracy)
}

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    /// Consistency form, or `None` for the labeled-only baseline.
    pub form: Option<ConsistencyForm>,
    pub condition: DataCondition,
    pub gamma: EmaSetting,
    pub outcome: Result<StabilityTally, String>,
}

impl BenchRow {
    pub fn form_name(&self) -> &'static str {
        self.form.map_or("supervised", ConsistencyForm::as_str)
    }

    pub fn csv(&self) -> String {
        let head = format!("{},{},{}", self.form_name(), self.condition, self.gamma);
        match &self.outcome {
            Ok(t) => format!("{head},{:.6},{},{},{},ok", t.best_accuracy, t.m, t.n, t.trials),
            Err(e) => format!("{head},,,,,failed: {}", e.replace([',', '\n'], ";")),
        }
    }
}

/// Every (condition, EMA setting, form) cell of the sweep, in table order.
pub fn bench_cells(config: &RunConfig) -> Vec<(Option<ConsistencyForm>, DataCondition, EmaSetting)> {
    let b = &config.bench;
    let conditions = if b.conditions.is_empty() {
        vec![config.condition]
    } else {
        b.conditions.clone()
    };
    let gammas = if b.gammas.is_empty() {
        vec![EmaSetting::of(&config.train)]
    } else {
        b.gammas.clone()
    };
    let mut forms: Vec<Option<ConsistencyForm>> = b.forms.iter().copied().map(Some).collect();
    if b.include_supervised {
        forms.push(None);
    }
    let mut cells = Vec::new();
    for &c in &conditions {
        for &g in &gammas {
            for &f in &forms {
                cells.push((f, c, g));
            }
        }
    }
    cells
}

/// Runs the stability tally of one benchmark cell.
pub fn run_cell(
    pool: &SignalDataset,
    config: &RunConfig,
    form: Option<ConsistencyForm>,
    condition: DataCondition,
    gamma: EmaSetting,
) -> CliResult<StabilityTally> {
    let arch = config.arch();
    let mut train = gamma.apply(&config.train);
    if let Some(f) = form {
        train.form = f;
    }
    let tally = tally_trials(
        config.bench.trials,
        config.bench.good_threshold,
        pool.num_classes,
        train.seed,
        |seed| {
            let cfg = TrainConfig { seed, ..train.clone() };
            run_trial(pool, condition, &arch, &cfg, form.is_none(), &mut |_| {})
                .map(|o| o.report)
                .map_err(|e| match e {
                    CliError::Core(c) => c,
                    CliError::Usage(u) => sscsr_core::Error::Config(u),
                })
        },
    )?;
    Ok(tally)
}

/// Runs every cell, up to `spec.jobs` at a time, and writes the CSV table.
/// A failing cell is recorded and the remaining cells still run.
pub fn cmd_bench(
    spec: &RunSpec,
    config: &RunConfig,
    log: &mut (dyn std::io::Write + Send),
) -> CliResult<Vec<BenchRow>> {
    let pool = load_dataset(spec, config)?;
    create_out(spec)?;
    let cells = bench_cells(config);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<BenchRow>>> = Mutex::new(vec![None; cells.len()]);
    let log = Mutex::new(log);
    std::thread::scope(|scope| {
        for _ in 0..spec.jobs.min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(form, condition, gamma)) = cells.get(i) else {
                    break;
                };
                let outcome = run_cell(&pool, config, form, condition, gamma).map_err(|e| e.to_string());
                let row = BenchRow {
                    form,
                    condition,
                    gamma,
                    outcome,
                };
                logln(*log.lock().expect("log lock"), row.csv());
                results.lock().expect("results lock")[i] = Some(row);
            });
        }
    });
    let rows: Vec<BenchRow> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv());
        csv.push('\n');
    }
    write_file(spec.out.join(BENCH_FILE), csv)?;
    Ok(rows)
}

/// Scaled cross-entropy of `p` against itself, where `p` puts `max_prob` on
/// one class and spreads the rest evenly.
pub fn self_scaled_ce(max_prob: f64, classes: usize, alpha: f64) -> f64 {
    let rest = (1.0 - max_prob) / (classes - 1) as f64;
    let mut p = vec![rest; classes];
    p[0] = max_prob;
    scaled_cross_entropy(&p, &p, alpha).expect("valid distribution")
}

pub const CURVE_POINTS: usize = 1000;

/// Curves of [`self_scaled_ce`] over `CURVE_POINTS` maxima from `1/C` to 1.
pub fn loss_curves(alphas: &[f64], classes: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let lo = 1.0 / classes as f64;
    let grid: Vec<f64> = (0..CURVE_POINTS)
        .map(|i| lo + (1.0 - lo) * i as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    let curves = alphas
        .iter()
        .map(|&a| grid.iter().map(|&p| self_scaled_ce(p, classes, a)).collect())
        .collect();
    (grid, curves)
}

pub fn cmd_plot_loss(spec: &RunSpec, log: &mut (dyn std::io::Write + Send)) -> CliResult<()> {
    let (grid, curves) = loss_curves(&spec.alphas, spec.classes);
    create_out(spec)?;
    let mut csv = String::from("max_prob");
    for a in &spec.alphas {
        csv.push_str(&format!(",alpha_{a}"));
    }
    csv.push('\n');
    for (i, p) in grid.iter().enumerate() {
        csv.push_str(&format!("{p:.6}"));
        for c in &curves {
            csv.push_str(&format!(",{:.9}", c[i]));
        }
        csv.push('\n');
    }
    write_file(spec.out.join(CURVES_CSV), csv)?;
    let series: Vec<(String, Vec<(f64, f64)>)> = spec
        .alphas
        .iter()
        .zip(&curves)
        .map(|(a, c)| {
            (
                format!("alpha = {a}"),
                grid.iter().copied().zip(c.iter().copied()).collect(),
            )
        })
        .collect();
    let title = format!("Scaled cross-entropy of p with itself, C = {}", spec.classes);
    write_file(
        spec.out.join(CURVES_SVG),
        line_chart(&title, "max probability", "loss", &series),
    )?;
    logln(log, format!("wrote {} and {}", CURVES_CSV, CURVES_SVG));
    Ok(())
}

//! `fairest`: simulate collections, draw annotation samples, estimate
//! fairness metrics and run rate sweeps.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fairest::corpus::{
    parse_annotations, parse_qrels, parse_run_file, write_annotations, write_qrels, write_run_file,
    AnnotationSet, Qrels, RunSet,
};
use fairest::estimators::{estimate_metric, EstimatorKind};
use fairest::eval::plot::render_plots;
use fairest::eval::{
    pair_for, read_details_csv, read_report_csv, run_experiment, sample_size, DataSource, ExperimentConfig,
};
use fairest::metrics::{exact_metric, representation_targets, MetricKind, MetricSpec, TargetKind};
use fairest::sampling::{pooled_distribution, stratified_sample, stratify, uniform_sample, Budget};
use fairest::simulator::{simulate, GroupBias, SimConfig};

const SIMULATE_HELP: &str = "\
Config file keys (TOML, all optional; unknown keys are rejected):
  num_queries = 50
  corpus_size = 1000
  num_systems = 800
  retrieved_per_query = 100
  easiness_prior = { a = 2.0, b = 6.0 }
  system_goodness_prior = [0.5, 2.5]
  group_bias = 0.0              # or [lo, hi] for a per-system draw
  beta_prior = { a = 1.0, b = 1.0 }
  score_noise = 1.0
  seed = <generated and recorded in the manifest when absent>

Writes runs.txt, qrels.txt, annotations.txt and manifest.toml to --out.";

const SWEEP_HELP: &str = "\
Config file keys (TOML; unknown keys are rejected):
  [data.simulated]              # any simulate key, or:
  [data.files]                  # runs = \"...\", annotations = \"...\", qrels = \"...\" (optional)
  metrics = [{ kind = \"abs\" }, { kind = \"sq\" }, { kind = \"kl\" }, { kind = \"exposure\" }]
      # per metric: cutoff = 30, patience = 0.5, target = \"parity\" | \"corpus\" | \"relevance\" | <number>
  estimators = [\"ht\", \"induced\", \"uniform\"]   # also \"uniform_normalized\"
  rates = [0.1, 0.2, ..., 0.9]
  repetitions = 10
  seed = <generated and recorded in the manifest when absent>
  protected_group = \"A\"

Relative file paths are resolved against the config file's directory.
Writes report.csv, details.csv, summary.csv, manifest.toml and plots/*.svg to --out.";

#[derive(Debug, Parser)]
#[command(name = "fairest", version, about = "Estimate group fairness of rankings from sampled annotations")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic collection with complete labels.
    #[command(after_help = SIMULATE_HELP)]
    Simulate(SimulateArgs),
    /// Draw an annotation sample from a complete annotation file.
    Sample(SampleArgs),
    /// Estimate metrics per system from a sampled annotation file.
    Estimate(EstimateArgs),
    /// Run a sampling-rate sweep and write reports and plots.
    #[command(after_help = SWEEP_HELP)]
    Sweep(SweepArgs),
    /// Re-render plots from report and detail CSV files.
    Report(ReportArgs),
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    /// TOML simulation config; defaults to the 800-system, 50-query setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    seed: Option<u64>,
    #[arg(long)]
    num_queries: Option<usize>,
    #[arg(long)]
    corpus_size: Option<usize>,
    #[arg(long)]
    num_systems: Option<usize>,
    #[arg(long)]
    retrieved_per_query: Option<usize>,
    /// Global score shift of protected documents.
    #[arg(long)]
    group_bias: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Design {
    /// Top-heavy stratified sampling.
    Weighted,
    /// Simple random sampling.
    Uniform,
}

#[derive(Debug, clap::Args)]
#[command(group(ArgGroup::new("size").required(true).args(["rate", "budget"])))]
struct SampleArgs {
    /// TREC run file.
    #[arg(long)]
    runs: PathBuf,
    /// Complete (two-column) annotation file.
    #[arg(long)]
    annotations: PathBuf,
    /// Fraction of annotated documents to sample, in (0, 1].
    #[arg(long)]
    rate: Option<f64>,
    /// Number of documents to sample.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_enum, default_value_t = Design::Weighted)]
    design: Design,
    /// Sampling seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    seed: u64,
    /// Output three-column annotation file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct EstimateArgs {
    /// TREC run file.
    #[arg(long)]
    runs: PathBuf,
    /// Sampled annotation file (three columns for ht).
    #[arg(long)]
    annotations: PathBuf,
    /// ht, uniform, uniform_normalized or induced.
    #[arg(long, default_value = "ht")]
    estimator: EstimatorKind,
    /// Metric to report; repeatable. Defaults to diff, abs, sq, kl and exposure.
    #[arg(long = "metric")]
    metrics: Vec<MetricKind>,
    /// Rank cutoff k.
    #[arg(long, default_value_t = 30)]
    cutoff: usize,
    /// Exposure patience.
    #[arg(long, default_value_t = 0.5)]
    patience: f64,
    /// parity, corpus, relevance or a number in [0, 1].
    #[arg(long, default_value = "parity")]
    target: TargetKind,
    /// Relevance judgments, needed for the relevance target.
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Complete annotations; adds an `actual` column.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Label of the protected group.
    #[arg(long, default_value = "A")]
    protected: String,
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    seed: Option<u64>,
    /// Comma-separated sampling rates.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    /// Repetitions per rate.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<EstimatorKind>>,
}

#[derive(Debug, clap::Args)]
struct ReportArgs {
    /// report.csv from a sweep.
    #[arg(long)]
    report: PathBuf,
    /// details.csv from a sweep.
    #[arg(long)]
    details: PathBuf,
    /// Directory for the SVG files.
    #[arg(long)]
    out: PathBuf,
}

/// Bad invocation or configuration.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for usage and I/O problems, 1 for data and contract errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<io::Error>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<fairest::Error>() {
            return if matches!(e, fairest::Error::Io(_)) { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

fn read_runs(path: &Path) -> Result<RunSet> {
    parse_run_file(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_annotations(path: &Path) -> Result<AnnotationSet> {
    parse_annotations(open(path)?).with_context(|| format!("reading {}", path.display()))
}

/// Parses a TOML file into a table so callers can see which keys were set.
fn read_toml(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.parse::<toml::Table>()
        .with_context(|| format!("invalid config {}", path.display()))
}

/// Largest seed a TOML integer can hold.
const MAX_SEED: u64 = i64::MAX as u64;

fn generated_seed() -> u64 {
    let seed = rand_seed() & MAX_SEED;
    log::info!("no seed given; using generated seed {seed}");
    seed
}

fn rand_seed() -> u64 {
    use std::collections::hash_map::RandomState;
    use std::hash::{BuildHasher, Hasher};
    let mut h = RandomState::new().build_hasher();
    h.write_u128(
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0),
    );
    h.finish()
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a T,
}

fn write_manifest<T: Serialize>(dir: &Path, command: &'static str, config: &T) -> Result<()> {
    let manifest = Manifest {
        tool: "fairest",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
    };
    let text = toml::to_string(&manifest).context("serializing manifest")?;
    fs::write(dir.join("manifest.toml"), text).context("writing manifest.toml")
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let (mut config, has_seed) = match &args.config {
        Some(path) => {
            let table = read_toml(path)?;
            let has_seed = table.contains_key("seed");
            let config: SimConfig = toml::Value::Table(table)
                .try_into()
                .with_context(|| format!("invalid simulation config {}", path.display()))?;
            (config, has_seed)
        }
        None => (SimConfig::default(), false),
    };
    config.seed = match args.seed {
        Some(s) => s,
        None if has_seed => config.seed,
        None => generated_seed(),
    };
    if let Some(v) = args.num_queries {
        config.num_queries = v;
    }
    if let Some(v) = args.corpus_size {
        config.corpus_size = v;
    }
    if let Some(v) = args.num_systems {
        config.num_systems = v;
    }
    if let Some(v) = args.retrieved_per_query {
        config.retrieved_per_query = v;
    }
    if let Some(v) = args.group_bias {
        config.group_bias = GroupBias::Global(v);
    }
    config.validate().map_err(|e| usage(e.to_string()))?;

    out_dir(&args.out)?;
    let collection = simulate(&config)?;
    let mut w = create(&args.out.join("runs.txt"))?;
    write_run_file(&collection.runset, &mut w)?;
    w.flush()?;
    let mut w = create(&args.out.join("qrels.txt"))?;
    write_qrels(&collection.qrels, &mut w)?;
    w.flush()?;
    let mut w = create(&args.out.join("annotations.txt"))?;
    write_annotations(&collection.group_labels, &mut w)?;
    w.flush()?;
    write_manifest(&args.out, "simulate", &config)?;
    println!(
        "wrote {} rankings, {} judgments, {} labels (seed {})",
        collection.runset.len(),
        collection.qrels.len(),
        collection.group_labels.len(),
        config.seed
    );
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    if let Some(p) = args.rate {
        if !(p > 0.0 && p <= 1.0) {
            return Err(usage(format!("--rate {p} outside (0, 1]")));
        }
    }
    if args.budget == Some(0) {
        return Err(usage("--budget must be positive"));
    }
    let runs = read_runs(&args.runs)?;
    let truth = read_annotations(&args.annotations)?;
    let design = pooled_distribution(&runs)?;
    let pool = design.pool().len();
    let m = match (args.rate, args.budget) {
        (Some(p), _) => sample_size(p, truth.len(), pool)?,
        (None, Some(b)) => Budget::Count(b).resolve(pool)?,
        (None, None) => unreachable!("clap requires --rate or --budget"),
    };
    let (sample, buckets) = match args.design {
        Design::Weighted => {
            let strata = stratify(&design, m)?;
            let buckets = strata.buckets().map_or(0, <[_]>::len);
            (stratified_sample(&strata, m, &truth, args.seed)?, buckets)
        }
        Design::Uniform => (uniform_sample(design.pool(), m, &truth, args.seed)?, 1),
    };
    let mut w = create(&args.out)?;
    write_annotations(&sample, &mut w)?;
    w.flush()?;
    println!("m = {m}, buckets = {buckets}, pool = {pool}");
    Ok(())
}

/// Per-system mean of a per-ranking value.
fn system_means(
    runs: &RunSet,
    mut value: impl FnMut(&fairest::corpus::Ranking) -> Result<f64>,
) -> Result<BTreeMap<String, f64>> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in runs.iter() {
        let v = value(r)?;
        let e = sums.entry(r.system_id().to_string()).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let runs = read_runs(&args.runs)?;
    let sample = read_annotations(&args.annotations)?;
    if args.estimator == EstimatorKind::HorvitzThompson && !sample.is_sampled() && !sample.is_empty() {
        return Err(usage(format!(
            "{} has no inclusion-probability column (third column, theta); ht needs it",
            args.annotations.display()
        )));
    }
    let truth = match &args.truth {
        Some(p) => Some(read_annotations(p)?),
        None => {
            let complete = runs.documents().iter().all(|d| sample.label(d.as_str()).is_some());
            complete.then(|| sample.clone())
        }
    };
    let qrels = match &args.qrels {
        Some(p) => parse_qrels(open(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => Qrels::new(),
    };
    let reference = truth.as_ref().unwrap_or(&sample);
    let groups = pair_for(reference, &args.protected)?;
    let kinds = if args.metrics.is_empty() { MetricKind::ALL.to_vec() } else { args.metrics.clone() };
    let specs: Vec<MetricSpec> = kinds
        .into_iter()
        .map(|k| {
            MetricSpec::new(k)
                .with_cutoff(args.cutoff)
                .with_patience(args.patience)
                .with_target(args.target)
        })
        .collect();
    for s in &specs {
        s.validate().map_err(|e| usage(e.to_string()))?;
    }

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let with_actual = truth.is_some();
    writeln!(
        out,
        "system_id,metric,estimator,estimated{}",
        if with_actual { ",actual" } else { "" }
    )?;
    let mut rows: BTreeMap<(String, usize), (f64, Option<f64>)> = BTreeMap::new();
    for (i, spec) in specs.iter().enumerate() {
        let mut targets = BTreeMap::new();
        let mut target_for = |q: &str| -> Result<_> {
            if !targets.contains_key(q) {
                let t = representation_targets(spec, reference, &qrels, q, &groups)?;
                targets.insert(q.to_string(), t);
            }
            Ok(targets[q].clone())
        };
        let estimated = system_means(&runs, |r| {
            let t = target_for(r.query_id())?;
            Ok(estimate_metric(args.estimator, spec, r, &sample, &groups, &t)?)
        })?;
        let actual = match &truth {
            Some(truth) => Some(system_means(&runs, |r| {
                let t = target_for(r.query_id())?;
                Ok(exact_metric(spec, r, truth, &groups, &t)?)
            })?),
            None => None,
        };
        for (system, e) in estimated {
            let a = actual.as_ref().map(|a| a[&system]);
            rows.insert((system, i), (e, a));
        }
    }
    for ((system, i), (e, a)) in rows {
        write!(out, "{system},{},{},{e}", specs[i].label(), args.estimator)?;
        match a {
            Some(a) => writeln!(out, ",{a}")?,
            None => writeln!(out)?,
        }
    }
    out.flush()?;
    Ok(())
}

fn resolve_paths(config: &mut ExperimentConfig, base: &Path) {
    if let DataSource::Files(files) = &mut config.data {
        for p in [&mut files.runs, &mut files.annotations].into_iter().chain(files.qrels.as_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let table = read_toml(&args.config)?;
    let has_seed = table.contains_key("seed");
    let mut config: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .with_context(|| format!("invalid experiment config {}", args.config.display()))?;
    resolve_paths(&mut config, args.config.parent().unwrap_or(Path::new(".")));
    config.seed = match args.seed {
        Some(s) => s,
        None if has_seed => config.seed,
        None => generated_seed(),
    };
    if let Some(r) = args.rates {
        config.rates = r;
    }
    if let Some(r) = args.repetitions {
        config.repetitions = r;
    }
    if let Some(e) = args.estimators {
        config.estimators = e;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;

    out_dir(&args.out)?;
    let report = run_experiment(&config)?;
    let mut w = create(&args.out.join("report.csv"))?;
    report.write_report_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&args.out.join("details.csv"))?;
    report.write_details_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&args.out.join("summary.csv"))?;
    report.write_summary_csv(&mut w)?;
    w.flush()?;
    let plots = args.out.join("plots");
    out_dir(&plots)?;
    let written = render_plots(&report.report_rows(), &report.detail_rows(), &plots)?;
    write_manifest(&args.out, "sweep", &config)?;
    let excluded: usize = report.cells.iter().filter(|c| c.tau.is_none()).count();
    println!(
        "{} cells, {} systems, {} plots, {} cells with undefined tau (seed {})",
        report.cells.len(),
        report.systems.len(),
        written.len(),
        excluded,
        config.seed
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let report = read_report_csv(open(&args.report)?)
        .with_context(|| format!("reading {}", args.report.display()))?;
    let details = read_details_csv(open(&args.details)?)
        .with_context(|| format!("reading {}", args.details.display()))?;
    if report.is_empty() {
        return Err(anyhow!(fairest::Error::Data(format!("{} has no rows", args.report.display()))));
    }
    out_dir(&args.out)?;
    let written = render_plots(&report, &details, &args.out)?;
    println!("wrote {} plots", written.len());
    Ok(())
}

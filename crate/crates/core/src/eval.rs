//! Scoring estimated metrics against ground truth across sampling rates.
//!
//! Systems are compared on the mean over queries of each per-query metric.
//! For every rate and repetition one stratified and one uniform sample are
//! drawn from the pooled distribution; every estimator is applied to the
//! sample its family uses, and the per-system estimates are compared to the
//! actual values with Kendall's tau-b and RMSE.

pub mod plot;

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    parse_annotations, parse_qrels, parse_run_file, AnnotationSet, GroupLabel, Qrels, RunSet,
};
use crate::estimators::{estimate_slots, metric_value, EstimatorKind, PairTargets, SampleDesignKind, Slot};
use crate::metrics::{
    exact_metric, representation_targets, Divergence, GroupPair, MetricKind, MetricSpec,
};
use crate::sampling::{pooled_distribution, stratified_draw, stratify, uniform_draw, Budget};
use crate::seed::{derive_seed, Stream};
use crate::simulator::{simulate, SimConfig, SyntheticCollection, PROTECTED_GROUP};
use crate::{Error, Result};

/// Kendall's tau-b, computed by merge-sort inversion counting.
///
/// Fails with [`Error::UndefinedCorrelation`] for fewer than two points or
/// when either vector is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!(
            "kendall_tau: lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Contract("kendall_tau: NaN input".into()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::UndefinedCorrelation(format!("{n} observations")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let tied_pairs = |run: u64| run * (run - 1) / 2;
    let (mut x_ties, mut joint_ties) = (0u64, 0u64);
    let (mut x_run, mut joint_run) = (1u64, 1u64);
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            x_run += 1;
            if y[a] == y[b] {
                joint_run += 1;
            } else {
                joint_ties += tied_pairs(joint_run);
                joint_run = 1;
            }
        } else {
            x_ties += tied_pairs(x_run);
            joint_ties += tied_pairs(joint_run);
            x_run = 1;
            joint_run = 1;
        }
    }
    x_ties += tied_pairs(x_run);
    joint_ties += tied_pairs(joint_run);

    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = count_inversions(&mut ys, &mut buf);

    let mut y_ties = 0u64;
    let mut run = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            y_ties += tied_pairs(run);
            run = 1;
        }
    }
    y_ties += tied_pairs(run);

    let pairs = tied_pairs(n as u64);
    if pairs == x_ties || pairs == y_ties {
        return Err(Error::UndefinedCorrelation("constant input vector".into()));
    }
    let s = pairs as i64 - x_ties as i64 - y_ties as i64 + joint_ties as i64 - 2 * swaps as i64;
    Ok(s as f64 / (((pairs - x_ties) as f64) * ((pairs - y_ties) as f64)).sqrt())
}

/// Sorts `v` ascending and returns the number of strictly inverted pairs.
fn count_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = count_inversions(&mut v[..mid], &mut buf[..mid])
        + count_inversions(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

/// Root mean squared difference.
pub fn rmse(actual: &[f64], estimated: &[f64]) -> Result<f64> {
    if actual.len() != estimated.len() {
        return Err(Error::Contract(format!(
            "rmse: lengths differ ({} vs {})",
            actual.len(),
            estimated.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Contract("rmse: empty input".into()));
    }
    let sum: f64 = actual.iter().zip(estimated).map(|(a, e)| (a - e) * (a - e)).sum();
    Ok((sum / actual.len() as f64).sqrt())
}

/// Run, annotation and (optional) qrels files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub runs: PathBuf,
    pub annotations: PathBuf,
    #[serde(default)]
    pub qrels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Simulated(SimConfig),
    Files(FileSource),
}

fn default_metrics() -> Vec<MetricSpec> {
    [
        MetricKind::Divergence(Divergence::AbsoluteDifference),
        MetricKind::Divergence(Divergence::SquaredDifference),
        MetricKind::Divergence(Divergence::KlDivergence),
        MetricKind::Exposure,
    ]
    .into_iter()
    .map(MetricSpec::new)
    .collect()
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![
        EstimatorKind::HorvitzThompson,
        EstimatorKind::Induced,
        EstimatorKind::UniformMean,
    ]
}

/// 0.1, 0.2, ..., 0.9.
pub fn default_rates() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 10.0).collect()
}

fn default_repetitions() -> usize {
    10
}

fn default_protected() -> String {
    PROTECTED_GROUP.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricSpec>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Master seed for sampling.
    #[serde(default)]
    pub seed: u64,
    /// Label of the protected group.
    #[serde(default = "default_protected")]
    pub protected_group: String,
}

impl ExperimentConfig {
    /// Default metrics, estimators, rates and repetitions over `data`.
    pub fn new(data: DataSource) -> Self {
        Self {
            data,
            metrics: default_metrics(),
            estimators: default_estimators(),
            rates: default_rates(),
            repetitions: default_repetitions(),
            seed: 0,
            protected_group: default_protected(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() || self.estimators.is_empty() || self.rates.is_empty() {
            return Err(Error::Contract(
                "experiment needs at least one metric, estimator and rate".into(),
            ));
        }
        for spec in &self.metrics {
            spec.validate()?;
        }
        for &p in &self.rates {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Contract(format!("sampling rate {p} outside (0, 1]")));
            }
        }
        if self.repetitions == 0 {
            return Err(Error::Contract("repetitions must be at least 1".into()));
        }
        if let DataSource::Simulated(sim) = &self.data {
            sim.validate()?;
        }
        Ok(())
    }
}

/// Runs with complete ground-truth labels.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub runs: RunSet,
    pub labels: AnnotationSet,
    pub qrels: Qrels,
    pub groups: GroupPair,
}

fn open(path: &PathBuf) -> Result<std::io::BufReader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(std::io::BufReader::new(file))
}

impl ExperimentData {
    pub fn from_collection(collection: SyntheticCollection) -> Self {
        let groups = collection.groups();
        Self {
            runs: collection.runset,
            labels: collection.group_labels,
            qrels: collection.qrels,
            groups,
        }
    }

    /// Loads or simulates the data described by `source`.
    pub fn load(source: &DataSource, protected_group: &str) -> Result<Self> {
        match source {
            DataSource::Simulated(sim) => Ok(Self::from_collection(simulate(sim)?)),
            DataSource::Files(files) => {
                let runs = parse_run_file(open(&files.runs)?)?;
                let labels = parse_annotations(open(&files.annotations)?)?;
                let qrels = match &files.qrels {
                    Some(p) => parse_qrels(open(p)?)?,
                    None => Qrels::new(),
                };
                let groups = pair_for(&labels, protected_group)?;
                Ok(Self {
                    runs,
                    labels,
                    qrels,
                    groups,
                })
            }
        }
    }
}

/// The protected group and the other label present in `labels`.
pub fn pair_for(labels: &AnnotationSet, protected: &str) -> Result<GroupPair> {
    let protected = GroupLabel::new(protected)?;
    let others: Vec<GroupLabel> = labels.groups().into_iter().filter(|g| *g != protected).collect();
    match others.as_slice() {
        [other] => GroupPair::new(protected, other.clone()),
        [] => Err(Error::Data(format!(
            "annotations contain no group other than {protected}"
        ))),
        _ => Err(Error::Data(format!(
            "protected group {protected} does not appear in the annotations"
        ))),
    }
}

/// One (metric, estimator, rate, repetition) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub metric: String,
    pub estimator: EstimatorKind,
    pub rate: f64,
    pub repetition: usize,
    /// `None` when tau is undefined or the cell failed.
    pub tau: Option<f64>,
    pub rmse: Option<f64>,
    pub n_systems: usize,
    /// Per-system estimates, aligned with [`ExperimentReport::systems`].
    pub estimated: Vec<f64>,
    pub error: Option<String>,
}

/// Means over repetitions for one (metric, estimator, rate).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub metric: String,
    pub estimator: EstimatorKind,
    pub rate: f64,
    pub mean_tau: Option<f64>,
    pub mean_rmse: Option<f64>,
    pub repetitions: usize,
    /// Repetitions whose tau was undefined.
    pub tau_excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub systems: Vec<String>,
    /// Metric labels, in config order.
    pub metrics: Vec<String>,
    /// Actual per-system values for each metric.
    pub actual: Vec<Vec<f64>>,
    /// Ordered by metric, estimator, rate, repetition.
    pub cells: Vec<Cell>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl ExperimentReport {
    pub fn summaries(&self) -> Vec<Summary> {
        let mut groups: Vec<(&str, EstimatorKind, f64, Vec<&Cell>)> = Vec::new();
        for c in &self.cells {
            match groups.last_mut() {
                Some((m, e, r, cells)) if *m == c.metric && *e == c.estimator && *r == c.rate => {
                    cells.push(c)
                }
                _ => groups.push((&c.metric, c.estimator, c.rate, vec![c])),
            }
        }
        groups
            .into_iter()
            .map(|(metric, estimator, rate, cells)| Summary {
                metric: metric.to_string(),
                estimator,
                rate,
                mean_tau: mean(cells.iter().filter_map(|c| c.tau)),
                mean_rmse: mean(cells.iter().filter_map(|c| c.rmse)),
                repetitions: cells.len(),
                tau_excluded: cells.iter().filter(|c| c.tau.is_none()).count(),
            })
            .collect()
    }

    /// Summary for one metric label, estimator and rate.
    pub fn summary(&self, metric: &str, estimator: EstimatorKind, rate: f64) -> Option<Summary> {
        self.summaries()
            .into_iter()
            .find(|s| s.metric == metric && s.estimator == estimator && s.rate == rate)
    }

    pub fn write_report_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, self.report_rows())
    }

    pub fn write_details_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, self.detail_rows())
    }

    /// Means over repetitions, one row per (metric, estimator, rate).
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, self.summaries())
    }

    pub fn report_rows(&self) -> Vec<ReportRow> {
        self.cells
            .iter()
            .map(|c| ReportRow {
                metric: c.metric.clone(),
                estimator: c.estimator.to_string(),
                rate: c.rate,
                repetition: c.repetition,
                tau: c.tau,
                rmse: c.rmse,
                n_systems: c.n_systems,
            })
            .collect()
    }

    pub fn detail_rows(&self) -> Vec<DetailRow> {
        let mut rows = Vec::new();
        for c in &self.cells {
            let m = self.metrics.iter().position(|l| *l == c.metric).expect("known metric");
            for (i, system) in self.systems.iter().enumerate() {
                rows.push(DetailRow {
                    metric: c.metric.clone(),
                    estimator: c.estimator.to_string(),
                    rate: c.rate,
                    repetition: c.repetition,
                    system_id: system.clone(),
                    actual: self.actual[m][i],
                    estimated: c.estimated.get(i).copied(),
                });
            }
        }
        rows
    }
}

pub const REPORT_HEADER: &str = "metric,estimator,rate,repetition,tau,rmse,n_systems";
pub const DETAILS_HEADER: &str = "metric,estimator,rate,repetition,system_id,actual,estimated";

/// One line of the report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    pub estimator: String,
    pub rate: f64,
    pub repetition: usize,
    pub tau: Option<f64>,
    pub rmse: Option<f64>,
    pub n_systems: usize,
}

/// One line of the per-system detail CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailRow {
    pub metric: String,
    pub estimator: String,
    pub rate: f64,
    pub repetition: usize,
    pub system_id: String,
    pub actual: f64,
    pub estimated: Option<f64>,
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    if let csv::ErrorKind::Io(_) = e.kind() {
        return Error::Io(e.into());
    }
    Error::parse(line, e.to_string())
}

fn write_csv<W: Write, T: Serialize>(out: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for row in rows {
        writer.serialize(row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_csv<R: Read, T: DeserializeOwned>(reader: R, header: &str) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_reader(reader);
    let found = reader.headers().map_err(csv_error)?;
    if found.iter().ne(header.split(',')) {
        return Err(Error::parse(1, format!("expected header {header:?}")));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(csv_error))
        .collect()
}

pub fn read_report_csv<R: Read>(reader: R) -> Result<Vec<ReportRow>> {
    read_csv(reader, REPORT_HEADER)
}

pub fn read_details_csv<R: Read>(reader: R) -> Result<Vec<DetailRow>> {
    read_csv(reader, DETAILS_HEADER)
}

/// Seed of the sample drawn for one rate and repetition.
pub fn sample_seed(master: u64, design: SampleDesignKind, rate_index: usize, repetition: usize) -> u64 {
    let stream = match design {
        SampleDesignKind::Stratified => Stream::StratifiedSample,
        SampleDesignKind::Uniform => Stream::UniformSample,
    };
    derive_seed(master, stream, ((rate_index as u64) << 32) | repetition as u64)
}

/// Annotation budget for `rate`: a fraction of all annotated documents,
/// capped at the size of the sampling pool.
pub fn sample_size(rate: f64, annotated: usize, pool: usize) -> Result<usize> {
    Ok(Budget::Rate(rate).resolve(annotated.max(1))?.min(pool))
}

/// Simulates or loads the data, then runs the sweep.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let data = ExperimentData::load(&config.data, &config.protected_group)?;
    run_experiment_on(&data, config)
}

/// Documents indexed by pool position, rankings as index lists.
struct Dense {
    /// Rankings per system, one per query the system answered.
    rankings: Vec<Vec<(usize, Vec<u32>)>>,
    protected: Vec<bool>,
    /// `targets[metric][query]`.
    targets: Vec<Vec<PairTargets>>,
}

/// Runs the sweep on already loaded data; `config.data` is ignored.
pub fn run_experiment_on(data: &ExperimentData, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if data.labels.is_sampled() {
        return Err(Error::Contract("ground truth must be a complete annotation set".into()));
    }
    if data.runs.is_empty() {
        return Err(Error::Data("no rankings to evaluate".into()));
    }
    let design = pooled_distribution(&data.runs)?;
    let pool = design.pool();
    let index: HashMap<&str, u32> = pool.iter().enumerate().map(|(i, d)| (d.as_str(), i as u32)).collect();
    let protected = pool
        .iter()
        .map(|d| match data.labels.label(d.as_str()) {
            Some(g) => Ok(*g == data.groups.protected),
            None => Err(Error::MissingLabel(d.to_string())),
        })
        .collect::<Result<Vec<bool>>>()?;

    let systems: Vec<String> = data.runs.systems().into_iter().map(str::to_string).collect();
    let queries: Vec<String> = data.runs.queries().into_iter().map(str::to_string).collect();
    let query_index: BTreeMap<&str, usize> = queries.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();

    let targets_lib = config
        .metrics
        .iter()
        .map(|spec| {
            queries
                .iter()
                .map(|q| representation_targets(spec, &data.labels, &data.qrels, q, &data.groups))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let targets = targets_lib
        .iter()
        .map(|per_query| {
            per_query
                .iter()
                .map(|t| PairTargets::new(&data.groups, t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rankings: Vec<Vec<(usize, Vec<u32>)>> = vec![Vec::new(); systems.len()];
    let system_index: BTreeMap<&str, usize> = systems.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    for r in data.runs.iter() {
        let ids = r.entries().iter().map(|e| index[e.doc_id.as_str()]).collect();
        rankings[system_index[r.system_id()]].push((query_index[r.query_id()], ids));
    }

    // Actual values come from the reference implementation.
    let actual: Vec<Vec<f64>> = config
        .metrics
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            systems
                .par_iter()
                .map(|s| {
                    let mut sum = 0.0;
                    let mut n = 0usize;
                    for q in &queries {
                        if let Some(r) = data.runs.get(s, q) {
                            sum += exact_metric(spec, r, &data.labels, &data.groups, &targets_lib[m][query_index[q.as_str()]])?;
                            n += 1;
                        }
                    }
                    Ok(sum / n as f64)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let dense = Dense {
        rankings,
        protected,
        targets,
    };
    let need_stratified = config.estimators.iter().any(|e| e.design() == SampleDesignKind::Stratified);
    let need_uniform = config.estimators.iter().any(|e| e.design() == SampleDesignKind::Uniform);

    let tasks: Vec<(usize, usize)> = (0..config.rates.len())
        .flat_map(|r| (0..config.repetitions).map(move |rep| (r, rep)))
        .collect();
    // estimates[task][estimator][metric][system]
    let estimates: Vec<Vec<Result<Vec<Vec<f64>>>>> = tasks
        .par_iter()
        .map(|&(ri, rep)| {
            let n = pool.len();
            let m = match sample_size(config.rates[ri], data.labels.len(), n) {
                Ok(m) => m,
                Err(e) => return config.estimators.iter().map(|_| Err(cell_error(&e))).collect(),
            };
            let stratified = need_stratified
                .then(|| -> Result<Vec<f64>> {
                    let strata = stratify(&design, m)?;
                    let inclusion = strata.inclusion_probabilities().expect("stratified");
                    let draw = stratified_draw(&strata, m, sample_seed(config.seed, SampleDesignKind::Stratified, ri, rep))?;
                    let mut theta = vec![0.0; n];
                    for i in draw.selected {
                        theta[i] = inclusion[i];
                    }
                    Ok(theta)
                })
                .transpose();
            let uniform = need_uniform
                .then(|| -> Result<Vec<f64>> {
                    let picked = uniform_draw(n, m, sample_seed(config.seed, SampleDesignKind::Uniform, ri, rep))?;
                    let mut theta = vec![0.0; n];
                    for i in picked {
                        theta[i] = m as f64 / n as f64;
                    }
                    Ok(theta)
                })
                .transpose();
            config
                .estimators
                .iter()
                .map(|&kind| {
                    let theta = match kind.design() {
                        SampleDesignKind::Stratified => stratified.as_ref(),
                        SampleDesignKind::Uniform => uniform.as_ref(),
                    };
                    match theta {
                        Ok(Some(theta)) => Ok(estimate_all(&dense, &config.metrics, kind, theta)),
                        Ok(None) => unreachable!("sample drawn for every needed design"),
                        Err(e) => Err(cell_error(e)),
                    }
                })
                .collect()
        })
        .collect();

    let metric_labels: Vec<String> = config.metrics.iter().map(MetricSpec::label).collect();
    let mut cells = Vec::with_capacity(config.metrics.len() * estimates.len() * config.estimators.len());
    for (mi, label) in metric_labels.iter().enumerate() {
        for (ei, &estimator) in config.estimators.iter().enumerate() {
            for (ti, &(ri, rep)) in tasks.iter().enumerate() {
                let mut cell = Cell {
                    metric: label.clone(),
                    estimator,
                    rate: config.rates[ri],
                    repetition: rep,
                    tau: None,
                    rmse: None,
                    n_systems: systems.len(),
                    estimated: Vec::new(),
                    error: None,
                };
                match &estimates[ti][ei] {
                    Ok(values) => {
                        let est = &values[mi];
                        cell.rmse = Some(rmse(&actual[mi], est)?);
                        if !numerically_constant(&actual[mi]) && !numerically_constant(est) {
                            match kendall_tau(&actual[mi], est) {
                                Ok(t) => cell.tau = Some(t),
                                Err(Error::UndefinedCorrelation(_)) => {}
                                Err(e) => return Err(e),
                            }
                        }
                        cell.estimated = est.clone();
                    }
                    Err(e) => {
                        log::warn!("cell {label}/{estimator}/{}/{rep} failed: {e}", cell.rate);
                        cell.error = Some(e.to_string());
                    }
                }
                cells.push(cell);
            }
        }
    }
    Ok(ExperimentReport {
        systems,
        metrics: metric_labels,
        actual,
        cells,
    })
}

/// True when all values agree up to rounding noise. Such vectors have zero
/// variance in exact arithmetic, so ranking them would rank round-off.
fn numerically_constant(values: &[f64]) -> bool {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo <= CONSTANT_TOLERANCE * hi.abs().max(lo.abs()).max(1.0)
}

/// Spread below which a vector of per-system values counts as constant.
pub const CONSTANT_TOLERANCE: f64 = 1e-12;

/// Errors are not `Clone`; cells only keep the message.
fn cell_error(e: &Error) -> Error {
    Error::Contract(e.to_string())
}

/// Per-metric, per-system means of the estimates from one sample.
fn estimate_all(dense: &Dense, metrics: &[MetricSpec], kind: EstimatorKind, theta: &[f64]) -> Vec<Vec<f64>> {
    let per_system: Vec<Vec<f64>> = dense
        .rankings
        .iter()
        .map(|rankings| {
            let mut sums = vec![0.0; metrics.len()];
            let mut slots = Vec::new();
            for (q, ids) in rankings {
                slots.clear();
                slots.extend(ids.iter().map(|&i| {
                    let t = theta[i as usize];
                    if t > 0.0 {
                        Slot::Labeled {
                            member: dense.protected[i as usize],
                            inclusion: t,
                        }
                    } else {
                        Slot::Unlabeled
                    }
                }));
                for (mi, spec) in metrics.iter().enumerate() {
                    let est = estimate_slots(kind, &slots, spec.cutoff, spec.patience);
                    sums[mi] += metric_value(spec.kind, &est, &dense.targets[mi][*q]);
                }
            }
            sums.iter().map(|s| s / rankings.len() as f64).collect()
        })
        .collect();
    (0..metrics.len())
        .map(|mi| per_system.iter().map(|v| v[mi]).collect())
        .collect()
}

//! Synthetic test collections with complete relevance and group labels.
//!
//! Each query has an easiness `h_q ~ Beta(a_h, b_h)` and each document is
//! relevant to it with probability `h_q`. A single membership rate
//! `β ~ Beta(a_β, b_β)` is drawn per collection and every document joins the
//! protected group with probability `β`. A system `m` has goodness
//! `α_m ~ U(α_lo, α_hi)` and scores every document for every query as
//! `S = μ + σ z` with
//!
//! | relevant | protected | μ                |
//! |----------|-----------|------------------|
//! | no       | no        | 0                |
//! | yes      | no        | α_m + h_q        |
//! | no       | yes       | γ_bias           |
//! | yes      | yes       | α_m + h_q + γ_bias |
//!
//! and returns the `N` best-scored documents. The noise `z` for a given
//! system, query and document does not depend on the bias, so increasing the
//! bias with a fixed seed moves scores of protected documents only.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Bernoulli, Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, DocId, GroupLabel, Qrels, RunSet, Ranking};
use crate::metrics::{exact_metric, representation_targets, GroupPair, MetricSpec};
use crate::seed::{derive_seed, task_rng, Stream};
use crate::{Error, Result};

/// Label of simulated protected documents.
pub const PROTECTED_GROUP: &str = "A";
/// Label of simulated non-protected documents.
pub const OTHER_GROUP: &str = "B";

/// Parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    fn distribution(self, what: &str) -> Result<Beta<f64>> {
        if !(self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::Contract(format!(
                "{what} Beta parameters must be positive, got ({}, {})",
                self.a, self.b
            )));
        }
        Beta::new(self.a, self.b).map_err(|e| Error::Contract(format!("{what}: {e}")))
    }
}

/// Score shift of protected documents: one value for every system, or a
/// per-system draw from `U(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupBias {
    Global(f64),
    PerSystem([f64; 2]),
}

impl Default for GroupBias {
    fn default() -> Self {
        GroupBias::Global(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub num_queries: usize,
    pub corpus_size: usize,
    pub num_systems: usize,
    pub retrieved_per_query: usize,
    pub easiness_prior: BetaPrior,
    /// Bounds of the uniform prior on system goodness.
    pub system_goodness_prior: [f64; 2],
    pub group_bias: GroupBias,
    pub beta_prior: BetaPrior,
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_queries: 50,
            corpus_size: 1000,
            num_systems: 800,
            retrieved_per_query: 100,
            easiness_prior: BetaPrior::new(2.0, 6.0),
            system_goodness_prior: [0.5, 2.5],
            group_bias: GroupBias::Global(0.0),
            beta_prior: BetaPrior::new(1.0, 1.0),
            score_noise: 1.0,
            seed: 0,
        }
    }
}

/// 50 queries, 1000 documents, 800 systems retrieving 100 each.
pub fn paper_scale_config() -> SimConfig {
    SimConfig::default()
}

fn check_interval(what: &str, [lo, hi]: [f64; 2]) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(Error::Contract(format!("{what} interval [{lo}, {hi}] is invalid")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_queries", self.num_queries),
            ("corpus_size", self.corpus_size),
            ("num_systems", self.num_systems),
            ("retrieved_per_query", self.retrieved_per_query),
        ] {
            if v == 0 {
                return Err(Error::Contract(format!("{name} must be positive")));
            }
        }
        if self.retrieved_per_query > self.corpus_size {
            return Err(Error::Contract(format!(
                "retrieved_per_query {} exceeds corpus_size {}",
                self.retrieved_per_query, self.corpus_size
            )));
        }
        self.easiness_prior.distribution("easiness_prior")?;
        self.beta_prior.distribution("beta_prior")?;
        check_interval("system_goodness_prior", self.system_goodness_prior)?;
        match self.group_bias {
            GroupBias::Global(g) if !g.is_finite() => {
                return Err(Error::Contract(format!("group_bias {g} is not finite")))
            }
            GroupBias::PerSystem(i) => check_interval("group_bias", i)?,
            _ => {}
        }
        if !(self.score_noise > 0.0 && self.score_noise.is_finite()) {
            return Err(Error::Contract(format!(
                "score_noise must be positive, got {}",
                self.score_noise
            )));
        }
        Ok(())
    }
}

fn padded_ids(prefix: char, n: usize) -> Vec<String> {
    let width = (n.saturating_sub(1)).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

pub fn query_ids(config: &SimConfig) -> Vec<String> {
    padded_ids('q', config.num_queries)
}

pub fn doc_ids(config: &SimConfig) -> Vec<DocId> {
    padded_ids('d', config.corpus_size)
        .iter()
        .map(|s| DocId::new(s).expect("generated ids are valid"))
        .collect()
}

pub fn system_ids(config: &SimConfig) -> Vec<String> {
    padded_ids('s', config.num_systems)
}

/// Everything except the system runs.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub qrels: Qrels,
    pub labels: AnnotationSet,
    /// `h_q` per query, in query order.
    pub easiness: Vec<f64>,
    /// The drawn `β`.
    pub membership_rate: f64,
}

/// Draws easiness, relevance and group membership.
pub fn generate_collection(config: &SimConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let easiness_dist = config.easiness_prior.distribution("easiness_prior")?;
    let mut rng = task_rng(derive_seed(config.seed, Stream::Easiness, 0));
    let easiness: Vec<f64> = (0..config.num_queries).map(|_| easiness_dist.sample(&mut rng)).collect();

    let mut rng = task_rng(derive_seed(config.seed, Stream::Membership, 0));
    let membership_rate = config.beta_prior.distribution("beta_prior")?.sample(&mut rng);
    let coin = Bernoulli::new(membership_rate).map_err(|e| Error::Contract(e.to_string()))?;
    let docs = doc_ids(config);
    let protected = GroupLabel::new(PROTECTED_GROUP)?;
    let other = GroupLabel::new(OTHER_GROUP)?;
    let labels = AnnotationSet::ground_truth(docs.iter().map(|d| {
        let g = if coin.sample(&mut rng) { &protected } else { &other };
        (d.clone(), g.clone())
    }))?;

    let queries = query_ids(config);
    let judged: Vec<Vec<bool>> = (0..config.num_queries)
        .into_par_iter()
        .map(|q| {
            let mut rng = task_rng(derive_seed(config.seed, Stream::Relevance, q as u64));
            let h = easiness[q];
            (0..config.corpus_size).map(|_| rng.random::<f64>() < h).collect()
        })
        .collect();
    let mut qrels = Qrels::default();
    for (q, row) in queries.iter().zip(&judged) {
        for (d, &rel) in docs.iter().zip(row) {
            qrels.insert(q, d.clone(), u32::from(rel));
        }
    }
    Ok(SyntheticCorpus {
        qrels,
        labels,
        easiness,
        membership_rate,
    })
}

/// Scores every document for every query with every system and keeps the
/// top `N`.
pub fn generate_systems(config: &SimConfig, corpus: &SyntheticCorpus) -> Result<RunSet> {
    config.validate()?;
    let docs = doc_ids(config);
    let queries = query_ids(config);
    let systems = system_ids(config);
    let protected: Vec<bool> = docs
        .iter()
        .map(|d| corpus.labels.label(d.as_str()).map(|g| g.as_str()) == Some(PROTECTED_GROUP))
        .collect();
    let relevant: Vec<Vec<bool>> = queries
        .iter()
        .map(|q| docs.iter().map(|d| corpus.qrels.grade(q, d.as_str()).unwrap_or(0) > 0).collect())
        .collect();
    let [alpha_lo, alpha_hi] = config.system_goodness_prior;
    let n = config.retrieved_per_query;

    let per_system: Vec<Vec<Ranking>> = systems
        .par_iter()
        .enumerate()
        .map(|(m, system)| {
            let mut rng = task_rng(derive_seed(config.seed, Stream::System, m as u64));
            let alpha = alpha_lo + (alpha_hi - alpha_lo) * rng.random::<f64>();
            let u: f64 = rng.random();
            let bias = match config.group_bias {
                GroupBias::Global(g) => g,
                GroupBias::PerSystem([lo, hi]) => lo + (hi - lo) * u,
            };
            let mut out = Vec::with_capacity(queries.len());
            let mut scored: Vec<(usize, f64)> = Vec::with_capacity(docs.len());
            for (q, query) in queries.iter().enumerate() {
                scored.clear();
                let h = corpus.easiness[q];
                for d in 0..docs.len() {
                    let z: f64 = rng.sample(StandardNormal);
                    let mut mu = 0.0;
                    if relevant[q][d] {
                        mu += alpha + h;
                    }
                    if protected[d] {
                        mu += bias;
                    }
                    scored.push((d, mu + config.score_noise * z));
                }
                let by_score = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
                if n < scored.len() {
                    scored.select_nth_unstable_by(n - 1, by_score);
                    scored.truncate(n);
                }
                out.push(Ranking::from_scored(
                    query,
                    system,
                    scored.iter().map(|&(d, s)| (docs[d].clone(), s)).collect(),
                )?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut runs = RunSet::default();
    for ranking in per_system.into_iter().flatten() {
        runs.insert(ranking)?;
    }
    Ok(runs)
}

/// A simulated collection with its system runs.
#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub config: SimConfig,
    pub qrels: Qrels,
    pub group_labels: AnnotationSet,
    pub runset: RunSet,
    pub easiness: Vec<f64>,
    pub membership_rate: f64,
}

pub fn simulate(config: &SimConfig) -> Result<SyntheticCollection> {
    let corpus = generate_collection(config)?;
    let runset = generate_systems(config, &corpus)?;
    Ok(SyntheticCollection {
        config: config.clone(),
        qrels: corpus.qrels,
        group_labels: corpus.labels,
        runset,
        easiness: corpus.easiness,
        membership_rate: corpus.membership_rate,
    })
}

impl SyntheticCollection {
    pub fn groups(&self) -> GroupPair {
        GroupPair::new(
            GroupLabel::new(PROTECTED_GROUP).expect("valid label"),
            GroupLabel::new(OTHER_GROUP).expect("valid label"),
        )
        .expect("distinct labels")
    }

    /// Exact metric per `(system, query)`.
    pub fn ground_truth(&self, spec: &MetricSpec) -> Result<BTreeMap<(String, String), f64>> {
        spec.validate()?;
        let groups = self.groups();
        let mut targets = BTreeMap::new();
        let mut out = BTreeMap::new();
        for ranking in self.runset.iter() {
            let (system, query) = (ranking.system_id(), ranking.query_id());
            if !targets.contains_key(query) {
                let t = representation_targets(spec, &self.group_labels, &self.qrels, query, &groups)?;
                targets.insert(query.to_string(), t);
            }
            let value = exact_metric(spec, ranking, &self.group_labels, &groups, &targets[query])?;
            out.insert((system.to_string(), query.to_string()), value);
        }
        Ok(out)
    }
}

//! Choosing which documents to annotate.
//!
//! The weighted design assigns every rank position a top-heavy prior weight,
//! averages each document's weight over all rankings, and normalizes the
//! result into a sampling distribution over the pool of retrieved documents.
//! The pool is then sorted by probability and cut into buckets of size `m`;
//! `m` buckets are drawn with replacement and items are drawn uniformly
//! without replacement inside each drawn bucket.
//!
//! For a full bucket the inclusion probability of each member equals the
//! bucket probability `b`. The last bucket is usually smaller than `m`, and
//! draws beyond its size spill into the first bucket; the inclusion
//! probabilities of those two buckets are computed exactly from the binomial
//! distribution of the number of times the last bucket is drawn.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;

use crate::corpus::{AnnotationSet, DocId, RunSet};
use crate::seed::task_rng;
use crate::{Error, Result};

/// Prior weight of each rank position of a list of length `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankWeights(Vec<f64>);

impl RankWeights {
    /// Weight of 1-based `rank`.
    pub fn weight(&self, rank: usize) -> f64 {
        self.0[rank - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `W(r) = (1 / 2R) (1 + 1/r + 1/(r+1) + ... + 1/R)` using exact harmonic
/// tail sums.
pub fn rank_weights(len: usize) -> Result<RankWeights> {
    if len == 0 {
        return Err(Error::Contract("rank weights need a list length of at least 1".into()));
    }
    let mut weights = vec![0.0; len];
    let mut tail = 0.0;
    let scale = 1.0 / (2.0 * len as f64);
    for r in (1..=len).rev() {
        tail += 1.0 / r as f64;
        weights[r - 1] = scale * (1.0 + tail);
    }
    Ok(RankWeights(weights))
}

/// One stratum of the probability-sorted pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    /// Index range into [`SamplingDesign::pool`].
    pub members: Range<usize>,
    /// Probability of drawing this bucket (sum of member probabilities).
    pub probability: f64,
    /// Inclusion probability of each member in a sample of size `m`.
    pub inclusion: f64,
}

impl Bucket {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A sampling distribution over a pool of documents, optionally stratified.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDesign {
    pool: Vec<DocId>,
    probability: Vec<f64>,
    strata: Option<Strata>,
}

#[derive(Debug, Clone, PartialEq)]
struct Strata {
    budget: usize,
    buckets: Vec<Bucket>,
}

impl SamplingDesign {
    /// Builds a design from any positive weighting of documents; weights are
    /// normalized to sum to one.
    pub fn from_weights(weights: impl IntoIterator<Item = (DocId, f64)>) -> Result<Self> {
        let mut items: Vec<(DocId, f64)> = weights.into_iter().collect();
        if items.is_empty() {
            return Err(Error::Contract("sampling design needs a non-empty pool".into()));
        }
        if let Some((d, w)) = items.iter().find(|(_, w)| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Contract(format!("weight {w} for {d} is not positive")));
        }
        items.sort_by(|a, b| a.0.cmp(&b.0));
        if items.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Contract("duplicate document in sampling pool".into()));
        }
        let total: f64 = items.iter().map(|(_, w)| w).sum();
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (pool, probability) = items.into_iter().map(|(d, w)| (d, w / total)).unzip();
        Ok(Self {
            pool,
            probability,
            strata: None,
        })
    }

    /// Documents sorted by descending probability, ties by ascending id.
    pub fn pool(&self) -> &[DocId] {
        &self.pool
    }

    /// Probabilities aligned with [`pool`](Self::pool).
    pub fn probabilities(&self) -> &[f64] {
        &self.probability
    }

    pub fn probability(&self, doc_id: &DocId) -> Option<f64> {
        self.pool
            .iter()
            .position(|d| d == doc_id)
            .map(|i| self.probability[i])
    }

    pub fn buckets(&self) -> Option<&[Bucket]> {
        self.strata.as_ref().map(|s| s.buckets.as_slice())
    }

    /// The budget the buckets were built for.
    pub fn budget(&self) -> Option<usize> {
        self.strata.as_ref().map(|s| s.budget)
    }

    /// Inclusion probability of every pool member, aligned with the pool.
    pub fn inclusion_probabilities(&self) -> Option<Vec<f64>> {
        let strata = self.strata.as_ref()?;
        let mut out = vec![0.0; self.pool.len()];
        for b in &strata.buckets {
            out[b.members.clone()].iter_mut().for_each(|x| *x = b.inclusion);
        }
        Some(out)
    }
}

/// The weighted prior pooled over every ranking of `runs`.
///
/// Each document's weight is the mean of `W(rank)` over all rankings of the
/// queries it was retrieved for, with rankings that miss it contributing 0.
pub fn pooled_distribution(runs: &RunSet) -> Result<SamplingDesign> {
    if runs.is_empty() {
        return Err(Error::Contract("cannot pool an empty run set".into()));
    }
    let mut rankings_per_query: HashMap<&str, usize> = HashMap::new();
    for r in runs.iter() {
        *rankings_per_query.entry(r.query_id()).or_default() += 1;
    }
    let mut weight_sum: HashMap<&DocId, f64> = HashMap::new();
    // Number of rankings over the queries each document was retrieved for.
    let mut denominator: HashMap<&DocId, usize> = HashMap::new();
    let mut seen: HashSet<(&str, &DocId)> = HashSet::new();
    let mut cache: HashMap<usize, RankWeights> = HashMap::new();
    for r in runs.iter() {
        if r.is_empty() {
            continue;
        }
        if !cache.contains_key(&r.len()) {
            cache.insert(r.len(), rank_weights(r.len())?);
        }
        let w = &cache[&r.len()];
        for e in r.entries() {
            *weight_sum.entry(&e.doc_id).or_default() += w.weight(e.rank);
            if seen.insert((r.query_id(), &e.doc_id)) {
                *denominator.entry(&e.doc_id).or_default() += rankings_per_query[r.query_id()];
            }
        }
    }
    if weight_sum.is_empty() {
        return Err(Error::Contract("run set retrieves no documents".into()));
    }
    SamplingDesign::from_weights(
        weight_sum
            .into_iter()
            .map(|(d, sum)| (d.clone(), sum / denominator[d] as f64)),
    )
}

/// Annotation budget: an absolute count or a fraction of the pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Count(usize),
    Rate(f64),
}

impl Budget {
    /// Resolves to a sample size in `[1, pool_size]`.
    pub fn resolve(self, pool_size: usize) -> Result<usize> {
        if pool_size == 0 {
            return Err(Error::Contract("budget over an empty pool".into()));
        }
        match self {
            Budget::Count(0) => Err(Error::Contract("budget must be positive".into())),
            Budget::Count(m) => Ok(m.min(pool_size)),
            Budget::Rate(p) if p > 0.0 && p <= 1.0 => {
                Ok(((p * pool_size as f64).round() as usize).clamp(1, pool_size))
            }
            Budget::Rate(p) => Err(Error::Contract(format!("sampling rate {p} outside (0, 1]"))),
        }
    }
}

/// Cuts the probability-sorted pool into contiguous buckets of size `m`.
/// A budget larger than the pool is clamped with a warning.
pub fn stratify(design: &SamplingDesign, m: usize) -> Result<SamplingDesign> {
    if m == 0 {
        return Err(Error::Contract("stratification budget must be positive".into()));
    }
    let n = design.pool.len();
    let m = if m > n {
        log::warn!("budget {m} exceeds pool size {n}; clamping");
        n
    } else {
        m
    };
    let mut buckets: Vec<Bucket> = (0..n)
        .step_by(m)
        .map(|start| {
            let members = start..(start + m).min(n);
            let probability = design.probability[members.clone()].iter().sum();
            Bucket {
                members,
                probability,
                inclusion: 0.0,
            }
        })
        .collect();
    let total: f64 = buckets.iter().map(|b| b.probability).sum();
    for b in &mut buckets {
        b.probability /= total;
        b.inclusion = b.probability;
    }
    let last = buckets.len() - 1;
    let short = buckets[last].len();
    if short < m {
        // T ~ Binomial(m, b_last): the last bucket yields min(T, short) items
        // and the excess lands in the first bucket.
        let capped = expected_min(m, buckets[last].probability, short);
        let overflow = m as f64 * buckets[last].probability - capped;
        buckets[last].inclusion = (capped / short as f64).min(1.0);
        buckets[0].inclusion = (buckets[0].inclusion + overflow / m as f64).min(1.0);
    }
    Ok(SamplingDesign {
        pool: design.pool.clone(),
        probability: design.probability.clone(),
        strata: Some(Strata { budget: m, buckets }),
    })
}

/// `E[min(T, cap)]` for `T ~ Binomial(n, p)`, as `Σ_{t < cap} P(T > t)`.
fn expected_min(n: usize, p: f64, cap: usize) -> f64 {
    if p >= 1.0 {
        return cap.min(n) as f64;
    }
    if p <= 0.0 {
        return 0.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut log_pmf = n as f64 * lq;
    let mut cdf = 0.0;
    let mut total = 0.0;
    for t in 0..cap.min(n) {
        cdf += log_pmf.exp();
        total += (1.0 - cdf).max(0.0);
        log_pmf += ((n - t) as f64).ln() - ((t + 1) as f64).ln() + lp - lq;
    }
    total
}

/// Outcome of one stratified draw, before labels are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedDraw {
    /// Number of times each bucket was drawn (before spilling).
    pub bucket_draws: Vec<usize>,
    /// Pool indices of the selected items, ascending.
    pub selected: Vec<usize>,
}

/// Draws `m` buckets with replacement and the matching number of items
/// without replacement inside each.
pub fn stratified_draw(design: &SamplingDesign, m: usize, seed: u64) -> Result<StratifiedDraw> {
    let strata = design
        .strata
        .as_ref()
        .ok_or_else(|| Error::Contract("design has no buckets; call stratify first".into()))?;
    if m == 0 || m > design.pool.len() {
        return Err(Error::Contract(format!(
            "sample size {m} outside [1, {}]",
            design.pool.len()
        )));
    }
    let buckets = &strata.buckets;
    let mut rng = task_rng(seed);
    let chooser = WeightedIndex::new(buckets.iter().map(|b| b.probability))
        .map_err(|e| Error::Contract(format!("bucket probabilities: {e}")))?;
    let mut draws = vec![0usize; buckets.len()];
    for _ in 0..m {
        draws[chooser.sample(&mut rng)] += 1;
    }
    let mut take = draws.clone();
    for j in 0..buckets.len() {
        let mut excess = take[j].saturating_sub(buckets[j].len());
        if excess == 0 {
            continue;
        }
        take[j] = buckets[j].len();
        for t in (j + 1..buckets.len()).chain(0..j) {
            let room = buckets[t].len() - take[t].min(buckets[t].len());
            let moved = room.min(excess);
            take[t] += moved;
            excess -= moved;
            if excess == 0 {
                break;
            }
        }
    }
    let mut selected = Vec::with_capacity(m);
    for (b, &n) in buckets.iter().zip(&take) {
        if n == 0 {
            continue;
        }
        let mut picked = index::sample(&mut rng, b.len(), n).into_vec();
        picked.sort_unstable();
        selected.extend(picked.into_iter().map(|i| b.members.start + i));
    }
    Ok(StratifiedDraw {
        bucket_draws: draws,
        selected,
    })
}

/// Stratified sample of size `m` with labels copied from `ground_truth` and
/// each item's inclusion probability recorded.
pub fn stratified_sample(
    design: &SamplingDesign,
    m: usize,
    ground_truth: &AnnotationSet,
    seed: u64,
) -> Result<AnnotationSet> {
    let draw = stratified_draw(design, m, seed)?;
    let inclusion = design
        .inclusion_probabilities()
        .expect("stratified_draw checked for buckets");
    let entries = draw
        .selected
        .iter()
        .map(|&i| {
            let doc = &design.pool[i];
            let label = ground_truth
                .label(doc.as_str())
                .ok_or_else(|| Error::MissingLabel(doc.to_string()))?;
            Ok((doc.clone(), label.clone(), inclusion[i]))
        })
        .collect::<Result<Vec<_>>>()?;
    AnnotationSet::sampled(entries)
}

/// Pool indices of a simple random sample of size `m`, ascending.
pub fn uniform_draw(pool_size: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > pool_size {
        return Err(Error::Contract(format!("sample size {m} outside [1, {pool_size}]")));
    }
    let mut rng = task_rng(seed);
    let mut picked = index::sample(&mut rng, pool_size, m).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Simple random sample of `m` documents; every item records `m / |pool|`.
pub fn uniform_sample(
    pool: &[DocId],
    m: usize,
    ground_truth: &AnnotationSet,
    seed: u64,
) -> Result<AnnotationSet> {
    let theta = m as f64 / pool.len() as f64;
    let entries = uniform_draw(pool.len(), m, seed)?
        .into_iter()
        .map(|i| {
            let doc = &pool[i];
            let label = ground_truth
                .label(doc.as_str())
                .ok_or_else(|| Error::MissingLabel(doc.to_string()))?;
            Ok((doc.clone(), label.clone(), theta))
        })
        .collect::<Result<Vec<_>>>()?;
    AnnotationSet::sampled(entries)
}

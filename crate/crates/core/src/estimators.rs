//! Metric estimation from a sample of annotated documents.
//!
//! * Horvitz-Thompson: each sampled top-`k` document counts `1/θ` times,
//!   where `θ` is its inclusion probability. Unbiased under any design.
//! * Simple mean (for uniform samples): the sampled indicators divided by
//!   `k`, exactly as written for the uniform baseline. The normalized variant
//!   rescales by the fraction of top-`k` positions that were sampled.
//! * Induced: drop unlabeled documents, close the gaps, and evaluate the
//!   exact metric on what remains.
//!
//! The estimators work per group from the same sample, so estimated
//! proportions of the two groups need not sum to one. Empty intersections
//! between the sample and the top `k` give 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, GroupLabel, Ranking};
use crate::metrics::{
    check_cutoff, check_patience, divergence, divergence_sum, position_weight, Divergence, GroupPair,
    GroupProportions, MetricKind, MetricSpec,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimatorKind {
    HorvitzThompson,
    /// Simple mean with the `1/k` denominator.
    UniformMean,
    /// Simple mean rescaled by the sampled fraction of the top `k`.
    UniformMeanNormalized,
    Induced,
}

/// Which sampler feeds an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleDesignKind {
    Stratified,
    Uniform,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::HorvitzThompson => "ht",
            EstimatorKind::UniformMean => "uniform",
            EstimatorKind::UniformMeanNormalized => "uniform_normalized",
            EstimatorKind::Induced => "induced",
        }
    }

    /// HT and induced read the stratified sample; the simple means read the
    /// uniform one.
    pub fn design(self) -> SampleDesignKind {
        match self {
            EstimatorKind::HorvitzThompson | EstimatorKind::Induced => SampleDesignKind::Stratified,
            EstimatorKind::UniformMean | EstimatorKind::UniformMeanNormalized => {
                SampleDesignKind::Uniform
            }
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ht" | "horvitz_thompson" => EstimatorKind::HorvitzThompson,
            "uniform" | "uniform_mean" => EstimatorKind::UniformMean,
            "uniform_normalized" | "uniform_mean_normalized" => {
                EstimatorKind::UniformMeanNormalized
            }
            "induced" => EstimatorKind::Induced,
            _ => {
                return Err(Error::Contract(format!(
                    "unknown estimator {s:?} (expected ht, uniform, uniform_normalized or induced)"
                )))
            }
        })
    }
}

impl TryFrom<String> for EstimatorKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimatorKind> for String {
    fn from(k: EstimatorKind) -> String {
        k.name().to_string()
    }
}

/// How the simple-mean estimators scale their sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UniformForm {
    Verbatim,
    Normalized,
}

/// What the sample says about one ranked position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Slot {
    Unlabeled,
    Labeled { member: bool, inclusion: f64 },
}

/// Estimated representation of both groups in one ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Estimate {
    pub protected: f64,
    pub other: f64,
    pub exposure: f64,
}

fn ht_sums(slots: &[Slot], patience: f64) -> (f64, f64, f64) {
    let (mut member, mut other, mut exposure) = (0.0, 0.0, 0.0);
    for (i, s) in slots.iter().enumerate() {
        if let Slot::Labeled { member: m, inclusion } = *s {
            let w = 1.0 / inclusion;
            if m {
                member += w;
                exposure += position_weight(i + 1, patience) * w;
            } else {
                other += w;
            }
        }
    }
    (member, other, exposure)
}

fn plain_sums(slots: &[Slot], patience: f64) -> (f64, f64, f64, usize) {
    let (mut member, mut other, mut exposure, mut seen) = (0.0, 0.0, 0.0, 0usize);
    for (i, s) in slots.iter().enumerate() {
        if let Slot::Labeled { member: m, .. } = *s {
            seen += 1;
            if m {
                member += 1.0;
                exposure += position_weight(i + 1, patience);
            } else {
                other += 1.0;
            }
        }
    }
    (member, other, exposure, seen)
}

/// `slots` covers the whole ranking; `k` and `patience` come from the metric.
pub(crate) fn estimate_slots(kind: EstimatorKind, slots: &[Slot], k: usize, patience: f64) -> Estimate {
    let top = &slots[..k.min(slots.len())];
    let kf = k as f64;
    match kind {
        EstimatorKind::HorvitzThompson => {
            let (m, o, e) = ht_sums(top, patience);
            Estimate {
                protected: m / kf,
                other: o / kf,
                exposure: (1.0 - patience) * e,
            }
        }
        EstimatorKind::UniformMean => {
            let (m, o, e, _) = plain_sums(top, patience);
            Estimate {
                protected: m / kf,
                other: o / kf,
                exposure: (1.0 - patience) * e / kf,
            }
        }
        EstimatorKind::UniformMeanNormalized => {
            let (m, o, e, seen) = plain_sums(top, patience);
            if seen == 0 {
                return Estimate {
                    protected: 0.0,
                    other: 0.0,
                    exposure: 0.0,
                };
            }
            let scale = top.len() as f64 / seen as f64;
            Estimate {
                protected: scale * m / kf,
                other: scale * o / kf,
                exposure: (1.0 - patience) * scale * e,
            }
        }
        EstimatorKind::Induced => {
            let induced: Vec<Slot> = slots
                .iter()
                .filter(|s| matches!(s, Slot::Labeled { .. }))
                .take(k)
                .map(|s| match *s {
                    Slot::Labeled { member, .. } => Slot::Labeled {
                        member,
                        inclusion: 1.0,
                    },
                    Slot::Unlabeled => unreachable!(),
                })
                .collect();
            let (m, o, e, _) = plain_sums(&induced, patience);
            Estimate {
                protected: m / kf,
                other: o / kf,
                exposure: (1.0 - patience) * e,
            }
        }
    }
}

/// Targets of a group pair in the order the divergence sums them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PairTargets {
    pub protected: f64,
    pub other: f64,
    /// Whether the protected label sorts first.
    pub protected_first: bool,
}

impl PairTargets {
    pub(crate) fn new(groups: &GroupPair, targets: &GroupProportions) -> Result<Self> {
        match (targets.get(&groups.protected), targets.get(&groups.other)) {
            (Some(protected), Some(other)) if targets.iter().count() == 2 => Ok(Self {
                protected,
                other,
                protected_first: groups.protected < groups.other,
            }),
            _ => Err(Error::Contract(
                "targets and observed proportions cover different groups".into(),
            )),
        }
    }
}

/// Metric value from estimated representations.
pub(crate) fn metric_value(kind: MetricKind, est: &Estimate, targets: &PairTargets) -> f64 {
    match kind {
        MetricKind::Exposure => est.exposure,
        MetricKind::Divergence(d) => {
            let a = (targets.protected, est.protected);
            let b = (targets.other, est.other);
            let pairs = if targets.protected_first { [a, b] } else { [b, a] };
            divergence_sum(d, pairs.into_iter())
        }
    }
}

fn slots_for(ranking: &Ranking, sample: &AnnotationSet, group: &GroupLabel, upto: usize) -> Vec<Slot> {
    ranking
        .top(upto)
        .iter()
        .map(|e| match sample.label(e.doc_id.as_str()) {
            None => Slot::Unlabeled,
            Some(label) => Slot::Labeled {
                member: label == group,
                inclusion: sample.inclusion(e.doc_id.as_str()).unwrap_or(1.0),
            },
        })
        .collect()
}

fn require_inclusion(sample: &AnnotationSet) -> Result<()> {
    if sample.is_sampled() || sample.is_empty() {
        Ok(())
    } else {
        Err(Error::Contract(
            "Horvitz-Thompson estimation needs inclusion probabilities for the sample".into(),
        ))
    }
}

/// `(1/k) Σ_{i ∈ S, rank(i) ≤ k} 1[label = g] / θ_i`.
pub fn ht_proportion_estimate(
    ranking: &Ranking,
    sample: &AnnotationSet,
    group: &GroupLabel,
    k: usize,
) -> Result<f64> {
    check_cutoff(k)?;
    require_inclusion(sample)?;
    let slots = slots_for(ranking, sample, group, k);
    Ok(estimate_slots(EstimatorKind::HorvitzThompson, &slots, k, 0.5).protected)
}

/// `(1-γ) Σ_{i ∈ S, rank(i) ≤ k} γ^(rank-1) 1[label = g] / θ_i`.
pub fn ht_exposure_estimate(
    ranking: &Ranking,
    sample: &AnnotationSet,
    group: &GroupLabel,
    k: usize,
    patience: f64,
) -> Result<f64> {
    check_cutoff(k)?;
    check_patience(patience)?;
    require_inclusion(sample)?;
    let slots = slots_for(ranking, sample, group, k);
    Ok(estimate_slots(EstimatorKind::HorvitzThompson, &slots, k, patience).exposure)
}

/// Plug-in divergence over estimated proportions.
pub fn estimated_divergence(
    kind: Divergence,
    targets: &GroupProportions,
    estimates: &GroupProportions,
) -> Result<f64> {
    divergence(kind, targets, estimates)
}

fn uniform_kind(form: UniformForm) -> EstimatorKind {
    match form {
        UniformForm::Verbatim => EstimatorKind::UniformMean,
        UniformForm::Normalized => EstimatorKind::UniformMeanNormalized,
    }
}

/// Simple-mean proportion estimate for a uniform sample.
pub fn uniform_proportion_estimate(
    ranking: &Ranking,
    sample: &AnnotationSet,
    group: &GroupLabel,
    k: usize,
    form: UniformForm,
) -> Result<f64> {
    check_cutoff(k)?;
    let slots = slots_for(ranking, sample, group, k);
    Ok(estimate_slots(uniform_kind(form), &slots, k, 0.5).protected)
}

/// Simple-mean exposure estimate for a uniform sample.
pub fn uniform_exposure_estimate(
    ranking: &Ranking,
    sample: &AnnotationSet,
    group: &GroupLabel,
    k: usize,
    patience: f64,
    form: UniformForm,
) -> Result<f64> {
    check_cutoff(k)?;
    check_patience(patience)?;
    let slots = slots_for(ranking, sample, group, k);
    Ok(estimate_slots(uniform_kind(form), &slots, k, patience).exposure)
}

/// The ranking restricted to labeled documents, ranks closed up.
pub fn induced_ranking(ranking: &Ranking, sample: &AnnotationSet) -> Ranking {
    ranking.filtered(|d| sample.label(d.as_str()).is_some())
}

/// Exact metric evaluated on the induced ranking. Inclusion probabilities
/// are ignored.
pub fn induced_metric(
    ranking: &Ranking,
    sample: &AnnotationSet,
    spec: &MetricSpec,
    groups: &GroupPair,
    targets: &GroupProportions,
) -> Result<f64> {
    estimate_metric(EstimatorKind::Induced, spec, ranking, sample, groups, targets)
}

/// Estimated value of `spec` for one ranking.
pub fn estimate_metric(
    kind: EstimatorKind,
    spec: &MetricSpec,
    ranking: &Ranking,
    sample: &AnnotationSet,
    groups: &GroupPair,
    targets: &GroupProportions,
) -> Result<f64> {
    spec.validate()?;
    let pair_targets = PairTargets::new(groups, targets)?;
    if kind == EstimatorKind::HorvitzThompson {
        require_inclusion(sample)?;
    }
    let upto = if kind == EstimatorKind::Induced {
        ranking.len()
    } else {
        spec.cutoff
    };
    let slots = slots_for(ranking, sample, &groups.protected, upto);
    let est = estimate_slots(kind, &slots, spec.cutoff, spec.patience);
    Ok(metric_value(spec.kind, &est, &pair_targets))
}

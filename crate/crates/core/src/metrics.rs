//! Exact group-fairness metrics over fully labeled rankings.
//!
//! A metric has three parts: the observed representation of each group in
//! the top `k` (proportion or discounted exposure), a representation target,
//! and a divergence comparing the two. Exposure is reported for the
//! protected group directly, without a target.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, GroupLabel, Qrels, Ranking};
use crate::{Error, Result};

/// Floor applied to observed proportions inside the KL divergence.
pub const KL_EPSILON: f64 = 1e-6;
pub const DEFAULT_CUTOFF: usize = 30;
pub const DEFAULT_PATIENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Divergence {
    Difference,
    AbsoluteDifference,
    SquaredDifference,
    KlDivergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricKind {
    Divergence(Divergence),
    Exposure,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Divergence(Divergence::Difference),
        MetricKind::Divergence(Divergence::AbsoluteDifference),
        MetricKind::Divergence(Divergence::SquaredDifference),
        MetricKind::Divergence(Divergence::KlDivergence),
        MetricKind::Exposure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Divergence(Divergence::Difference) => "diff",
            MetricKind::Divergence(Divergence::AbsoluteDifference) => "abs",
            MetricKind::Divergence(Divergence::SquaredDifference) => "sq",
            MetricKind::Divergence(Divergence::KlDivergence) => "kl",
            MetricKind::Exposure => "exposure",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "diff" | "difference" => MetricKind::Divergence(Divergence::Difference),
            "abs" | "absolute_difference" => MetricKind::Divergence(Divergence::AbsoluteDifference),
            "sq" | "squared_difference" => MetricKind::Divergence(Divergence::SquaredDifference),
            "kl" | "kl_divergence" => MetricKind::Divergence(Divergence::KlDivergence),
            "exposure" => MetricKind::Exposure,
            _ => {
                return Err(Error::Contract(format!(
                    "unknown metric {s:?} (expected diff, abs, sq, kl or exposure)"
                )))
            }
        })
    }
}

impl TryFrom<String> for MetricKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricKind> for String {
    fn from(k: MetricKind) -> String {
        k.name().to_string()
    }
}

/// Where the ideal representation of a group comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TargetRepr", into = "TargetRepr")]
pub enum TargetKind {
    /// Equal share for each group.
    Parity,
    /// Share of the group in the (fully labeled) corpus.
    CorpusProportion,
    /// Share of the group among the query's relevant documents.
    RelevanceProportion,
    /// The same constant for every group.
    FixedValue(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TargetRepr {
    Name(String),
    Value(f64),
}

impl TryFrom<TargetRepr> for TargetKind {
    type Error = Error;
    fn try_from(r: TargetRepr) -> Result<Self> {
        match r {
            TargetRepr::Value(v) => Ok(TargetKind::FixedValue(v)),
            TargetRepr::Name(s) => s.parse(),
        }
    }
}

impl From<TargetKind> for TargetRepr {
    fn from(t: TargetKind) -> Self {
        match t {
            TargetKind::FixedValue(v) => TargetRepr::Value(v),
            other => TargetRepr::Name(other.to_string()),
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Parity => f.write_str("parity"),
            TargetKind::CorpusProportion => f.write_str("corpus"),
            TargetKind::RelevanceProportion => f.write_str("relevance"),
            TargetKind::FixedValue(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parity" => Ok(TargetKind::Parity),
            "corpus" => Ok(TargetKind::CorpusProportion),
            "relevance" => Ok(TargetKind::RelevanceProportion),
            other => other.parse::<f64>().map(TargetKind::FixedValue).map_err(|_| {
                Error::Contract(format!(
                    "unknown target {other:?} (expected parity, corpus, relevance or a number)"
                ))
            }),
        }
    }
}

fn default_cutoff() -> usize {
    DEFAULT_CUTOFF
}

fn default_patience() -> f64 {
    DEFAULT_PATIENCE
}

fn default_target() -> TargetKind {
    TargetKind::Parity
}

/// Which metric to compute and with which parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub kind: MetricKind,
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    /// Exposure decay; ignored by proportion metrics.
    #[serde(default = "default_patience")]
    pub patience: f64,
    #[serde(default = "default_target")]
    pub target: TargetKind,
}

impl MetricSpec {
    pub fn new(kind: MetricKind) -> Self {
        Self {
            kind,
            cutoff: DEFAULT_CUTOFF,
            patience: DEFAULT_PATIENCE,
            target: TargetKind::Parity,
        }
    }

    pub fn with_cutoff(mut self, k: usize) -> Self {
        self.cutoff = k;
        self
    }

    pub fn with_patience(mut self, patience: f64) -> Self {
        self.patience = patience;
        self
    }

    pub fn with_target(mut self, target: TargetKind) -> Self {
        self.target = target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoff == 0 {
            return Err(Error::Contract("metric cutoff k must be positive".into()));
        }
        check_patience(self.patience)?;
        if let TargetKind::FixedValue(v) = self.target {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Contract(format!("fixed target {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Short report label, e.g. `abs` or `sq@k10/corpus`.
    pub fn label(&self) -> String {
        let mut label = self.kind.name().to_string();
        let mut extras = Vec::new();
        if self.cutoff != DEFAULT_CUTOFF {
            extras.push(format!("k{}", self.cutoff));
        }
        match self.kind {
            MetricKind::Exposure => {
                if self.patience != DEFAULT_PATIENCE {
                    extras.push(format!("g{}", self.patience));
                }
            }
            MetricKind::Divergence(_) => {
                if self.target != TargetKind::Parity {
                    extras.push(self.target.to_string());
                }
            }
        }
        if !extras.is_empty() {
            label.push('@');
            label.push_str(&extras.join("/"));
        }
        label
    }
}

pub(crate) fn check_patience(patience: f64) -> Result<()> {
    if patience > 0.0 && patience < 1.0 {
        Ok(())
    } else {
        Err(Error::Contract(format!("patience {patience} outside (0, 1)")))
    }
}

pub(crate) fn check_cutoff(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::Contract("cutoff k must be positive".into()))
    } else {
        Ok(())
    }
}

/// The two groups of a collection; `protected` is the group whose exposure
/// is reported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPair {
    pub protected: GroupLabel,
    pub other: GroupLabel,
}

impl GroupPair {
    pub fn new(protected: GroupLabel, other: GroupLabel) -> Result<Self> {
        if protected == other {
            return Err(Error::Contract(format!(
                "group pair needs two distinct labels, got {protected} twice"
            )));
        }
        Ok(Self { protected, other })
    }

    pub fn both(&self) -> [&GroupLabel; 2] {
        [&self.protected, &self.other]
    }
}

/// Per-group values (observed or target representation).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupProportions(BTreeMap<GroupLabel, f64>);

impl GroupProportions {
    pub fn new(values: impl IntoIterator<Item = (GroupLabel, f64)>) -> Self {
        Self(values.into_iter().collect())
    }

    pub fn get(&self, group: &GroupLabel) -> Option<f64> {
        self.0.get(group).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GroupLabel, f64)> {
        self.0.iter().map(|(g, v)| (g, *v))
    }
}

/// `|top-k ∩ D_g| / k`. Positions past the end of a short ranking count as
/// non-members.
pub fn group_proportion(
    ranking: &Ranking,
    labels: &AnnotationSet,
    group: &GroupLabel,
    k: usize,
) -> Result<f64> {
    check_cutoff(k)?;
    let mut hits = 0usize;
    for e in ranking.top(k) {
        let label = labels
            .label(e.doc_id.as_str())
            .ok_or_else(|| Error::MissingLabel(e.doc_id.to_string()))?;
        if label == group {
            hits += 1;
        }
    }
    Ok(hits as f64 / k as f64)
}

/// `(1 - γ) Σ_{i ≤ min(k, R)} γ^(i-1) 1[π_i ∈ D_g]`.
pub fn group_exposure(
    ranking: &Ranking,
    labels: &AnnotationSet,
    group: &GroupLabel,
    k: usize,
    patience: f64,
) -> Result<f64> {
    check_cutoff(k)?;
    check_patience(patience)?;
    let mut sum = 0.0;
    for e in ranking.top(k) {
        let label = labels
            .label(e.doc_id.as_str())
            .ok_or_else(|| Error::MissingLabel(e.doc_id.to_string()))?;
        if label == group {
            sum += position_weight(e.rank, patience);
        }
    }
    Ok((1.0 - patience) * sum)
}

/// `γ^(rank - 1)`.
pub(crate) fn position_weight(rank: usize, patience: f64) -> f64 {
    patience.powi(rank as i32 - 1)
}

/// The ideal representation of `group` for `query_id`.
pub fn representation_target(
    spec: &MetricSpec,
    labels: &AnnotationSet,
    qrels: &Qrels,
    query_id: &str,
    group: &GroupLabel,
) -> Result<f64> {
    match spec.target {
        TargetKind::Parity => Ok(0.5),
        TargetKind::FixedValue(v) => Ok(v),
        TargetKind::CorpusProportion => {
            if labels.is_sampled() || labels.is_empty() {
                return Err(Error::Contract(
                    "corpus-proportion target needs a complete ground-truth annotation set".into(),
                ));
            }
            Ok(labels.count(group) as f64 / labels.len() as f64)
        }
        TargetKind::RelevanceProportion => {
            let mut relevant = 0usize;
            let mut in_group = 0usize;
            for d in qrels.relevant(query_id) {
                let label = labels
                    .label(d.as_str())
                    .ok_or_else(|| Error::MissingLabel(d.to_string()))?;
                relevant += 1;
                if label == group {
                    in_group += 1;
                }
            }
            if relevant == 0 {
                return Err(Error::UndefinedTarget(format!(
                    "query {query_id} has no relevant documents"
                )));
            }
            Ok(in_group as f64 / relevant as f64)
        }
    }
}

/// Targets for both groups of `groups`.
pub fn representation_targets(
    spec: &MetricSpec,
    labels: &AnnotationSet,
    qrels: &Qrels,
    query_id: &str,
    groups: &GroupPair,
) -> Result<GroupProportions> {
    let mut out = BTreeMap::new();
    for g in groups.both() {
        out.insert(g.clone(), representation_target(spec, labels, qrels, query_id, g)?);
    }
    Ok(GroupProportions(out))
}

/// Compares target and observed representation.
///
/// KL uses the natural log; observed values are floored at [`KL_EPSILON`]
/// and groups with a zero target contribute nothing.
pub fn divergence(
    kind: Divergence,
    targets: &GroupProportions,
    observed: &GroupProportions,
) -> Result<f64> {
    if targets.0.len() != observed.0.len() || targets.0.keys().ne(observed.0.keys()) {
        return Err(Error::Contract(
            "targets and observed proportions cover different groups".into(),
        ));
    }
    Ok(divergence_sum(
        kind,
        targets.0.values().copied().zip(observed.0.values().copied()),
    ))
}

/// Sum of per-group divergence terms over `(target, observed)` pairs.
pub(crate) fn divergence_sum(kind: Divergence, pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    match kind {
        Divergence::Difference => pairs.map(|(t, o)| t - o).sum(),
        Divergence::AbsoluteDifference => pairs.map(|(t, o)| (t - o).abs()).sum(),
        Divergence::SquaredDifference => pairs.map(|(t, o)| (t - o) * (t - o)).sum(),
        Divergence::KlDivergence => pairs.map(|(t, o)| kl_term(t, o)).sum(),
    }
}

fn kl_term(target: f64, observed: f64) -> f64 {
    if target == 0.0 {
        0.0
    } else {
        target * (target / observed.max(KL_EPSILON)).ln()
    }
}

/// Exact value of `spec` on a ranking whose top `k` is fully labeled.
pub fn exact_metric(
    spec: &MetricSpec,
    ranking: &Ranking,
    labels: &AnnotationSet,
    groups: &GroupPair,
    targets: &GroupProportions,
) -> Result<f64> {
    match spec.kind {
        MetricKind::Exposure => {
            group_exposure(ranking, labels, &groups.protected, spec.cutoff, spec.patience)
        }
        MetricKind::Divergence(d) => {
            let mut observed = BTreeMap::new();
            for g in groups.both() {
                observed.insert(g.clone(), group_proportion(ranking, labels, g, spec.cutoff)?);
            }
            divergence(d, targets, &GroupProportions(observed))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DocId;
    use proptest::prelude::*;

    fn label(s: &str) -> GroupLabel {
        GroupLabel::new(s).unwrap()
    }

    /// Ranking d1..dn in order with the given group letters.
    fn fixture(groups: &[&str]) -> (Ranking, AnnotationSet) {
        let docs: Vec<_> = (0..groups.len())
            .map(|i| (DocId::new(&format!("d{i:03}")).unwrap(), (groups.len() - i) as f64))
            .collect();
        let labels = AnnotationSet::ground_truth(
            docs.iter().zip(groups).map(|((d, _), g)| (d.clone(), label(g))),
        )
        .unwrap();
        (Ranking::from_scored("q", "s", docs).unwrap(), labels)
    }

    fn props(a: f64, b: f64) -> GroupProportions {
        GroupProportions::new([(label("A"), a), (label("B"), b)])
    }

    #[test]
    fn proportion_examples() {
        let (r, l) = fixture(&["A", "B", "A", "A"]);
        assert_eq!(group_proportion(&r, &l, &label("A"), 4).unwrap(), 0.75);
        let (r, l) = fixture(&["A", "A"]);
        assert_eq!(group_proportion(&r, &l, &label("A"), 4).unwrap(), 0.5);
        let (r, l) = fixture(&["B", "B", "A"]);
        assert_eq!(group_proportion(&r, &l, &label("A"), 2).unwrap(), 0.0);
    }

    #[test]
    fn proportion_needs_labels_in_top_k() {
        let (r, _) = fixture(&["A", "B", "A"]);
        let partial =
            AnnotationSet::ground_truth([(DocId::new("d000").unwrap(), label("A"))]).unwrap();
        match group_proportion(&r, &partial, &label("A"), 2) {
            Err(Error::MissingLabel(d)) => assert_eq!(d, "d001"),
            other => panic!("{other:?}"),
        }
        // Labels below the cutoff are not needed.
        assert_eq!(group_proportion(&r, &partial, &label("A"), 1).unwrap(), 1.0);
    }

    #[test]
    fn exposure_examples() {
        let (r, l) = fixture(&["A", "B", "A"]);
        let e = group_exposure(&r, &l, &label("A"), 3, 0.5).unwrap();
        assert!((e - 0.625).abs() < 1e-15);
        let (r, l) = fixture(&["B", "B", "B"]);
        assert_eq!(group_exposure(&r, &l, &label("A"), 3, 0.5).unwrap(), 0.0);
        let (r, l) = fixture(&["A"; 60]);
        let e = group_exposure(&r, &l, &label("A"), 60, 0.5).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        assert!(group_exposure(&r, &l, &label("A"), 3, 1.0).is_err());
    }

    #[test]
    fn target_examples() {
        let spec = MetricSpec::new(MetricKind::Divergence(Divergence::AbsoluteDifference));
        let labels = AnnotationSet::ground_truth((0..10).map(|i| {
            (
                DocId::new(&format!("d{i}")).unwrap(),
                label(if i < 3 { "A" } else { "B" }),
            )
        }))
        .unwrap();
        let mut qrels = Qrels::new();
        for d in ["d0", "d1", "d5"] {
            qrels.insert("q1", DocId::new(d).unwrap(), 1);
        }
        qrels.insert("q1", DocId::new("d6").unwrap(), 0);
        let a = label("A");
        assert_eq!(representation_target(&spec, &labels, &qrels, "q1", &a).unwrap(), 0.5);
        let corpus = spec.with_target(TargetKind::CorpusProportion);
        assert!((representation_target(&corpus, &labels, &qrels, "q1", &a).unwrap() - 0.3).abs() < 1e-15);
        let rel = spec.with_target(TargetKind::RelevanceProportion);
        assert!((representation_target(&rel, &labels, &qrels, "q1", &a).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            representation_target(&rel, &labels, &qrels, "q2", &a),
            Err(Error::UndefinedTarget(_))
        ));
        let fixed = spec.with_target(TargetKind::FixedValue(0.4));
        assert_eq!(representation_target(&fixed, &labels, &qrels, "q1", &a).unwrap(), 0.4);
    }

    #[test]
    fn divergence_examples() {
        let t = props(0.5, 0.5);
        for d in [
            Divergence::Difference,
            Divergence::AbsoluteDifference,
            Divergence::SquaredDifference,
            Divergence::KlDivergence,
        ] {
            assert_eq!(divergence(d, &t, &t).unwrap(), 0.0);
        }
        let o = props(0.25, 0.75);
        assert_eq!(divergence(Divergence::AbsoluteDifference, &t, &o).unwrap(), 0.5);
        assert_eq!(divergence(Divergence::SquaredDifference, &t, &o).unwrap(), 0.125);
        assert_eq!(divergence(Divergence::Difference, &t, &o).unwrap(), 0.0);
        let kl = divergence(Divergence::KlDivergence, &t, &o).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.1438).abs() < 1e-4);
    }

    #[test]
    fn divergence_rejects_mismatched_groups() {
        let t = props(0.5, 0.5);
        let o = GroupProportions::new([(label("A"), 0.5), (label("C"), 0.5)]);
        assert!(matches!(
            divergence(Divergence::AbsoluteDifference, &t, &o),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn kl_clamps_zero_observed() {
        let kl = divergence(Divergence::KlDivergence, &props(0.5, 0.5), &props(0.0, 1.0)).unwrap();
        let expected = 0.5 * (0.5 / KL_EPSILON).ln() + 0.5 * 0.5f64.ln();
        assert!((kl - expected).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let s = MetricSpec::new(MetricKind::Exposure);
        assert!(s.validate().is_ok());
        assert!(s.with_patience(0.0).validate().is_err());
        assert!(s.with_cutoff(0).validate().is_err());
        assert!(s.with_target(TargetKind::FixedValue(1.5)).validate().is_err());
        assert_eq!(s.label(), "exposure");
        let sq = MetricSpec::new("sq".parse().unwrap()).with_cutoff(10);
        assert_eq!(sq.label(), "sq@k10");
    }

    fn group_vec() -> impl Strategy<Value = Vec<bool>> {
        prop::collection::vec(any::<bool>(), 1..60)
    }

    fn as_letters(v: &[bool]) -> Vec<&'static str> {
        v.iter().map(|&a| if a { "A" } else { "B" }).collect()
    }

    proptest! {
        #[test]
        fn proportions_sum_to_one_when_full(groups in group_vec(), k in 1usize..60) {
            prop_assume!(groups.len() >= k);
            let (r, l) = fixture(&as_letters(&groups));
            let a = group_proportion(&r, &l, &label("A"), k).unwrap();
            let b = group_proportion(&r, &l, &label("B"), k).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn exposure_bounded_by_geometric_tail(groups in group_vec(), k in 1usize..60, p in 0.01f64..0.99) {
            let (r, l) = fixture(&as_letters(&groups));
            for g in ["A", "B"] {
                let e = group_exposure(&r, &l, &label(g), k, p).unwrap();
                prop_assert!(e >= 0.0);
                prop_assert!(e <= 1.0 - p.powi(k as i32) + 1e-12);
            }
        }

        #[test]
        fn exposure_monotone_under_promotion(groups in group_vec(), p in 0.01f64..0.99, k in 1usize..60, from in 0usize..60, to in 0usize..60) {
            let n = groups.len();
            let (from, to) = (from % n, to % n);
            prop_assume!(to < from);
            let mut groups = groups;
            groups[from] = true;
            let (r, l) = fixture(&as_letters(&groups));
            let before = group_exposure(&r, &l, &label("A"), k, p).unwrap();
            let moved = groups.remove(from);
            groups.insert(to, moved);
            let (r, l) = fixture(&as_letters(&groups));
            let after = group_exposure(&r, &l, &label("A"), k, p).unwrap();
            prop_assert!(after >= before - 1e-12);
        }

        #[test]
        fn divergences_nonnegative_and_zero_at_target(t in 0.0f64..1.0, a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let targets = props(t, 1.0 - t);
            let observed = props(a, b);
            for d in [Divergence::AbsoluteDifference, Divergence::SquaredDifference] {
                prop_assert!(divergence(d, &targets, &observed).unwrap() >= 0.0);
                prop_assert_eq!(divergence(d, &targets, &targets).unwrap(), 0.0);
            }
            // KL is non-negative whenever observed is a distribution.
            let dist = props(a / (a + b + 1e-9), 1.0 - a / (a + b + 1e-9));
            prop_assert!(divergence(Divergence::KlDivergence, &targets, &dist).unwrap() >= -1e-12);
            prop_assert!(divergence(Divergence::KlDivergence, &targets, &targets).unwrap().abs() < 1e-12);
            // Difference vanishes when totals agree.
            let shifted = props(t + 0.1, 1.0 - t - 0.1);
            prop_assert!(divergence(Divergence::Difference, &targets, &shifted).unwrap().abs() < 1e-12);
        }
    }
}

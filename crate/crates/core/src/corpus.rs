//! Test-collection data model and the three line-oriented text formats.
//!
//! * run files: `query_id iteration doc_id rank score system_id`
//! * qrels: `query_id iteration doc_id grade`
//! * annotations: `doc_id group_label [inclusion_prob]`
//!
//! Blank lines and lines starting with `#` are ignored by every parser.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::{Error, Result};

fn check_token(kind: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.chars().any(char::is_whitespace) {
        return Err(Error::Data(format!(
            "{kind} must be a non-empty token without whitespace, got {value:?}"
        )));
    }
    Ok(())
}

macro_rules! token_type {
    ($(#[$meta:meta])* $name:ident, $kind:literal) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(value: &str) -> Result<Self> {
                check_token($kind, value)?;
                Ok(Self(Arc::from(value)))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:?}", &*self.0)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

token_type!(
    /// Opaque document identifier. Cloning is cheap.
    DocId,
    "document id"
);
token_type!(
    /// One of the two group labels of a collection.
    GroupLabel,
    "group label"
);

/// One retrieved document.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    pub doc_id: DocId,
    /// 1-based position.
    pub rank: usize,
    pub score: f64,
}

/// A single system's ordered result list for one query.
///
/// Entries are ordered by descending score with ties broken by ascending
/// document id, and ranks are always exactly `1..=len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    query_id: String,
    system_id: String,
    entries: Vec<RankedDoc>,
}

impl Ranking {
    /// Builds a ranking from unordered `(doc, score)` pairs.
    pub fn from_scored(
        query_id: &str,
        system_id: &str,
        mut docs: Vec<(DocId, f64)>,
    ) -> Result<Self> {
        check_token("query id", query_id)?;
        check_token("system id", system_id)?;
        if let Some((d, _)) = docs.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite score for {d} in ({system_id}, {query_id})"
            )));
        }
        let mut seen = BTreeSet::new();
        for (d, _) in &docs {
            if !seen.insert(d) {
                return Err(Error::Data(format!(
                    "duplicate document {d} in ranking ({system_id}, {query_id})"
                )));
            }
        }
        docs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let entries = docs
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RankedDoc {
                doc_id,
                rank: i + 1,
                score,
            })
            .collect();
        Ok(Self {
            query_id: query_id.to_string(),
            system_id: system_id.to_string(),
            entries,
        })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn system_id(&self) -> &str {
        &self.system_id
    }

    pub fn entries(&self) -> &[RankedDoc] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `min(k, len)` entries.
    pub fn top(&self, k: usize) -> &[RankedDoc] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// Keeps only the entries for which `keep` holds, re-numbering ranks.
    pub fn filtered(&self, mut keep: impl FnMut(&DocId) -> bool) -> Ranking {
        let entries = self
            .entries
            .iter()
            .filter(|e| keep(&e.doc_id))
            .enumerate()
            .map(|(i, e)| RankedDoc {
                doc_id: e.doc_id.clone(),
                rank: i + 1,
                score: e.score,
            })
            .collect();
        Ranking {
            query_id: self.query_id.clone(),
            system_id: self.system_id.clone(),
            entries,
        }
    }
}

/// Relevance judgments keyed by query then document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<DocId, u32>>,
    duplicates: usize,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment; a repeated pair overwrites and bumps the
    /// duplicate counter.
    pub fn insert(&mut self, query_id: &str, doc_id: DocId, grade: u32) {
        let per_query = self.judgments.entry(query_id.to_string()).or_default();
        if per_query.insert(doc_id, grade).is_some() {
            self.duplicates += 1;
        }
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    /// Documents with a positive grade for the query.
    pub fn relevant<'a>(&'a self, query_id: &str) -> impl Iterator<Item = &'a DocId> + 'a {
        self.judgments
            .get(query_id)
            .into_iter()
            .flat_map(|m| m.iter().filter(|(_, g)| **g > 0).map(|(d, _)| d))
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DocId, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(d, g)| (q.as_str(), d, *g)))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of overwritten duplicate judgments seen while building.
    pub fn duplicate_warnings(&self) -> usize {
        self.duplicates
    }
}

/// Group labels for some documents, optionally with the inclusion
/// probability of each labeled document in a sample.
///
/// Ground-truth sets carry no inclusion probabilities (they are implicitly
/// 1); sampled sets carry one for every labeled document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    labels: BTreeMap<DocId, GroupLabel>,
    inclusion: Option<BTreeMap<DocId, f64>>,
}

impl AnnotationSet {
    /// A complete (ground-truth) annotation set.
    pub fn ground_truth(labels: impl IntoIterator<Item = (DocId, GroupLabel)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (d, g) in labels {
            if map.insert(d.clone(), g).is_some() {
                return Err(Error::Data(format!("document {d} annotated twice")));
            }
        }
        check_label_count(map.values())?;
        Ok(Self {
            labels: map,
            inclusion: None,
        })
    }

    /// A sampled set: every entry carries its inclusion probability in (0, 1].
    pub fn sampled(entries: impl IntoIterator<Item = (DocId, GroupLabel, f64)>) -> Result<Self> {
        let mut labels = BTreeMap::new();
        let mut inclusion = BTreeMap::new();
        for (d, g, theta) in entries {
            check_inclusion(theta)
                .map_err(|m| Error::Data(format!("document {d}: {m}")))?;
            if labels.insert(d.clone(), g).is_some() {
                return Err(Error::Data(format!("document {d} annotated twice")));
            }
            inclusion.insert(d, theta);
        }
        check_label_count(labels.values())?;
        Ok(Self {
            labels,
            inclusion: Some(inclusion),
        })
    }

    pub fn label(&self, doc_id: &str) -> Option<&GroupLabel> {
        self.labels.get(doc_id)
    }

    /// Inclusion probability of a labeled document; `None` for ground-truth
    /// sets and for unlabeled documents.
    pub fn inclusion(&self, doc_id: &str) -> Option<f64> {
        self.inclusion.as_ref()?.get(doc_id).copied()
    }

    pub fn is_sampled(&self) -> bool {
        self.inclusion.is_some()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Distinct labels present, in token order.
    pub fn groups(&self) -> Vec<GroupLabel> {
        self.labels
            .values()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .cloned()
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DocId, &GroupLabel)> {
        self.labels.iter()
    }

    /// Number of documents labeled with `group`.
    pub fn count(&self, group: &GroupLabel) -> usize {
        self.labels.values().filter(|g| *g == group).count()
    }
}

fn check_inclusion(theta: f64) -> std::result::Result<(), String> {
    if theta > 0.0 && theta <= 1.0 {
        Ok(())
    } else {
        Err(format!("inclusion probability {theta} outside (0, 1]"))
    }
}

fn check_label_count<'a>(labels: impl Iterator<Item = &'a GroupLabel>) -> Result<()> {
    let distinct: BTreeSet<_> = labels.collect();
    if distinct.len() > 2 {
        let names: Vec<_> = distinct.iter().map(|g| g.as_str()).collect();
        return Err(Error::Data(format!(
            "annotations use more than two group labels: {}",
            names.join(", ")
        )));
    }
    Ok(())
}

/// Rankings keyed by `(system_id, query_id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSet {
    rankings: BTreeMap<(String, String), Ranking>,
}

impl RunSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ranking: Ranking) -> Result<()> {
        let key = (ranking.system_id.clone(), ranking.query_id.clone());
        if self.rankings.contains_key(&key) {
            return Err(Error::Data(format!(
                "duplicate ranking for system {} query {}",
                key.0, key.1
            )));
        }
        self.rankings.insert(key, ranking);
        Ok(())
    }

    pub fn get(&self, system_id: &str, query_id: &str) -> Option<&Ranking> {
        self.rankings
            .get(&(system_id.to_string(), query_id.to_string()))
    }

    /// All rankings ordered by system then query.
    pub fn iter(&self) -> impl Iterator<Item = &Ranking> {
        self.rankings.values()
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    pub fn systems(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.rankings.keys().map(|(s, _)| s.as_str()).collect();
        set.into_iter().collect()
    }

    pub fn queries(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.rankings.keys().map(|(_, q)| q.as_str()).collect();
        set.into_iter().collect()
    }

    /// Distinct retrieved documents, in id order.
    pub fn documents(&self) -> BTreeSet<&DocId> {
        self.iter()
            .flat_map(|r| r.entries.iter().map(|e| &e.doc_id))
            .collect()
    }
}

/// Yields `(line_number, fields)` for every non-blank, non-comment line.
fn data_lines<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, Vec<String>)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(Error::Io(e))),
            Ok(line) => {
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    None
                } else {
                    Some(Ok((
                        i + 1,
                        trimmed.split_whitespace().map(str::to_string).collect(),
                    )))
                }
            }
        })
}

fn parse_field<T: std::str::FromStr>(line: usize, what: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} {raw:?}")))
}

fn token<T>(line: usize, ctor: fn(&str) -> Result<T>, raw: &str) -> Result<T> {
    ctor(raw).map_err(|e| Error::parse(line, e.to_string()))
}

/// Parses a TREC run file. Entries of each `(system, query)` are re-sorted by
/// descending score (ties by doc id) and re-ranked from 1; the input rank
/// column is only checked for being numeric.
pub fn parse_run_file<R: BufRead>(reader: R) -> Result<RunSet> {
    let mut grouped: BTreeMap<(String, String), Vec<(DocId, f64)>> = BTreeMap::new();
    let mut seen: BTreeSet<(String, String, DocId)> = BTreeSet::new();
    for item in data_lines(reader) {
        let (line, fields) = item?;
        if fields.len() != 6 {
            return Err(Error::parse(
                line,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        }
        let query = fields[0].clone();
        let doc = token(line, DocId::new, &fields[2])?;
        let _rank: u64 = parse_field(line, "rank", &fields[3])?;
        let score: f64 = parse_field(line, "score", &fields[4])?;
        if !score.is_finite() {
            return Err(Error::parse(line, format!("non-finite score {}", fields[4])));
        }
        let system = fields[5].clone();
        if !seen.insert((system.clone(), query.clone(), doc.clone())) {
            return Err(Error::Data(format!(
                "line {line}: duplicate document {doc} for system {system} query {query}"
            )));
        }
        grouped.entry((system, query)).or_default().push((doc, score));
    }
    let mut runs = RunSet::new();
    for ((system, query), docs) in grouped {
        runs.insert(Ranking::from_scored(&query, &system, docs)?)?;
    }
    Ok(runs)
}

/// Parses a qrels file. Later duplicates overwrite earlier ones; the count
/// is available from [`Qrels::duplicate_warnings`].
pub fn parse_qrels<R: BufRead>(reader: R) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for item in data_lines(reader) {
        let (line, fields) = item?;
        if fields.len() != 4 {
            return Err(Error::parse(
                line,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let doc = token(line, DocId::new, &fields[2])?;
        let grade: u32 = parse_field(line, "grade", &fields[3])?;
        let before = qrels.duplicates;
        qrels.insert(&fields[0], doc, grade);
        if qrels.duplicates > before {
            log::warn!("qrels line {line}: duplicate judgment overwrites earlier value");
        }
    }
    Ok(qrels)
}

/// Parses an annotation file. With a third column on every line the result
/// is a sampled set; with none it is a ground-truth set.
pub fn parse_annotations<R: BufRead>(reader: R) -> Result<AnnotationSet> {
    let mut rows = Vec::new();
    let mut with_theta: Option<bool> = None;
    for item in data_lines(reader) {
        let (line, fields) = item?;
        let has_theta = match fields.len() {
            2 => false,
            3 => true,
            n => {
                return Err(Error::parse(line, format!("expected 2 or 3 fields, found {n}")));
            }
        };
        match with_theta {
            None => with_theta = Some(has_theta),
            Some(prev) if prev != has_theta => {
                return Err(Error::Data(format!(
                    "line {line}: inclusion column must be present on all lines or none"
                )));
            }
            _ => {}
        }
        let doc = token(line, DocId::new, &fields[0])?;
        let label = token(line, GroupLabel::new, &fields[1])?;
        let theta = if has_theta {
            let theta: f64 = parse_field(line, "inclusion probability", &fields[2])?;
            check_inclusion(theta).map_err(|m| Error::Data(format!("line {line}: {m}")))?;
            Some(theta)
        } else {
            None
        };
        rows.push((doc, label, theta));
    }
    if with_theta == Some(true) {
        AnnotationSet::sampled(rows.into_iter().map(|(d, g, t)| (d, g, t.unwrap_or(1.0))))
    } else {
        AnnotationSet::ground_truth(rows.into_iter().map(|(d, g, _)| (d, g)))
    }
}

pub fn write_run_file<W: Write>(runs: &RunSet, mut out: W) -> Result<()> {
    for r in runs.iter() {
        for e in &r.entries {
            writeln!(
                out,
                "{} Q0 {} {} {} {}",
                r.query_id, e.doc_id, e.rank, e.score, r.system_id
            )?;
        }
    }
    Ok(())
}

pub fn write_qrels<W: Write>(qrels: &Qrels, mut out: W) -> Result<()> {
    for (q, d, g) in qrels.iter() {
        writeln!(out, "{q} 0 {d} {g}")?;
    }
    Ok(())
}

/// Writes two columns for ground-truth sets and three (with the inclusion
/// probability) for sampled sets.
pub fn write_annotations<W: Write>(labels: &AnnotationSet, mut out: W) -> Result<()> {
    for (d, g) in labels.iter() {
        match labels.inclusion(d.as_str()) {
            Some(theta) => writeln!(out, "{d} {g} {theta}")?,
            None => writeln!(out, "{d} {g}")?,
        }
    }
    Ok(())
}

//! Ranking metrics: average precision, precision@k, recall@k, and mAP.
//!
//! AP here is non-interpolated: the mean of P@k over the ranks `k` that hold
//! a relevant item, divided by the number of relevant items present in the
//! ranking. Queries with no relevant item are skipped rather than scored 0.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Relevance judgments: query id to the set of relevant item ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one judgment. Relevance 0 registers the query with no
    /// relevant item; relevance 1 adds the item. Duplicates collapse.
    pub fn insert(&mut self, query_id: &str, item_id: &str, relevant: bool) -> Result<()> {
        if query_id.is_empty() {
            return Err(Error::InvalidArgument("qrels query id is empty"));
        }
        let set = self.judgments.entry(query_id.to_string()).or_default();
        if relevant {
            set.insert(item_id.to_string());
        }
        Ok(())
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.judgments.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.judgments.iter()
    }

    /// Parses `query_id<TAB>item_id<TAB>relevance` lines. Blank lines are
    /// skipped. On failure returns the 1-based line number.
    pub fn parse_tsv(input: &str) -> core::result::Result<Self, usize> {
        let mut qrels = Self::new();
        for (no, line) in input.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(q), Some(item), Some(rel), None) = (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(no + 1);
            };
            let relevant = match rel.trim() {
                "0" => false,
                "1" => true,
                _ => return Err(no + 1),
            };
            qrels.insert(q, item, relevant).map_err(|_| no + 1)?;
        }
        Ok(qrels)
    }
}

fn check_unique<S: AsRef<str>>(ranking: &[S]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ranking {
        if !seen.insert(id.as_ref()) {
            return Err(Error::InvalidArgument("ranking contains a duplicate id"));
        }
    }
    Ok(())
}

fn hits<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> usize {
    ranking.iter().take(k).filter(|id| relevant.contains(id.as_ref())).count()
}

pub fn average_precision<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>) -> Result<f64> {
    check_unique(ranking)?;
    let mut found = 0usize;
    let mut sum = 0.0f64;
    for (k, id) in ranking.iter().enumerate() {
        if relevant.contains(id.as_ref()) {
            found += 1;
            sum += found as f64 / (k + 1) as f64;
        }
    }
    if found == 0 {
        return Err(Error::NoRelevant);
    }
    Ok(sum / found as f64)
}

/// Hits in the first `k` positions divided by `k`, even when the ranking is
/// shorter than `k`.
pub fn precision_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1"));
    }
    Ok(hits(ranking, relevant, k) as f64 / k as f64)
}

pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1"));
    }
    if relevant.is_empty() {
        return Err(Error::NoRelevant);
    }
    Ok(hits(ranking, relevant, k) as f64 / relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QueryMetrics {
    #[cfg_attr(feature = "serde", serde(rename = "AP"))]
    pub ap: f64,
    #[cfg_attr(feature = "serde", serde(rename = "P_at"))]
    pub p_at: BTreeMap<usize, f64>,
    #[cfg_attr(feature = "serde", serde(rename = "R_at"))]
    pub r_at: BTreeMap<usize, f64>,
    /// Relevant items present in the ranking.
    #[cfg_attr(feature = "serde", serde(rename = "R"))]
    pub relevant: usize,
}

impl QueryMetrics {
    /// Scores a full-index ranking. Only relevant ids that occur in the
    /// ranking count towards `R`. Returns `None` when `R == 0`.
    pub fn score<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, ks: &[usize]) -> Result<Option<Self>> {
        let present: BTreeSet<String> = ranking
            .iter()
            .map(|id| id.as_ref())
            .filter(|id| relevant.contains(*id))
            .map(String::from)
            .collect();
        let ap = match average_precision(ranking, &present) {
            Ok(ap) => ap,
            Err(Error::NoRelevant) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut p_at = BTreeMap::new();
        let mut r_at = BTreeMap::new();
        for &k in ks {
            p_at.insert(k, precision_at_k(ranking, &present, k)?);
            r_at.insert(k, recall_at_k(ranking, &present, k)?);
        }
        Ok(Some(Self { ap, p_at, r_at, relevant: present.len() }))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    /// Mean AP over scored queries; absent when none were scored.
    #[cfg_attr(feature = "serde", serde(rename = "mAP"))]
    pub map: Option<f64>,
    pub skipped: Vec<String>,
}

impl EvalReport {
    /// Assembles a report from per-query outcomes, `None` marking a skip.
    pub fn from_outcomes<I>(outcomes: I) -> Self
    where
        I: IntoIterator<Item = (String, Option<QueryMetrics>)>,
    {
        let mut report = Self::default();
        for (qid, metrics) in outcomes {
            match metrics {
                Some(m) => {
                    report.per_query.insert(qid, m);
                }
                None => report.skipped.push(qid),
            }
        }
        report.skipped.sort();
        report.skipped.dedup();
        report.map = mean_average_precision(report.per_query.values().map(|m| m.ap));
        report
    }
}

pub fn mean_average_precision<I: IntoIterator<Item = f64>>(aps: I) -> Option<f64> {
    let (sum, n) = aps.into_iter().fold((0.0f64, 0usize), |(s, n), ap| (s + ap, n + 1));
    (n > 0).then(|| sum / n as f64)
}

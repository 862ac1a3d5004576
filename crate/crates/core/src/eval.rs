//! Retrieval metrics over ranked candidate ids.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Query id -> relevant candidate ids, plus optional class labels per query
/// for class-wise (macro) averaging.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelevanceMap {
    relevant: BTreeMap<String, BTreeSet<String>>,
    labels: BTreeMap<String, String>,
}

impl RelevanceMap {
    pub fn new(relevant: BTreeMap<String, BTreeSet<String>>) -> Result<Self> {
        if relevant.values().any(BTreeSet::is_empty) {
            return Err(Error::EmptyRelevance);
        }
        Ok(Self {
            relevant,
            labels: BTreeMap::new(),
        })
    }

    pub fn with_labels(mut self, labels: BTreeMap<String, String>) -> Self {
        self.labels = labels;
        self
    }

    pub fn relevant(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.relevant.get(query)
    }

    pub fn label(&self, query: &str) -> Option<&str> {
        self.labels.get(query).map(String::as_str)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.relevant.keys().map(String::as_str)
    }

    /// All ids that appear as relevant candidates for some query.
    pub fn candidates(&self) -> BTreeSet<&str> {
        self.relevant
            .values()
            .flat_map(|s| s.iter().map(String::as_str))
            .collect()
    }
}

fn hits<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> usize {
    ranked
        .iter()
        .take(k)
        .filter(|id| relevant.contains(id.as_ref()))
        .count()
}

/// `|relevant ∩ top-k| / min(k, |relevant|)`.
pub fn recall_at_k<S: AsRef<str>>(
    ranked: &[S],
    relevant: &BTreeSet<String>,
    k: usize,
) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevance);
    }
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    Ok(hits(ranked, relevant, k) as f64 / k.min(relevant.len()) as f64)
}

/// `|relevant ∩ top-k| / k`.
pub fn precision_at_k<S: AsRef<str>>(
    ranked: &[S],
    relevant: &BTreeSet<String>,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    Ok(hits(ranked, relevant, k) as f64 / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Unweighted mean over queries.
    Micro,
    /// Mean over classes of the per-class mean.
    Macro,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Micro => "micro",
            Aggregation::Macro => "macro",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetric {
    pub query_id: String,
    pub label: Option<String>,
    pub value: f64,
}

pub fn aggregate(per_query: &[QueryMetric], mode: Aggregation) -> Result<f64> {
    if per_query.is_empty() {
        return Err(Error::InvalidInput(
            "no per-query values to aggregate".into(),
        ));
    }
    match mode {
        Aggregation::Micro => {
            Ok(per_query.iter().map(|q| q.value).sum::<f64>() / per_query.len() as f64)
        }
        Aggregation::Macro => {
            let mut classes: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            for q in per_query {
                let label = q
                    .label
                    .as_deref()
                    .ok_or_else(|| Error::MissingLabels(q.query_id.clone()))?;
                let e = classes.entry(label).or_default();
                e.0 += q.value;
                e.1 += 1;
            }
            let means: f64 = classes.values().map(|(s, n)| s / *n as f64).sum();
            Ok(means / classes.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Precision,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Recall => "recall",
            Metric::Precision => "precision",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "recall" => Ok(Metric::Recall),
            "precision" => Ok(Metric::Precision),
            other => Err(format!(
                "unknown metric {other:?} (expected recall or precision)"
            )),
        }
    }
}

impl Metric {
    pub fn compute<S: AsRef<str>>(
        self,
        ranked: &[S],
        relevant: &BTreeSet<String>,
        k: usize,
    ) -> Result<f64> {
        match self {
            Metric::Recall => recall_at_k(ranked, relevant, k),
            Metric::Precision => precision_at_k(ranked, relevant, k),
        }
    }
}

/// One aggregated metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: Metric,
    pub k: usize,
    pub mode: Aggregation,
    pub value: f64,
    pub queries: usize,
}

/// Evaluates every `(metric, k)` over a set of rankings. Micro rows are
/// always produced; macro rows only when the relevance map carries a label
/// for every evaluated query.
pub fn evaluate_rankings<S: AsRef<str>>(
    rankings: &[(String, Vec<S>)],
    relevance: &RelevanceMap,
    metrics: &[Metric],
    ks: &[usize],
) -> Result<Vec<MetricRow>> {
    let mut seen = HashSet::new();
    for (q, _) in rankings {
        if relevance.relevant(q).is_none() {
            return Err(Error::InvalidInput(format!(
                "query {q:?} has no relevance entry"
            )));
        }
        if !seen.insert(q.as_str()) {
            return Err(Error::InvalidInput(format!("query {q:?} ranked twice")));
        }
    }
    let labelled = rankings.iter().all(|(q, _)| relevance.label(q).is_some());

    let mut rows = Vec::new();
    for &metric in metrics {
        for &k in ks {
            let per_query = rankings
                .iter()
                .map(|(q, ranked)| {
                    Ok(QueryMetric {
                        query_id: q.clone(),
                        label: relevance.label(q).map(str::to_owned),
                        value: metric.compute(
                            ranked,
                            relevance.relevant(q).expect("checked"),
                            k,
                        )?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut modes = vec![Aggregation::Micro];
            if labelled {
                modes.push(Aggregation::Macro);
            }
            for mode in modes {
                rows.push(MetricRow {
                    metric,
                    k,
                    mode,
                    value: aggregate(&per_query, mode)?,
                    queries: per_query.len(),
                });
            }
        }
    }
    Ok(rows)
}

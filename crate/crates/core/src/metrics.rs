//! Ranking metrics and run evaluation.
//!
//! A document is relevant when its grade is at least 1. Queries without any
//! relevant document are excluded from every mean and listed in the report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Qrels, RunRanking};

/// Rank cutoff: the top `k` documents, or the whole ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cutoff {
    K(usize),
    Full,
}

impl Cutoff {
    fn take(self, n: usize) -> usize {
        match self {
            Cutoff::K(k) => k.min(n),
            Cutoff::Full => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CutoffSet(Vec<usize>);

impl CutoffSet {
    pub fn new(mut ks: Vec<usize>) -> Result<Self> {
        if ks.is_empty() || ks.contains(&0) {
            return Err(Error::invalid("cutoffs must be a nonempty set of positive integers"));
        }
        ks.sort_unstable();
        ks.dedup();
        Ok(CutoffSet(ks))
    }

    pub fn ks(&self) -> &[usize] {
        &self.0
    }

    pub fn largest(&self) -> usize {
        *self.0.last().expect("nonempty")
    }

    pub fn parse(list: &str) -> Result<Self> {
        let ks = list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Usage(format!("bad cutoff {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        CutoffSet::new(ks)
    }
}

impl Default for CutoffSet {
    fn default() -> Self {
        CutoffSet(vec![1, 3, 5, 10, 20])
    }
}

/// Grades for one query, with the relevant set derived from them.
struct Judged<'a> {
    grades: Option<&'a BTreeMap<String, u32>>,
    relevant: usize,
}

impl<'a> Judged<'a> {
    fn new(qrels: &'a Qrels, query_id: &str) -> Self {
        let grades = qrels.for_query(query_id);
        let relevant = grades.map_or(0, |g| g.values().filter(|&&v| v >= 1).count());
        Judged { grades, relevant }
    }

    fn grade(&self, doc: &str) -> u32 {
        self.grades.and_then(|g| g.get(doc)).copied().unwrap_or(0)
    }
}

fn require_relevant(run: &RunRanking, j: &Judged) -> Result<()> {
    if j.relevant == 0 {
        Err(Error::invalid(format!("query {} has no relevant documents", run.query_id)))
    } else {
        Ok(())
    }
}

pub fn average_precision(run: &RunRanking, qrels: &Qrels) -> Result<f64> {
    let j = Judged::new(qrels, &run.query_id);
    require_relevant(run, &j)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, doc) in run.ranked_ids().enumerate() {
        if j.grade(doc) >= 1 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / j.relevant as f64)
}

pub fn reciprocal_rank(run: &RunRanking, qrels: &Qrels) -> Result<f64> {
    let j = Judged::new(qrels, &run.query_id);
    require_relevant(run, &j)?;
    Ok(run
        .ranked_ids()
        .position(|d| j.grade(d) >= 1)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64))
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank0: usize) -> f64 {
    ((rank0 + 2) as f64).log2()
}

pub fn ndcg(run: &RunRanking, qrels: &Qrels, cutoff: Cutoff) -> Result<f64> {
    let j = Judged::new(qrels, &run.query_id);
    require_relevant(run, &j)?;
    let n = cutoff.take(run.len());
    let dcg: f64 = run
        .ranked_ids()
        .take(n)
        .enumerate()
        .map(|(i, d)| gain(j.grade(d)) / discount(i))
        .sum();
    let mut ideal: Vec<u32> = j.grades.map_or_else(Vec::new, |g| g.values().copied().filter(|&v| v > 0).collect());
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let m = match cutoff {
        Cutoff::K(k) => k.min(ideal.len()),
        Cutoff::Full => ideal.len(),
    };
    let idcg: f64 = ideal[..m].iter().enumerate().map(|(i, &g)| gain(g) / discount(i)).sum();
    Ok(dcg / idcg)
}

fn hits_at(run: &RunRanking, j: &Judged, k: usize) -> usize {
    run.ranked_ids().take(k).filter(|d| j.grade(d) >= 1).count()
}

pub fn recall_at_k(run: &RunRanking, qrels: &Qrels, k: usize) -> Result<f64> {
    let j = Judged::new(qrels, &run.query_id);
    require_relevant(run, &j)?;
    Ok(hits_at(run, &j, k) as f64 / j.relevant as f64)
}

/// Precision over the first `k` slots; missing slots count as misses.
pub fn precision_at_k(run: &RunRanking, qrels: &Qrels, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("precision cutoff must be >= 1"));
    }
    let j = Judged::new(qrels, &run.query_id);
    require_relevant(run, &j)?;
    Ok(hits_at(run, &j, k) as f64 / k as f64)
}

pub fn f1_at_k(run: &RunRanking, qrels: &Qrels, k: usize) -> Result<f64> {
    let p = precision_at_k(run, qrels, k)?;
    let r = recall_at_k(run, qrels, k)?;
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Metric column names for a cutoff set, in report order.
pub fn metric_names(cutoffs: &CutoffSet) -> Vec<String> {
    let mut names = vec!["map".to_string(), "mrr".to_string()];
    names.extend(cutoffs.ks().iter().map(|k| format!("ndcg@{k}")));
    names.push("ndcg".into());
    for prefix in ["recall", "precision", "f1"] {
        names.extend(cutoffs.ks().iter().map(|k| format!("{prefix}@{k}")));
    }
    names.push("f1".into());
    names
}

/// Every metric for one query, keyed by [`metric_names`].
pub fn query_metrics(run: &RunRanking, qrels: &Qrels, cutoffs: &CutoffSet) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    m.insert("map".into(), average_precision(run, qrels)?);
    m.insert("mrr".into(), reciprocal_rank(run, qrels)?);
    for &k in cutoffs.ks() {
        m.insert(format!("ndcg@{k}"), ndcg(run, qrels, Cutoff::K(k))?);
        m.insert(format!("recall@{k}"), recall_at_k(run, qrels, k)?);
        m.insert(format!("precision@{k}"), precision_at_k(run, qrels, k)?);
        m.insert(format!("f1@{k}"), f1_at_k(run, qrels, k)?);
    }
    m.insert("ndcg".into(), ndcg(run, qrels, Cutoff::Full)?);
    m.insert("f1".into(), m[&format!("f1@{}", cutoffs.largest())]);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub queries: usize,
    pub means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Run queries with no qrels entry at all.
    pub missing_qrels: Vec<String>,
    /// Qrels queries with relevant documents but no run.
    pub missing_run: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    pub metrics: Vec<String>,
    pub per_query: Vec<QueryRow>,
    pub aggregate: Aggregate,
    pub categories: BTreeMap<String, Aggregate>,
    pub skipped: Vec<Skipped>,
    pub diagnostics: Diagnostics,
}

fn mean_of(rows: &[&QueryRow], names: &[String]) -> Aggregate {
    let n = rows.len();
    let means = names
        .iter()
        .map(|name| {
            let v = if n == 0 {
                0.0
            } else {
                rows.iter().map(|r| r.metrics[name]).sum::<f64>() / n as f64
            };
            (name.clone(), v)
        })
        .collect();
    Aggregate { queries: n, means }
}

/// Evaluates every run against `qrels`. `categories` maps query id to a
/// category label for the per-category tables.
pub fn evaluate_run(
    runs: &[RunRanking],
    qrels: &Qrels,
    cutoffs: &CutoffSet,
    categories: &BTreeMap<String, String>,
) -> Result<EvalReport> {
    let names = metric_names(cutoffs);
    let mut sorted: Vec<&RunRanking> = runs.iter().collect();
    sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].query_id == w[1].query_id) {
        return Err(Error::invalid(format!("run lists query {} twice", w[0].query_id)));
    }
    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    let mut diagnostics = Diagnostics::default();
    for run in &sorted {
        if qrels.for_query(&run.query_id).is_none() {
            diagnostics.missing_qrels.push(run.query_id.clone());
            skipped.push(Skipped {
                query_id: run.query_id.clone(),
                reason: "query absent from qrels".into(),
            });
            continue;
        }
        if Judged::new(qrels, &run.query_id).relevant == 0 {
            skipped.push(Skipped {
                query_id: run.query_id.clone(),
                reason: "no relevant documents in qrels".into(),
            });
            continue;
        }
        per_query.push(QueryRow {
            query_id: run.query_id.clone(),
            category: categories.get(&run.query_id).cloned(),
            metrics: query_metrics(run, qrels, cutoffs)?,
        });
    }
    let in_run: BTreeSet<&str> = sorted.iter().map(|r| r.query_id.as_str()).collect();
    for q in qrels.query_ids() {
        if !in_run.contains(q) && Judged::new(qrels, q).relevant > 0 {
            diagnostics.missing_run.push(q.to_string());
        }
    }
    let all: Vec<&QueryRow> = per_query.iter().collect();
    let aggregate = mean_of(&all, &names);
    let mut by_cat: BTreeMap<String, Vec<&QueryRow>> = BTreeMap::new();
    for r in &per_query {
        if let Some(c) = &r.category {
            by_cat.entry(c.clone()).or_default().push(r);
        }
    }
    let categories = by_cat.into_iter().map(|(c, rows)| (c, mean_of(&rows, &names))).collect();
    Ok(EvalReport {
        cutoffs: cutoffs.ks().to_vec(),
        metrics: names,
        per_query,
        aggregate,
        categories,
        skipped,
        diagnostics,
    })
}

fn display_name(metric: &str) -> String {
    match metric {
        "map" => "MAP".into(),
        "mrr" => "MRR".into(),
        "ndcg" => "NDCG".into(),
        "f1" => "F1".into(),
        other => {
            let (base, k) = other.split_once('@').unwrap_or((other, ""));
            let base = match base {
                "ndcg" => "NDCG",
                "recall" => "Recall",
                "precision" => "P",
                "f1" => "F1",
                b => b,
            };
            format!("{base}@{k}")
        }
    }
}

fn table(out: &mut String, title: &str, agg: &Aggregate, metrics: &[String]) {
    let width = metrics.iter().map(|m| display_name(m).len()).max().unwrap_or(6).max(6);
    let _ = writeln!(out, "{title} (n={})", agg.queries);
    let _ = writeln!(out, "{:<width$}  {:>8}", "Metric", "Value");
    for m in metrics {
        let _ = writeln!(out, "{:<width$}  {:>8.4}", display_name(m), agg.means[m]);
    }
}

impl EvalReport {
    /// Aligned plain-text rendering: overall table, then one per category.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        table(&mut out, "All queries", &self.aggregate, &self.metrics);
        for (cat, agg) in &self.categories {
            out.push('\n');
            table(&mut out, &format!("Category: {cat}"), agg, &self.metrics);
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(out, "\nSkipped {} queries:", self.skipped.len());
            for s in &self.skipped {
                let _ = writeln!(out, "  {}: {}", s.query_id, s.reason);
            }
        }
        if !self.diagnostics.missing_run.is_empty() {
            let _ = writeln!(out, "\nQueries in qrels without a run: {}", self.diagnostics.missing_run.join(", "));
        }
        out
    }
}

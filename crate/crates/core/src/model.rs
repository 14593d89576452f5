//! Domain records shared by every stage.
//!
//! Field names here are the on-disk JSONL schema; renaming a field is a
//! format break.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub role: Role,
    pub text: String,
    pub turn_index: u32,
}

/// Checks that turn indices are strictly increasing.
pub fn validate_turns(turns: &[DialogueTurn]) -> Result<()> {
    for w in turns.windows(2) {
        if w[1].turn_index <= w[0].turn_index {
            return Err(Error::invalid(format!(
                "turn_index must be strictly increasing ({} then {})",
                w[0].turn_index, w[1].turn_index
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<DialogueTurn>>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
            category: None,
            history: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("query id must be nonempty"));
        }
        if self.text.trim().is_empty() {
            return Err(Error::invalid(format!("query {}: text must be nonempty", self.id)));
        }
        if let Some(h) = &self.history {
            validate_turns(h)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub doc_id: String,
    pub sim: f64,
}

/// A query's first-stage candidates, in retrieval order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub query_id: String,
    pub candidates: Vec<Candidate>,
}

impl CandidatePool {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::invalid(format!("pool {}: no candidates", self.query_id)));
        }
        let mut seen = BTreeSet::new();
        for c in &self.candidates {
            if !seen.insert(c.doc_id.as_str()) {
                return Err(Error::invalid(format!(
                    "pool {}: duplicate doc_id {}",
                    self.query_id, c.doc_id
                )));
            }
            if !c.sim.is_finite() || !(-1.0..=1.0).contains(&c.sim) {
                return Err(Error::invalid(format!(
                    "pool {}: similarity {} for {} outside [-1, 1]",
                    self.query_id, c.sim, c.doc_id
                )));
            }
        }
        Ok(())
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.doc_id.as_str())
    }
}

/// One line of a qrels JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelRecord {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u32,
}

/// Relevance grades keyed by query then document. Absent pairs are grade 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.grades
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn from_records(records: impl IntoIterator<Item = QrelRecord>) -> Self {
        let mut q = Qrels::new();
        for r in records {
            q.insert(r.query_id, r.doc_id, r.grade);
        }
        q
    }
}

/// One line of a JSONL run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query_id: String,
    pub doc_id: String,
    pub score: f64,
}

/// Scored documents for one query. The rank order is always derived, never
/// stored: score descending, then doc_id ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRanking {
    pub query_id: String,
    scored: Vec<(String, f64)>,
}

impl RunRanking {
    pub fn new(query_id: impl Into<String>, scored: Vec<(String, f64)>) -> Result<Self> {
        let query_id = query_id.into();
        let mut seen = BTreeSet::new();
        for (doc, score) in &scored {
            if !score.is_finite() {
                return Err(Error::invalid(format!(
                    "run {query_id}: non-finite score for {doc}"
                )));
            }
            if !seen.insert(doc.as_str()) {
                return Err(Error::invalid(format!("run {query_id}: duplicate doc_id {doc}")));
            }
        }
        let mut scored = scored;
        scored.sort_by(|a, b| rank_order(&a.0, a.1, &b.0, b.1));
        Ok(RunRanking { query_id, scored })
    }

    /// Documents in rank order.
    pub fn ranked(&self) -> &[(String, f64)] {
        &self.scored
    }

    pub fn ranked_ids(&self) -> impl Iterator<Item = &str> {
        self.scored.iter().map(|(d, _)| d.as_str())
    }

    pub fn len(&self) -> usize {
        self.scored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scored.is_empty()
    }
}

/// Deterministic tie-break used everywhere: score descending, id ascending.
pub fn rank_order(id_a: &str, score_a: f64, id_b: &str, score_b: f64) -> std::cmp::Ordering {
    score_b.total_cmp(&score_a).then_with(|| id_a.cmp(id_b))
}

/// Groups flat run records into per-query rankings, ordered by query id.
pub fn group_run(records: impl IntoIterator<Item = RunRecord>) -> Result<Vec<RunRanking>> {
    let mut by_query: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for r in records {
        by_query.entry(r.query_id).or_default().push((r.doc_id, r.score));
    }
    by_query
        .into_iter()
        .map(|(q, docs)| RunRanking::new(q, docs))
        .collect()
}

/// Index of documents by id, rejecting duplicates.
pub fn index_documents(docs: Vec<Document>) -> Result<HashMap<String, Document>> {
    let mut map = HashMap::with_capacity(docs.len());
    for d in docs {
        if d.id.is_empty() {
            return Err(Error::invalid("document id must be nonempty"));
        }
        if map.contains_key(&d.id) {
            return Err(Error::invalid(format!("duplicate document id {}", d.id)));
        }
        map.insert(d.id.clone(), d);
    }
    Ok(map)
}

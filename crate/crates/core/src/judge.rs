//! Teacher comparison scheduling and vote aggregation.
//!
//! A pool is judged either pair by pair or as whole listwise rankings that
//! are decomposed into pairs. Each pair collects up to `votes` verdicts, which
//! a majority fold turns into a weighted [`PairwisePreference`].

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::model::{CandidatePool, Document, Query};
use crate::prompts::{render_pairwise_prompt, render_ranking_prompt};
use crate::teacher::Teacher;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PairStrategy {
    RoundRobin,
    Sampled { k_per_doc: usize },
}

impl PairStrategy {
    /// Round robin up to `round_robin_max` candidates, sampled above.
    pub fn for_pool_size(n: usize, round_robin_max: usize, sampled_k: usize) -> Self {
        if n <= round_robin_max {
            PairStrategy::RoundRobin
        } else {
            PairStrategy::Sampled { k_per_doc: sampled_k }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSchedule {
    pub query_id: String,
    pub pairs: Vec<(String, String)>,
    pub strategy: PairStrategy,
}

/// Chooses which document pairs to judge.
///
/// `Sampled` first links all documents along a random path, so the
/// comparison graph is always connected, then adds random partners until
/// every document appears in at least `k_per_doc` pairs (capped at n - 1).
pub fn schedule_pairs(pool: &CandidatePool, strategy: PairStrategy, seed: u64) -> Result<PairSchedule> {
    let ids: Vec<&str> = pool.doc_ids().collect();
    let n = ids.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "pool {} needs at least 2 candidates to compare, has {n}",
            pool.query_id
        )));
    }
    let pairs = match strategy {
        PairStrategy::RoundRobin => {
            let mut v = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    v.push((i, j));
                }
            }
            v
        }
        PairStrategy::Sampled { k_per_doc } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &pool.query_id));
            let k = k_per_doc.clamp(1, n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
            let mut degree = vec![0usize; n];
            let add = |a: usize, b: usize, chosen: &mut BTreeSet<(usize, usize)>, degree: &mut [usize]| {
                if chosen.insert((a.min(b), a.max(b))) {
                    degree[a] += 1;
                    degree[b] += 1;
                }
            };
            for w in order.windows(2) {
                add(w[0], w[1], &mut chosen, &mut degree);
            }
            for &doc in &order {
                while degree[doc] < k {
                    let open: Vec<usize> = (0..n)
                        .filter(|&o| o != doc && !chosen.contains(&(doc.min(o), doc.max(o))))
                        .collect();
                    let other = open[rng.gen_range(0..open.len())];
                    add(doc, other, &mut chosen, &mut degree);
                }
            }
            chosen.into_iter().collect()
        }
    };
    Ok(PairSchedule {
        query_id: pool.query_id.clone(),
        pairs: pairs
            .into_iter()
            .map(|(i, j)| (ids[i].to_string(), ids[j].to_string()))
            .collect(),
        strategy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresentationOrder {
    Ij,
    Ji,
}

impl PresentationOrder {
    /// Alternates orders across votes: ij, ji, ij, ...
    pub fn for_vote(vote_index: u8) -> Self {
        if vote_index.is_multiple_of(2) {
            PresentationOrder::Ij
        } else {
            PresentationOrder::Ji
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Payload {
    /// Listwise answer: doc ids from most to least relevant.
    Permutation { ranking: Vec<String> },
    Winner { doc_id: String },
    /// Every parse attempt for this vote failed; the vote does not count.
    Dropped { error: String },
}

/// One teacher vote, as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawJudgment {
    pub query_id: String,
    pub judge: String,
    pub vote_index: u8,
    pub presentation_order: PresentationOrder,
    /// The scheduled pair for pairwise votes; absent for listwise votes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<(String, String)>,
    pub payload: Payload,
}

impl RawJudgment {
    fn resume_key(&self) -> ResumeKey {
        (self.query_id.clone(), self.pair.clone(), self.vote_index)
    }
}

/// "winner is preferred over loser", with the number of votes behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwisePreference {
    pub query_id: String,
    pub winner: String,
    pub loser: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RankingParseError {
    #[error("no JSON array of integers found")]
    NoArray,
    #[error("index {index} out of range for {n} documents")]
    OutOfRange { index: i64, n: usize },
    #[error("index {0} appears more than once")]
    Duplicate(usize),
    #[error("index {0} is missing")]
    Missing(usize),
}

fn integer_array(body: &str) -> Option<Vec<i64>> {
    let body = body.trim();
    if body.is_empty() {
        return Some(Vec::new());
    }
    body.split(',').map(|t| t.trim().parse::<i64>().ok()).collect()
}

/// Extracts the first JSON array of integers from a teacher answer and checks
/// it is a permutation of `0..n`. Surrounding prose is tolerated.
pub fn parse_listwise_ranking(text: &str, n: usize) -> Result<Vec<usize>, RankingParseError> {
    let mut rest = text;
    let values = loop {
        let Some(open) = rest.find('[') else {
            return Err(RankingParseError::NoArray);
        };
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else {
            return Err(RankingParseError::NoArray);
        };
        if let Some(v) = integer_array(&after[..close]) {
            if !v.is_empty() {
                break v;
            }
        }
        rest = after;
    };
    let mut seen = vec![false; n];
    let mut perm = Vec::with_capacity(values.len());
    for v in values {
        if v < 0 || v as u64 >= n as u64 {
            return Err(RankingParseError::OutOfRange { index: v, n });
        }
        let i = v as usize;
        if seen[i] {
            return Err(RankingParseError::Duplicate(i));
        }
        seen[i] = true;
        perm.push(i);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(RankingParseError::Missing(missing));
    }
    Ok(perm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// Accepts `A`, `B`, or `Document A` / `Document B`, with optional
/// punctuation around it.
pub fn parse_pairwise_verdict(text: &str) -> Result<Side, Error> {
    let t = text.trim().trim_matches(|c: char| !c.is_alphanumeric());
    let t = t.strip_prefix("Document ").unwrap_or(t).trim();
    match t {
        "A" => Ok(Side::A),
        "B" => Ok(Side::B),
        _ => Err(Error::TeacherOutput(format!(
            "expected a single letter A or B, got {:?}",
            crate::judge::truncate_chars(text, 80)
        ))),
    }
}

pub(crate) fn truncate_chars(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Every earlier-ranked document beats every later one, weight 1.
pub fn decompose_ranking_to_pairs(query_id: &str, ranking: &[String]) -> Vec<PairwisePreference> {
    let mut out = Vec::with_capacity(ranking.len() * ranking.len().saturating_sub(1) / 2);
    for (i, w) in ranking.iter().enumerate() {
        for l in &ranking[i + 1..] {
            out.push(PairwisePreference {
                query_id: query_id.to_string(),
                winner: w.clone(),
                loser: l.clone(),
                weight: 1.0,
            });
        }
    }
    out
}

/// A single valid verdict on an unordered pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairVote {
    pub a: String,
    pub b: String,
    pub winner: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Preferred(PairwisePreference),
    Unresolved,
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Folds the valid votes for one pair. A strict plurality wins with weight
/// equal to its vote count; a tie (including no votes) is unresolved.
pub fn majority_vote(query_id: &str, votes: &[PairVote]) -> Result<Verdict> {
    let Some(first) = votes.first() else {
        return Ok(Verdict::Unresolved);
    };
    let pair = unordered(&first.a, &first.b);
    if pair.0 == pair.1 {
        return Err(Error::invalid("vote compares a document with itself"));
    }
    let (mut first_wins, mut second_wins) = (0u32, 0u32);
    for v in votes {
        if unordered(&v.a, &v.b) != pair {
            return Err(Error::invalid(format!(
                "votes mix pairs ({}, {}) and ({}, {})",
                pair.0, pair.1, v.a, v.b
            )));
        }
        if v.winner == pair.0 {
            first_wins += 1;
        } else if v.winner == pair.1 {
            second_wins += 1;
        } else {
            return Err(Error::invalid(format!("vote winner {} is not in the pair", v.winner)));
        }
    }
    let (winner, loser, weight) = match first_wins.cmp(&second_wins) {
        std::cmp::Ordering::Greater => (pair.0, pair.1, first_wins),
        std::cmp::Ordering::Less => (pair.1, pair.0, second_wins),
        std::cmp::Ordering::Equal => return Ok(Verdict::Unresolved),
    };
    Ok(Verdict::Preferred(PairwisePreference {
        query_id: query_id.to_string(),
        winner,
        loser,
        weight: weight as f64,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    Pairwise,
    Listwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub mode: JudgeMode,
    pub votes: u8,
    /// Extra attempts per vote after an unparseable answer.
    pub parse_retries: u32,
    pub round_robin_max: usize,
    pub sampled_k: usize,
    /// Sampling temperature for voting calls.
    pub vote_temperature: f64,
    /// Model names for a multi-teacher panel on the same endpoint; empty
    /// means the endpoint's own model answers every vote.
    pub panel: Vec<String>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            mode: JudgeMode::Pairwise,
            votes: 3,
            parse_retries: 2,
            round_robin_max: 32,
            sampled_k: 3,
            vote_temperature: 0.7,
            panel: Vec::new(),
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.votes == 0 {
            return Err(Error::invalid("votes must be >= 1"));
        }
        if self.sampled_k == 0 {
            return Err(Error::invalid("sampled_k must be >= 1"));
        }
        if !(self.vote_temperature >= 0.0 && self.vote_temperature.is_finite()) {
            return Err(Error::invalid("vote_temperature must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolJudgment {
    pub judgments: Vec<RawJudgment>,
    pub preferences: Vec<PairwisePreference>,
    pub unresolved: Vec<(String, String)>,
}

type ResumeKey = (String, Option<(String, String)>, u8);

/// Previously logged votes, reused instead of asking the teacher again.
#[derive(Debug, Default)]
pub struct ResumeLog {
    entries: HashMap<ResumeKey, RawJudgment>,
}

impl ResumeLog {
    pub fn new(judgments: impl IntoIterator<Item = RawJudgment>) -> Self {
        ResumeLog {
            entries: judgments.into_iter().map(|j| (j.resume_key(), j)).collect(),
        }
    }

    fn get(&self, query_id: &str, pair: Option<&(String, String)>, vote: u8) -> Option<&RawJudgment> {
        self.entries.get(&(query_id.to_string(), pair.cloned(), vote))
    }

    pub fn contains(&self, j: &RawJudgment) -> bool {
        self.entries.contains_key(&j.resume_key())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Judges candidate pools with a panel of teachers. Vote `v` goes to
/// `teachers[v % teachers.len()]`, so one teacher means repeated sampling and
/// three teachers mean one vote each.
pub struct Judge<'a> {
    pub teachers: &'a [&'a dyn Teacher],
    pub config: JudgeConfig,
    pub seed: u64,
}

impl Judge<'_> {
    fn teacher(&self, vote: u8) -> &dyn Teacher {
        self.teachers[vote as usize % self.teachers.len()]
    }

    fn ask<T>(&self, vote: u8, prompt: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Result<T, String>> {
        let teacher = self.teacher(vote);
        let mut last = String::new();
        for attempt in 0..=self.config.parse_retries {
            let sample = vote as u32 * (self.config.parse_retries + 1) + attempt;
            let raw = teacher.complete(prompt, sample)?;
            match parse(&raw) {
                Ok(v) => return Ok(Ok(v)),
                Err(e) => {
                    log::warn!("{}: unparseable answer (attempt {}): {e}", teacher.name(), attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Ok(Err(last))
    }

    pub fn judge_pool(
        &self,
        query: &Query,
        pool: &CandidatePool,
        docs: &HashMap<String, Document>,
        resume: &ResumeLog,
    ) -> Result<PoolJudgment> {
        if self.teachers.is_empty() {
            return Err(Error::Usage("no teacher configured".into()));
        }
        query.validate()?;
        pool.validate()?;
        let doc = |id: &str| {
            docs.get(id)
                .ok_or_else(|| Error::invalid(format!("pool {} references unknown document {id}", pool.query_id)))
        };
        let mut judgments = Vec::new();
        let mut votes: BTreeMap<(String, String), Vec<(u8, PairVote)>> = BTreeMap::new();

        match self.config.mode {
            JudgeMode::Pairwise => {
                let strategy = PairStrategy::for_pool_size(
                    pool.candidates.len(),
                    self.config.round_robin_max,
                    self.config.sampled_k,
                );
                let schedule = schedule_pairs(pool, strategy, self.seed)?;
                for pair in &schedule.pairs {
                    let (di, dj) = (doc(&pair.0)?, doc(&pair.1)?);
                    votes.entry(unordered(&pair.0, &pair.1)).or_default();
                    for v in 0..self.config.votes {
                        let order = PresentationOrder::for_vote(v);
                        let j = match resume.get(&query.id, Some(pair), v) {
                            Some(j) => j.clone(),
                            None => {
                                let (a, b) = match order {
                                    PresentationOrder::Ij => (di, dj),
                                    PresentationOrder::Ji => (dj, di),
                                };
                                let prompt = render_pairwise_prompt(query, a, b);
                                let payload = match self.ask(v, &prompt, parse_pairwise_verdict)? {
                                    Ok(Side::A) => Payload::Winner { doc_id: a.id.clone() },
                                    Ok(Side::B) => Payload::Winner { doc_id: b.id.clone() },
                                    Err(error) => Payload::Dropped { error },
                                };
                                RawJudgment {
                                    query_id: query.id.clone(),
                                    judge: self.teacher(v).name().to_string(),
                                    vote_index: v,
                                    presentation_order: order,
                                    pair: Some(pair.clone()),
                                    payload,
                                }
                            }
                        };
                        if let Payload::Winner { doc_id } = &j.payload {
                            votes.entry(unordered(&pair.0, &pair.1)).or_default().push((
                                v,
                                PairVote { a: pair.0.clone(), b: pair.1.clone(), winner: doc_id.clone() },
                            ));
                        }
                        judgments.push(j);
                    }
                }
            }
            JudgeMode::Listwise => {
                let ids: Vec<&str> = pool.doc_ids().collect();
                for (i, a) in ids.iter().enumerate() {
                    for b in &ids[i + 1..] {
                        votes.entry(unordered(a, b)).or_default();
                    }
                }
                for v in 0..self.config.votes {
                    let order = PresentationOrder::for_vote(v);
                    let j = match resume.get(&query.id, None, v) {
                        Some(j) => j.clone(),
                        None => {
                            let mut shown: Vec<&Document> = ids.iter().map(|id| doc(id)).collect::<Result<_>>()?;
                            if order == PresentationOrder::Ji {
                                shown.reverse();
                            }
                            let owned: Vec<Document> = shown.iter().map(|d| (*d).clone()).collect();
                            let prompt = render_ranking_prompt(query, &owned);
                            let n = owned.len();
                            let parsed = self.ask(v, &prompt, |t| {
                                parse_listwise_ranking(t, n).map_err(|e| Error::TeacherOutput(e.to_string()))
                            })?;
                            let payload = match parsed {
                                Ok(perm) => Payload::Permutation {
                                    ranking: perm.into_iter().map(|i| owned[i].id.clone()).collect(),
                                },
                                Err(error) => Payload::Dropped { error },
                            };
                            RawJudgment {
                                query_id: query.id.clone(),
                                judge: self.teacher(v).name().to_string(),
                                vote_index: v,
                                presentation_order: order,
                                pair: None,
                                payload,
                            }
                        }
                    };
                    if let Payload::Permutation { ranking } = &j.payload {
                        for p in decompose_ranking_to_pairs(&query.id, ranking) {
                            let key = unordered(&p.winner, &p.loser);
                            votes.entry(key.clone()).or_default().push((
                                v,
                                PairVote { a: key.0, b: key.1, winner: p.winner },
                            ));
                        }
                    }
                    judgments.push(j);
                }
            }
        }

        let mut preferences = Vec::new();
        let mut unresolved = Vec::new();
        for (pair, mut vs) in votes {
            vs.sort_by_key(|(v, _)| *v);
            let vs: Vec<PairVote> = vs.into_iter().map(|(_, pv)| pv).collect();
            match majority_vote(&query.id, &vs)? {
                Verdict::Preferred(p) => preferences.push(p),
                Verdict::Unresolved => {
                    log::info!("{}: pair ({}, {}) unresolved", query.id, pair.0, pair.1);
                    unresolved.push(pair);
                }
            }
        }
        Ok(PoolJudgment {
            judgments,
            preferences,
            unresolved,
        })
    }
}

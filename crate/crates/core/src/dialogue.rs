//! Multi-turn training examples: each user turn with a following assistant
//! answer becomes one query, with the earlier turns distilled into a short
//! summary and the answer as the positive document.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::model::{validate_turns, DialogueTurn, Document, Query, Role};
use crate::negatives::{filter_query, Bucket, FilterConfig, NegativeCandidate, PositiveRef};
use crate::prompts::{render_distill_prompt, render_distractor_prompt, render_instruction_prompt};
use crate::teacher::Teacher;
use crate::text::{whitespace_len, Scorer};

/// One input line of the dialogue corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("dialogue id must be nonempty"));
        }
        validate_turns(&self.turns).map_err(|e| Error::invalid(format!("dialogue {}: {e}", self.id)))
    }

    /// Indices `i` where turn `i` is a user turn answered by turn `i + 1`.
    pub fn answered_turns(&self) -> Vec<usize> {
        (0..self.turns.len().saturating_sub(1))
            .filter(|&i| self.turns[i].role == Role::User && self.turns[i + 1].role == Role::Assistant)
            .collect()
    }

    pub fn query_id(&self, user_turn: &DialogueTurn) -> String {
        format!("{}:q{}", self.id, user_turn.turn_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledHistory {
    pub source_turn_count: usize,
    pub summary: String,
    pub token_budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionCategory {
    IntentFocusing,
    EntityAugmentation,
    AspectConstraint,
}

impl InstructionCategory {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "intent_focusing" => Some(Self::IntentFocusing),
            "entity_augmentation" => Some(Self::EntityAugmentation),
            "aspect_constraint" => Some(Self::AspectConstraint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub category: InstructionCategory,
    pub text: String,
}

/// Output line. `soft_labels` maps document id to calibrated score for the
/// documents of the example that were scored upstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query: Query,
    pub history_summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<Instruction>,
    pub positive: Document,
    pub hard_negatives: Vec<Document>,
    pub easy_negatives: Vec<Document>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_labels: Option<BTreeMap<String, f64>>,
}

impl TrainingExample {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut texts = BTreeSet::new();
        ids.insert(self.positive.id.as_str());
        texts.insert(self.positive.text.trim());
        for d in self.hard_negatives.iter().chain(&self.easy_negatives) {
            if !ids.insert(d.id.as_str()) || !texts.insert(d.text.trim()) {
                return Err(Error::invalid(format!(
                    "example {}: negative {} repeats the positive or another negative",
                    self.query.id, d.id
                )));
            }
        }
        if self.hard_negatives.is_empty() && self.easy_negatives.is_empty() {
            return Err(Error::invalid(format!("example {} has no negatives", self.query.id)));
        }
        if let Some(labels) = &self.soft_labels {
            if labels.values().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("example {}: soft label outside [0, 1]", self.query.id)));
            }
        }
        Ok(())
    }
}

/// Cuts `text` to at most `budget` whitespace tokens, preferring to end at a
/// sentence boundary. Returns the text and whether it was cut.
pub fn truncate_to_budget(text: &str, budget: usize) -> (String, bool) {
    if whitespace_len(text) <= budget {
        return (text.trim().to_string(), false);
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    let head = &words[..budget];
    let end = head
        .iter()
        .rposition(|w| w.ends_with(['.', '!', '?']))
        .map_or(budget, |i| i + 1);
    (head[..end].join(" "), true)
}

pub fn distill_history(turns: &[DialogueTurn], teacher: &dyn Teacher, budget: usize) -> Result<DistilledHistory> {
    if budget == 0 {
        return Err(Error::invalid("history budget must be > 0"));
    }
    if turns.is_empty() {
        return Ok(DistilledHistory {
            source_turn_count: 0,
            summary: String::new(),
            token_budget: budget,
        });
    }
    let raw = teacher.complete(&render_distill_prompt(turns, budget), 0)?;
    let (summary, cut) = truncate_to_budget(&raw, budget);
    if cut {
        log::warn!(
            "history summary of {} words exceeds budget {budget}; truncated",
            whitespace_len(&raw)
        );
    }
    Ok(DistilledHistory {
        source_turn_count: turns.len(),
        summary,
        token_budget: budget,
    })
}

pub fn positive_doc_id(dialogue_id: &str, turn_index: u32) -> String {
    format!("{dialogue_id}:a{turn_index}")
}

/// The positive for the exchange `[user, assistant]`.
pub fn build_positive(dialogue_id: &str, exchange: &[DialogueTurn]) -> Result<Document> {
    let answer = exchange
        .iter()
        .find(|t| t.role == Role::Assistant)
        .ok_or_else(|| Error::invalid(format!("dialogue {dialogue_id}: exchange has no assistant answer")))?;
    if answer.text.trim().is_empty() {
        return Err(Error::invalid(format!(
            "dialogue {dialogue_id}: empty assistant answer at turn {}",
            answer.turn_index
        )));
    }
    Ok(Document::new(positive_doc_id(dialogue_id, answer.turn_index), answer.text.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DialogueConfig {
    pub history_budget: usize,
    pub n_neg: usize,
    /// Distractors requested from the teacher per example.
    pub distractor_count: usize,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        DialogueConfig {
            history_budget: 128,
            n_neg: 7,
            distractor_count: 12,
        }
    }
}

impl DialogueConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history_budget == 0 || self.n_neg == 0 || self.distractor_count == 0 {
            return Err(Error::invalid("history_budget, n_neg and distractor_count must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Negatives {
    pub hard: Vec<Document>,
    pub easy: Vec<Document>,
}

impl Negatives {
    pub fn is_empty(&self) -> bool {
        self.hard.is_empty() && self.easy.is_empty()
    }
}

/// Similarity functions used to sort distractors: `similarity` supplies the
/// gap, `verifier` the second opinion on suspects.
pub struct Scorers<'a> {
    pub similarity: &'a dyn Scorer,
    pub verifier: &'a dyn Scorer,
}

/// Asks the teacher for distractors, adds `mined` corpus documents, scores
/// all of them against the query and keeps what the negative filter keeps:
/// hard negatives first, then sampled easy ones, at most `n_neg` in total.
#[allow(clippy::too_many_arguments)]
pub fn generate_hard_negatives(
    query: &Query,
    positive: &Document,
    mined: &[Document],
    teacher: &dyn Teacher,
    scorers: &Scorers,
    config: &DialogueConfig,
    filter: &FilterConfig,
    seed: u64,
) -> Result<Negatives> {
    let raw = teacher.complete(&render_distractor_prompt(query, positive, config.distractor_count), 0)?;
    let texts: Vec<String> = serde_json::from_str(raw.trim()).map_err(|e| {
        Error::TeacherOutput(format!("{}: distractors are not a JSON string array: {e}", query.id))
    })?;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    seen.insert(positive.text.trim().to_string());
    let mut pool: Vec<Document> = Vec::new();
    for (i, t) in texts.iter().enumerate() {
        let t = t.trim();
        if !t.is_empty() && seen.insert(t.to_string()) {
            pool.push(Document::new(format!("{}:neg{i}", positive.id), t));
        }
    }
    for d in mined {
        if d.id != positive.id && seen.insert(d.text.trim().to_string()) {
            pool.push(d.clone());
        }
    }
    let pos_sim = scorers.similarity.score(&query.text, &positive.text);
    let candidates: Vec<NegativeCandidate> = pool
        .iter()
        .map(|d| NegativeCandidate {
            query_id: query.id.clone(),
            doc_id: d.id.clone(),
            sim: scorers.similarity.score(&query.text, &d.text),
            verifier_score: Some(scorers.verifier.score(&query.text, &d.text)),
            positive: false,
        })
        .collect();
    let reference = PositiveRef {
        sim: pos_sim,
        verifier_score: Some(scorers.verifier.score(&query.text, &positive.text)),
    };
    let decisions = filter_query(reference, &candidates, filter, derive_seed(seed, &query.id))?;
    let by_id: HashMap<&str, &Document> = pool.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut out = Negatives::default();
    for d in decisions.iter().filter(|d| d.kept) {
        let doc = by_id[d.doc_id.as_str()].clone();
        match d.bucket {
            Bucket::EasyNegative => out.easy.push(doc),
            Bucket::HardNegative | Bucket::SuspectError => out.hard.push(doc),
        }
    }
    out.hard.truncate(config.n_neg);
    out.easy.truncate(config.n_neg - out.hard.len());
    Ok(out)
}

fn parse_instruction(raw: &str) -> Option<Instruction> {
    #[derive(Deserialize)]
    struct Wire {
        category: String,
        text: String,
    }
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    let wire: Wire = serde_json::from_str(raw.get(start..=end)?).ok()?;
    let category = InstructionCategory::parse(wire.category.trim())?;
    let text = wire.text.trim();
    (!text.is_empty()).then(|| Instruction {
        category,
        text: text.to_string(),
    })
}

/// One teacher call, retried once on an invalid answer; `None` after that.
pub fn generate_instruction(history: &str, query: &Query, positive: &Document, teacher: &dyn Teacher) -> Result<Option<Instruction>> {
    let prompt = render_instruction_prompt(history, query, positive);
    for attempt in 0..2 {
        let raw = teacher.complete(&prompt, attempt)?;
        if let Some(i) = parse_instruction(&raw) {
            return Ok(Some(i));
        }
        log::warn!("{}: invalid instruction answer (attempt {})", query.id, attempt + 1);
    }
    Ok(None)
}

/// Per-query inputs produced by earlier pipeline stages.
#[derive(Debug, Clone, Default)]
pub struct UpstreamLabels {
    /// Calibrated scores by query id, then document id.
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
    /// Corpus negatives kept by the filter, by query id.
    pub mined: BTreeMap<String, Vec<Document>>,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutput {
    pub examples: Vec<TrainingExample>,
    /// Query ids of exchanges whose negatives were all filtered away.
    pub incomplete: Vec<String>,
}

fn build_dialogue(
    dialogue: &Dialogue,
    teacher: &dyn Teacher,
    scorers: &Scorers,
    config: &DialogueConfig,
    filter: &FilterConfig,
    upstream: &UpstreamLabels,
    seed: u64,
) -> Result<BuildOutput> {
    dialogue.validate()?;
    let mut out = BuildOutput::default();
    for i in dialogue.answered_turns() {
        let user = &dialogue.turns[i];
        let history_turns = &dialogue.turns[..i];
        let history = distill_history(history_turns, teacher, config.history_budget)?;
        let positive = build_positive(&dialogue.id, &dialogue.turns[i..i + 2])?;
        let query = Query {
            id: dialogue.query_id(user),
            text: user.text.clone(),
            category: dialogue.category.clone(),
            history: None,
        };
        let mined = upstream.mined.get(&query.id).map_or(&[][..], Vec::as_slice);
        let negatives = generate_hard_negatives(&query, &positive, mined, teacher, scorers, config, filter, seed)?;
        if negatives.is_empty() {
            log::warn!("{}: no negative survived filtering; example not emitted", query.id);
            out.incomplete.push(query.id);
            continue;
        }
        let instruction = generate_instruction(&history.summary, &query, &positive, teacher)?;
        let soft_labels = upstream.scores.get(&query.id).map(|scores| {
            std::iter::once(&positive)
                .chain(&negatives.hard)
                .chain(&negatives.easy)
                .filter_map(|d| scores.get(&d.id).map(|s| (d.id.clone(), *s)))
                .collect::<BTreeMap<_, _>>()
        });
        let example = TrainingExample {
            query,
            history_summary: history.summary,
            instruction,
            positive,
            hard_negatives: negatives.hard,
            easy_negatives: negatives.easy,
            soft_labels: soft_labels.filter(|m| !m.is_empty()),
        };
        example.validate()?;
        out.examples.push(example);
    }
    Ok(out)
}

/// Builds examples for every dialogue, in input order. Dialogues run in
/// parallel; turns within a dialogue run in order.
pub fn build_examples(
    dialogues: &[Dialogue],
    teacher: &dyn Teacher,
    scorers: &Scorers,
    config: &DialogueConfig,
    filter: &FilterConfig,
    upstream: &UpstreamLabels,
    seed: u64,
) -> Result<BuildOutput> {
    config.validate()?;
    let mut ids = BTreeSet::new();
    if let Some(d) = dialogues.iter().find(|d| !ids.insert(d.id.as_str())) {
        return Err(Error::invalid(format!("duplicate dialogue id {}", d.id)));
    }
    let parts: Vec<BuildOutput> = dialogues
        .par_iter()
        .map(|d| build_dialogue(d, teacher, scorers, config, filter, upstream, seed))
        .collect::<Result<_>>()?;
    let mut out = BuildOutput::default();
    for p in parts {
        out.examples.extend(p.examples);
        out.incomplete.extend(p.incomplete);
    }
    Ok(out)
}

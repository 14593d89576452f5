//! Offline teacher. Answers every pipeline template from lexical overlap
//! between query and documents, breaking ties with a seeded hash, so a run
//! is a pure function of (inputs, seed).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::Teacher;
use crate::digest::FieldHasher;
use crate::error::{Error, Result};
use crate::prompts::{parse_prompt, ParsedPrompt};
use crate::text::{content_tokens, is_stopword, overlap_fraction, token_set, whitespace_len};

pub struct MockTeacher {
    name: String,
    seed: u64,
}

impl MockTeacher {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        MockTeacher {
            name: name.into(),
            seed,
        }
    }
}

impl Teacher for MockTeacher {
    fn name(&self) -> &str {
        &self.name
    }

    fn temperature(&self) -> f64 {
        0.0
    }

    fn complete(&self, prompt: &str, sample: u32) -> Result<String> {
        let seed = FieldHasher::new()
            .str(&self.name)
            .u64(self.seed)
            .u64(sample as u64)
            .finish_u64();
        mock_judge(prompt, seed)
    }
}

fn tie_hash(seed: u64, index: usize, text: &str) -> u64 {
    FieldHasher::new().u64(seed).u64(index as u64).str(text).finish_u64()
}

/// Relevance used by the mock: query-token recall plus a bonus for
/// containing the whole query verbatim.
fn relevance(query: &str, doc: &str) -> f64 {
    let verbatim = !query.trim().is_empty() && doc.to_lowercase().contains(&query.trim().to_lowercase());
    overlap_fraction(query, doc) + if verbatim { 1.0 } else { 0.0 }
}

pub fn mock_judge(prompt: &str, seed: u64) -> Result<String> {
    match parse_prompt(prompt) {
        Some(ParsedPrompt::Ranking { query, docs }) => Ok(mock_rank(&query, &docs, seed)),
        Some(ParsedPrompt::Pairwise { query, a, b }) => {
            let docs = [a, b];
            let order = rank_indices(&query, &docs, seed);
            Ok(if order[0] == 0 { "A" } else { "B" }.to_string())
        }
        Some(ParsedPrompt::Distill { turns }) => Ok(mock_distill(&turns)),
        Some(ParsedPrompt::Instruction { history, query, document }) => {
            Ok(mock_instruction(&history, &query, &document))
        }
        Some(ParsedPrompt::Distractor { query, answer, n }) => Ok(mock_distractors(&query, &answer, n, seed)),
        None => Err(Error::TeacherOutput(
            "mock judge does not recognize this prompt template".into(),
        )),
    }
}

fn rank_indices(query: &str, docs: &[String], seed: u64) -> Vec<usize> {
    let mut keyed: Vec<(f64, u64, usize)> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| (relevance(query, d), tie_hash(seed, i, d), i))
        .collect();
    keyed.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    keyed.into_iter().map(|k| k.2).collect()
}

fn mock_rank(query: &str, docs: &[String], seed: u64) -> String {
    let order = rank_indices(query, docs, seed);
    let parts: Vec<String> = order.iter().map(usize::to_string).collect();
    format!("[{}]", parts.join(", "))
}

const NOT_ENTITIES: &[&str] = &[
    "also", "any", "could", "good", "got", "great", "hello", "hey", "hi", "how", "i'd", "i'll",
    "i'm", "i've", "if", "it's", "just", "let", "let's", "maybe", "no", "not", "ok", "okay",
    "please", "should", "sounds", "sure", "thank", "thanks", "that's", "we'll", "we're", "would",
    "yes", "you're",
];

/// Words the mock distiller treats as entities: capitalized words that are
/// not function words, and anything containing a digit. First occurrence
/// order, deduplicated.
pub fn extract_entities(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for raw in text.split_whitespace() {
        let w = raw.trim_matches(|c: char| !c.is_alphanumeric());
        if w.is_empty() {
            continue;
        }
        let lower = w.to_lowercase();
        let capitalized = w.chars().next().is_some_and(char::is_uppercase);
        let has_digit = w.chars().any(|c| c.is_ascii_digit());
        let excluded = is_stopword(&lower) || NOT_ENTITIES.contains(&lower.as_str());
        if (has_digit || (capitalized && !excluded)) && !out.iter().any(|e| e == w) {
            out.push(w.to_string());
        }
    }
    out
}

fn first_sentence(text: &str) -> &str {
    match text.find(['.', '!', '?']) {
        Some(i) => &text[..=i],
        None => text,
    }
}

fn mock_distill(turns: &[(String, String)]) -> String {
    let all: Vec<&str> = turns.iter().map(|(_, t)| t.as_str()).collect();
    let entities = extract_entities(&all.join(" "));
    let conclusion = turns
        .iter()
        .rev()
        .find(|(r, _)| r == "assistant")
        .map(|(_, t)| first_sentence(t.trim()).to_string());
    let mut parts = Vec::new();
    if !entities.is_empty() {
        parts.push(format!("Entities: {}.", entities.join(", ")));
    }
    if let Some(c) = conclusion {
        let c = c.trim_end_matches(['.', '!', '?']);
        parts.push(format!("Conclusion: {c}."));
    }
    parts.join(" ")
}

fn aspects(query: &str) -> Vec<String> {
    let lowered = format!(" {} ", query.to_lowercase());
    lowered
        .replace(" and ", "|")
        .replace(" also ", "|")
        .split(['|', ',', ';', '?'])
        .map(|s| content_tokens(s).join(" "))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Category rule of the mock instruction generator, exposed for fixtures.
pub fn mock_instruction_category(history: &str, query: &str, document: &str) -> &'static str {
    if whitespace_len(history) >= 12 && whitespace_len(query) <= 8 {
        return "intent_focusing";
    }
    let parts = aspects(query);
    if parts.len() >= 2 {
        let doc = token_set(document);
        let covered = parts
            .iter()
            .filter(|a| a.split(' ').any(|t| doc.contains(t)))
            .count();
        if covered <= 1 {
            return "aspect_constraint";
        }
    }
    "entity_augmentation"
}

fn mock_instruction(history: &str, query: &str, document: &str) -> String {
    let category = mock_instruction_category(history, query, document);
    let text = match category {
        "intent_focusing" => {
            let topics = extract_entities(history);
            let topics = if topics.is_empty() {
                content_tokens(history).into_iter().take(3).collect::<Vec<_>>()
            } else {
                topics.into_iter().take(3).collect()
            };
            format!(
                "Interpret \"{}\" in the context of the earlier discussion about {}.",
                query.trim(),
                topics.join(", ")
            )
        }
        "aspect_constraint" => {
            let doc = token_set(document);
            let focus = aspects(query)
                .into_iter()
                .find(|a| a.split(' ').any(|t| doc.contains(t)))
                .unwrap_or_else(|| query.trim().to_string());
            format!("Score only the part of the request about: {focus}.")
        }
        _ => {
            let q = token_set(query);
            let terms: Vec<String> = content_tokens(document)
                .into_iter()
                .filter(|t| !q.contains(t))
                .take(3)
                .collect();
            format!(
                "Treat the informal wording of the query as referring to: {}.",
                terms.join(", ")
            )
        }
    };
    json!({"category": category, "text": text}).to_string()
}

const FILLER: &[&str] = &[
    "The weekly team sync moved to Thursday afternoon.",
    "My sister recommended a new podcast about gardening.",
    "The printer on the third floor is out of toner again.",
    "We should water the plants before the weekend trip.",
    "The library extended its opening hours during exams.",
    "I still need to return the borrowed camping chairs.",
    "The bakery on the corner started selling sourdough.",
    "Traffic on the ring road was heavy this morning.",
];

fn bump_digits(text: &str) -> Option<String> {
    if !text.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(
        text.chars()
            .map(|c| match c.to_digit(10) {
                Some(d) => char::from_digit((d + 1) % 10, 10).expect("digit"),
                None => c,
            })
            .collect(),
    )
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn mock_distractors(query: &str, answer: &str, n: usize, seed: u64) -> String {
    let answer = answer.trim();
    let topic: Vec<String> = content_tokens(query).into_iter().take(4).collect();
    let topic = if topic.is_empty() { "that".to_string() } else { topic.join(" ") };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut filler: Vec<&str> = FILLER.to_vec();
    filler.shuffle(&mut rng);

    let mut pool: Vec<String> = Vec::new();
    if let Some(b) = bump_digits(answer) {
        pool.push(b);
    }
    pool.push(format!("It was never settled that {}", lower_first(answer)));
    pool.push(format!("We talked about {topic} before, but nothing was decided."));
    pool.push(format!("Someone else asked about {topic} last year."));
    pool.extend(filler.iter().map(|s| s.to_string()));
    pool.truncate(n.max(1));
    serde_json::to_string(&pool).expect("strings serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Document, Query};
    use crate::prompts::{render_instruction_prompt, render_pairwise_prompt, render_ranking_prompt};

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts.iter().enumerate().map(|(i, t)| Document::new(format!("d{i}"), *t)).collect()
    }

    #[test]
    fn verbatim_query_ranks_first() {
        let q = Query::new("q", "budget for the kitchen");
        let p = render_ranking_prompt(
            &q,
            &docs(&["kitchen kitchen", "for the budget kitchen", "the budget for the kitchen is 40k", "nothing"]),
        );
        let out = mock_judge(&p, 3).unwrap();
        assert!(out.starts_with("[2, "), "{out}");
    }

    #[test]
    fn identical_docs_ordered_by_seeded_hash() {
        let q = Query::new("q", "alpha");
        let p = render_ranking_prompt(&q, &docs(&["same", "same", "same", "same"]));
        let a = mock_judge(&p, 11).unwrap();
        assert_eq!(a, mock_judge(&p, 11).unwrap());
        let variants: std::collections::BTreeSet<String> =
            (0..16).map(|s| mock_judge(&p, s).unwrap()).collect();
        assert!(variants.len() > 1);
    }

    #[test]
    fn pairwise_picks_overlap() {
        let q = Query::new("q", "dentist appointment time");
        let p = render_pairwise_prompt(&q, &Document::new("a", "weather"), &Document::new("b", "the dentist appointment is at 3pm"));
        assert_eq!(mock_judge(&p, 0).unwrap(), "B");
    }

    #[test]
    fn unknown_template_rejected() {
        assert!(matches!(mock_judge("hello", 0), Err(Error::TeacherOutput(_))));
    }

    #[test]
    fn entity_extraction() {
        let e = extract_entities("Hi! I booked the Hilton in Paris for 3 nights. Thanks, Paris is great.");
        assert_eq!(e, ["Hilton", "Paris", "3"]);
    }

    #[test]
    fn instruction_categories() {
        let long_history = "We compared the Pixel and the iPhone cameras and battery life across several weeks of use";
        assert_eq!(mock_instruction_category(long_history, "I want to look at Apple", "Apple iPhone 15"), "intent_focusing");
        assert_eq!(
            mock_instruction_category("", "my tummy hurts after eating bread", "Gluten intolerance presents with abdominal pain"),
            "entity_augmentation"
        );
        assert_eq!(
            mock_instruction_category("", "what is the hotel price and is breakfast included", "The hotel costs 120 per night"),
            "aspect_constraint"
        );
        let p = render_instruction_prompt("", &Query::new("q", "hotel price and breakfast"), &Document::new("d", "hotel price 120"));
        let v: serde_json::Value = serde_json::from_str(&mock_judge(&p, 0).unwrap()).unwrap();
        assert_eq!(v["category"], "aspect_constraint");
    }
}

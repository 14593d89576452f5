//! Lexical helpers: tokenization and bag-of-words similarity scorers used by
//! the offline judge and as a stand-in first-stage retriever.

use std::collections::{BTreeMap, BTreeSet};

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().collect()
}

pub fn whitespace_len(text: &str) -> usize {
    text.split_whitespace().count()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "can", "did", "do", "does", "for",
    "from", "had", "has", "have", "i", "in", "is", "it", "its", "me", "my", "of", "on", "or",
    "our", "so", "that", "the", "their", "then", "there", "this", "to", "was", "we", "were",
    "what", "when", "where", "which", "who", "will", "with", "you", "your",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// Scores how related two texts are. Implementations must be deterministic.
pub trait Scorer: Send + Sync {
    fn score(&self, query: &str, doc: &str) -> f64;
}

/// Cosine similarity of term-frequency vectors, in [0, 1].
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenCosine;

impl Scorer for TokenCosine {
    fn score(&self, query: &str, doc: &str) -> f64 {
        let tf = |t: &str| {
            let mut m: BTreeMap<String, f64> = BTreeMap::new();
            for tok in content_tokens(t) {
                *m.entry(tok).or_default() += 1.0;
            }
            m
        };
        let (a, b) = (tf(query), tf(doc));
        let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
        let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (dot / (na * nb)).clamp(0.0, 1.0)
        }
    }
}

/// Fraction of the query's distinct tokens present in the document, in [0, 1].
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlap;

impl Scorer for TokenOverlap {
    fn score(&self, query: &str, doc: &str) -> f64 {
        overlap_fraction(query, doc)
    }
}

pub fn overlap_fraction(query: &str, doc: &str) -> f64 {
    let q = token_set(query);
    if q.is_empty() {
        return 0.0;
    }
    let d = token_set(doc);
    q.intersection(&d).count() as f64 / q.len() as f64
}

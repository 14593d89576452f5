//! Prompt templates sent to teacher models, and the inverse parsers the
//! offline mock judge uses to recognize them.
//!
//! The listwise ranking template is reproduced line for line; the other
//! templates are this crate's own.

use crate::model::{DialogueTurn, Document, Query, Role};

pub const RANKING_HEADER: &str = "You are a document relevance ranking expert. Given a query
and a set of documents, rank the document IDs by relevance
to the query from highest to lowest.";

pub const RANKING_FOOTER: &str = "Output the ranked document IDs as a JSON array,
e.g. [3, 0, 2, 1, ...].
Output only the JSON array, nothing else.";

const RANKING_DOCS: &str = "\n\nDocument list:\n";

pub const PAIRWISE_HEADER: &str = "You are a document relevance judge. Given a query and two
documents, decide which document is more relevant to the query.";

pub const PAIRWISE_FOOTER: &str = "Answer with a single letter, A or B, and nothing else.";

const PAIRWISE_A: &str = "\n\nDocument A:\n";
const PAIRWISE_B: &str = "\n\nDocument B:\n";

pub const DISTILL_HEADER: &str =
    "Summarize the prior turns of this conversation into core entities and conclusions only.";

const DISTILL_CONVERSATION: &str = "\n\nConversation:\n";
const DISTILL_FOOTER: &str = "\n\nSummary:";

pub const INSTRUCTION_HEADER: &str = "Write a retrieval instruction for a memory reranker, based on the
query-document pair below. Choose exactly one category:
- intent_focusing: the query is short and depends on dialogue history; state the core retrieval intent.
- entity_augmentation: the query is colloquial while the document uses specialized terms; map informal wording to the document's terminology.
- aspect_constraint: the query has several needs and the document covers only one; name the aspect to focus on.";

const INSTRUCTION_HISTORY: &str = "\n\nHistory summary: ";
const INSTRUCTION_QUERY: &str = "\n\nQuery: ";
const INSTRUCTION_DOC: &str = "\n\nDocument: ";
pub const INSTRUCTION_FOOTER: &str =
    "\n\nRespond with a JSON object {\"category\": \"...\", \"text\": \"...\"}.";

pub const DISTRACTOR_HEADER: &str = "Write distractor passages for a memory retrieval dataset. Each passage
must be on the same topic as the query and resemble the answer, but must NOT
answer the query.";

const DISTRACTOR_QUERY: &str = "\n\nQuery: ";
const DISTRACTOR_ANSWER: &str = "\n\nAnswer: ";
const DISTRACTOR_COUNT: &str = "\n\nOutput a JSON array of ";
const DISTRACTOR_FOOTER: &str = " strings, nothing else.";

/// Renders the listwise ranking prompt. Documents are shown as `[index] text`
/// in the given order; the teacher answers with display indices.
pub fn render_ranking_prompt(query: &Query, docs: &[Document]) -> String {
    let doc_list = docs
        .iter()
        .enumerate()
        .map(|(i, d)| format!("[{i}] {}", d.text))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "{RANKING_HEADER}\n\nQuery: {}{RANKING_DOCS}{doc_list}\n\n{RANKING_FOOTER}",
        query.text
    )
}

pub fn render_pairwise_prompt(query: &Query, a: &Document, b: &Document) -> String {
    format!(
        "{PAIRWISE_HEADER}\n\nQuery: {}{PAIRWISE_A}{}{PAIRWISE_B}{}\n\n{PAIRWISE_FOOTER}",
        query.text, a.text, b.text
    )
}

fn role_label(role: Role) -> &'static str {
    match role {
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

pub fn render_distill_prompt(turns: &[DialogueTurn], budget: usize) -> String {
    let convo = turns
        .iter()
        .map(|t| format!("{}: {}", role_label(t.role), t.text))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "{DISTILL_HEADER}\nDrop greetings, repetition, and small talk. Use at most {budget} words.{DISTILL_CONVERSATION}{convo}{DISTILL_FOOTER}"
    )
}

pub fn render_instruction_prompt(history: &str, query: &Query, positive: &Document) -> String {
    format!(
        "{INSTRUCTION_HEADER}{INSTRUCTION_HISTORY}{history}{INSTRUCTION_QUERY}{}{INSTRUCTION_DOC}{}{INSTRUCTION_FOOTER}",
        query.text, positive.text
    )
}

pub fn render_distractor_prompt(query: &Query, answer: &Document, n: usize) -> String {
    format!(
        "{DISTRACTOR_HEADER}{DISTRACTOR_QUERY}{}{DISTRACTOR_ANSWER}{}{DISTRACTOR_COUNT}{n}{DISTRACTOR_FOOTER}",
        query.text, answer.text
    )
}

/// A prompt recognized as one of the templates above, with its slots.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedPrompt {
    Ranking { query: String, docs: Vec<String> },
    Pairwise { query: String, a: String, b: String },
    Distill { turns: Vec<(String, String)> },
    Instruction { history: String, query: String, document: String },
    Distractor { query: String, answer: String, n: usize },
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let i = s.find(start)? + start.len();
    let j = s[i..].rfind(end)? + i;
    Some(&s[i..j])
}

fn split_once_exact<'a>(s: &'a str, sep: &str) -> Option<(&'a str, &'a str)> {
    let i = s.find(sep)?;
    Some((&s[..i], &s[i + sep.len()..]))
}

fn parse_doc_list(list: &str) -> Vec<String> {
    let mut docs: Vec<String> = Vec::new();
    for line in list.split('\n') {
        let marker = format!("[{}] ", docs.len());
        if let Some(rest) = line.strip_prefix(&marker) {
            docs.push(rest.to_string());
        } else if let Some(last) = docs.last_mut() {
            last.push('\n');
            last.push_str(line);
        }
    }
    docs
}

/// Recognizes which template produced `prompt`.
pub fn parse_prompt(prompt: &str) -> Option<ParsedPrompt> {
    if let Some(body) = prompt.strip_prefix(RANKING_HEADER) {
        let body = body.strip_suffix(RANKING_FOOTER)?.strip_suffix("\n\n")?;
        let body = body.strip_prefix("\n\nQuery: ")?;
        let (query, list) = split_once_exact(body, RANKING_DOCS)?;
        return Some(ParsedPrompt::Ranking {
            query: query.to_string(),
            docs: parse_doc_list(list),
        });
    }
    if let Some(body) = prompt.strip_prefix(PAIRWISE_HEADER) {
        let body = body.strip_suffix(PAIRWISE_FOOTER)?.strip_suffix("\n\n")?;
        let body = body.strip_prefix("\n\nQuery: ")?;
        let (query, rest) = split_once_exact(body, PAIRWISE_A)?;
        let j = rest.rfind(PAIRWISE_B)?;
        return Some(ParsedPrompt::Pairwise {
            query: query.to_string(),
            a: rest[..j].to_string(),
            b: rest[j + PAIRWISE_B.len()..].to_string(),
        });
    }
    if prompt.starts_with(DISTILL_HEADER) {
        let convo = between(prompt, DISTILL_CONVERSATION, DISTILL_FOOTER)?;
        let turns = convo
            .lines()
            .filter_map(|l| l.split_once(": "))
            .map(|(r, t)| (r.to_string(), t.to_string()))
            .collect();
        return Some(ParsedPrompt::Distill { turns });
    }
    if let Some(body) = prompt.strip_prefix(INSTRUCTION_HEADER) {
        let body = body.strip_suffix(INSTRUCTION_FOOTER)?;
        let body = body.strip_prefix(INSTRUCTION_HISTORY)?;
        let (history, rest) = split_once_exact(body, INSTRUCTION_QUERY)?;
        let j = rest.rfind(INSTRUCTION_DOC)?;
        return Some(ParsedPrompt::Instruction {
            history: history.to_string(),
            query: rest[..j].to_string(),
            document: rest[j + INSTRUCTION_DOC.len()..].to_string(),
        });
    }
    if let Some(body) = prompt.strip_prefix(DISTRACTOR_HEADER) {
        let body = body.strip_suffix(DISTRACTOR_FOOTER)?;
        let k = body.rfind(DISTRACTOR_COUNT)?;
        let n = body[k + DISTRACTOR_COUNT.len()..].parse().ok()?;
        let body = body[..k].strip_prefix(DISTRACTOR_QUERY)?;
        let j = body.rfind(DISTRACTOR_ANSWER)?;
        return Some(ParsedPrompt::Distractor {
            query: body[..j].to_string(),
            answer: body[j + DISTRACTOR_ANSWER.len()..].to_string(),
            n,
        });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t))
            .collect()
    }

    #[test]
    fn ranking_prompt_layout() {
        let q = Query::new("q", "where is the meeting");
        let p = render_ranking_prompt(&q, &docs(&["room 4", "lunch", "the meeting is in room 4"]));
        assert!(p.contains("Query: where is the meeting\n"));
        assert!(p.contains("Document list:\n[0] room 4\n[1] lunch\n[2] the meeting is in room 4\n"));
        assert!(p.ends_with("Output only the JSON array, nothing else."));
    }

    #[test]
    fn every_template_parses_back() {
        let q = Query::new("q", "budget for the trip");
        let a = Document::new("a", "Budget is 40k");
        let b = Document::new("b", "line one\nline two");
        let ds = vec![a.clone(), b.clone()];

        match parse_prompt(&render_ranking_prompt(&q, &ds)).unwrap() {
            ParsedPrompt::Ranking { query, docs } => {
                assert_eq!(query, q.text);
                assert_eq!(docs, vec![a.text.clone(), b.text.clone()]);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            parse_prompt(&render_pairwise_prompt(&q, &a, &b)),
            Some(ParsedPrompt::Pairwise { query: q.text.clone(), a: a.text.clone(), b: b.text.clone() })
        );
        let turns = vec![DialogueTurn { role: Role::User, text: "hi there".into(), turn_index: 0 }];
        assert_eq!(
            parse_prompt(&render_distill_prompt(&turns, 64)),
            Some(ParsedPrompt::Distill { turns: vec![("user".into(), "hi there".into())] })
        );
        assert_eq!(
            parse_prompt(&render_instruction_prompt("h", &q, &a)),
            Some(ParsedPrompt::Instruction { history: "h".into(), query: q.text.clone(), document: a.text.clone() })
        );
        assert_eq!(
            parse_prompt(&render_distractor_prompt(&q, &a, 5)),
            Some(ParsedPrompt::Distractor { query: q.text.clone(), answer: a.text.clone(), n: 5 })
        );
        assert_eq!(parse_prompt("tell me a joke"), None);
    }
}

//! Stage runners shared by the subcommands, and the chained `pipeline run`
//! with its content-hash manifest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, Config, Teachers};
use crate::dialogue::{build_examples, positive_doc_id, Dialogue, Scorers, UpstreamLabels};
use crate::digest::{derive_seed, file_sha256};
use crate::elo::{elo_records, fit_bradley_terry_from, Band, BtFitConfig, EloRecord};
use crate::error::{Error, Result};
use crate::io::{read_jsonl_vec, write_jsonl};
use crate::judge::{Judge, JudgeConfig, PairwisePreference, PoolJudgment, RawJudgment, ResumeLog};
use crate::model::{rank_order, Candidate, CandidatePool, Document, QrelRecord, Query, Role};
use crate::negatives::{filter_candidates, FilterDecision, NegativeCandidate};
use crate::teacher::Teacher;
use crate::text::{Scorer, TokenCosine, TokenOverlap};

/// Rounds to 10 decimals so artifacts do not depend on last-ulp differences
/// between math libraries.
pub fn stable(x: f64) -> f64 {
    let r = (x * 1e10).round() / 1e10;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Records derived from a dialogue corpus.
#[derive(Debug, Clone, Default)]
pub struct Prepared {
    pub queries: Vec<Query>,
    pub docs: Vec<Document>,
    pub pools: Vec<CandidatePool>,
    pub qrels: Vec<QrelRecord>,
    pub candidates: Vec<NegativeCandidate>,
}

/// Turns dialogues into retrieval data: one query per answered user turn,
/// every answer as a corpus document, a lexical top-`pool_size` pool per
/// query (always containing the query's own answer) and binary qrels.
pub fn prepare(dialogues: &[Dialogue], pool_size: usize) -> Result<Prepared> {
    let mut seen = BTreeSet::new();
    let mut out = Prepared::default();
    let mut positives: Vec<String> = Vec::new();
    for d in dialogues {
        d.validate()?;
        if !seen.insert(d.id.clone()) {
            return Err(Error::invalid(format!("duplicate dialogue id {}", d.id)));
        }
        for i in d.answered_turns() {
            let user = &d.turns[i];
            let answer = &d.turns[i + 1];
            debug_assert_eq!(answer.role, Role::Assistant);
            let doc_id = positive_doc_id(&d.id, answer.turn_index);
            out.queries.push(Query {
                id: d.query_id(user),
                text: user.text.clone(),
                category: d.category.clone(),
                history: Some(d.turns[..i].to_vec()),
            });
            out.docs.push(Document::new(doc_id.clone(), answer.text.clone()));
            positives.push(doc_id);
        }
    }
    let scorer = TokenCosine;
    let verifier = TokenOverlap;
    let texts: HashMap<&str, &str> = out.docs.iter().map(|d| (d.id.as_str(), d.text.as_str())).collect();
    let rows: Vec<(CandidatePool, Vec<NegativeCandidate>)> = out
        .queries
        .par_iter()
        .zip(&positives)
        .map(|(q, pos)| {
            let mut scored: Vec<(String, f64)> = out
                .docs
                .iter()
                .map(|d| (d.id.clone(), stable(scorer.score(&q.text, &d.text))))
                .collect();
            scored.sort_by(|a, b| rank_order(&a.0, a.1, &b.0, b.1));
            let mut top: Vec<(String, f64)> = scored.iter().take(pool_size).cloned().collect();
            if !top.iter().any(|(id, _)| id == pos) {
                top.pop();
                top.push(scored.iter().find(|(id, _)| id == pos).expect("positive scored").clone());
                top.sort_by(|a, b| rank_order(&a.0, a.1, &b.0, b.1));
            }
            let candidates = top
                .iter()
                .map(|(id, sim)| NegativeCandidate {
                    query_id: q.id.clone(),
                    doc_id: id.clone(),
                    sim: *sim,
                    verifier_score: Some(stable(verifier.score(&q.text, texts[id.as_str()]))),
                    positive: id == pos,
                })
                .collect();
            let pool = CandidatePool {
                query_id: q.id.clone(),
                candidates: top.into_iter().map(|(doc_id, sim)| Candidate { doc_id, sim }).collect(),
            };
            (pool, candidates)
        })
        .collect();
    for ((pool, cands), pos) in rows.into_iter().zip(&positives) {
        out.qrels.push(QrelRecord {
            query_id: pool.query_id.clone(),
            doc_id: pos.clone(),
            grade: 1,
        });
        out.pools.push(pool);
        out.candidates.extend(cands);
    }
    Ok(out)
}

/// Called with each finished pool, possibly from several threads.
pub type PoolSink<'a> = &'a (dyn Fn(&PoolJudgment) -> Result<()> + Sync);

/// Judges every pool, in parallel across queries; output in pool order.
#[allow(clippy::too_many_arguments)]
pub fn judge_all(
    queries: &[Query],
    pools: &[CandidatePool],
    docs: &[Document],
    teachers: &[&dyn Teacher],
    config: &JudgeConfig,
    seed: u64,
    resume: &ResumeLog,
    sink: Option<PoolSink>,
) -> Result<(Vec<RawJudgment>, Vec<PairwisePreference>)> {
    config.validate()?;
    let by_query: HashMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let doc_index: HashMap<String, Document> = docs.iter().map(|d| (d.id.clone(), d.clone())).collect();
    let judge = Judge {
        teachers,
        config: config.clone(),
        seed,
    };
    let results: Vec<_> = pools
        .par_iter()
        .map(|pool| {
            let q = by_query
                .get(pool.query_id.as_str())
                .ok_or_else(|| Error::invalid(format!("pool {} has no query record", pool.query_id)))?;
            let r = judge.judge_pool(q, pool, &doc_index, resume)?;
            if let Some(sink) = sink {
                sink(&r)?;
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let mut judgments = Vec::new();
    let mut prefs = Vec::new();
    for r in results {
        judgments.extend(r.judgments);
        prefs.extend(r.preferences);
    }
    Ok((judgments, prefs))
}

/// Fits every query's preferences. Pool documents without a resolved
/// comparison are included at the prior mean when `pools` is given.
pub fn fit_all(prefs: &[PairwisePreference], pools: Option<&[CandidatePool]>, config: &BtFitConfig) -> Result<Vec<EloRecord>> {
    config.validate()?;
    let mut grouped: BTreeMap<&str, Vec<PairwisePreference>> = BTreeMap::new();
    for p in prefs {
        grouped.entry(p.query_id.as_str()).or_default().push(p.clone());
    }
    let pool_docs: HashMap<&str, Vec<String>> = pools
        .unwrap_or(&[])
        .iter()
        .map(|p| (p.query_id.as_str(), p.doc_ids().map(String::from).collect()))
        .collect();
    for p in pools.unwrap_or(&[]) {
        if !grouped.contains_key(p.query_id.as_str()) {
            log::warn!("{}: no resolved preferences; query not scored", p.query_id);
        }
    }
    let per_query: Vec<Vec<EloRecord>> = grouped
        .par_iter()
        .map(|(qid, prefs)| {
            let extra = pool_docs.get(qid).map_or(&[][..], Vec::as_slice);
            let fit = fit_bradley_terry_from(prefs, extra, config, None)?;
            if !fit.converged {
                log::warn!("{qid}: fit did not converge in {} iterations", fit.iterations_used);
            }
            Ok(elo_records(&fit, config.normalization))
        })
        .collect::<Result<_>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

fn stable_elo(mut r: EloRecord) -> EloRecord {
    r.elo = stable(r.elo);
    r.score = stable(r.score);
    r.band = Band::from_score(r.score);
    r
}

/// Kept, non-relabeled filter survivors as documents, by query.
pub fn mined_negatives(decisions: &[FilterDecision], docs: &[Document]) -> Result<BTreeMap<String, Vec<Document>>> {
    let index: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut out: BTreeMap<String, Vec<Document>> = BTreeMap::new();
    for d in decisions.iter().filter(|d| d.kept && !d.relabel) {
        let doc = index
            .get(d.doc_id.as_str())
            .ok_or_else(|| Error::invalid(format!("decision references unknown document {}", d.doc_id)))?;
        out.entry(d.query_id.clone()).or_default().push((*doc).clone());
    }
    Ok(out)
}

pub fn scores_by_query(records: &[EloRecord]) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in records {
        out.entry(r.query_id.clone()).or_default().insert(r.doc_id.clone(), r.score);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub config_hash: String,
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default)]
pub struct PipelineReport {
    pub manifest: Vec<ManifestEntry>,
    /// Stages whose recorded inputs and outputs already matched.
    pub reused: Vec<String>,
    pub examples: usize,
    pub incomplete: Vec<String>,
}

struct Runner<'a> {
    out_dir: &'a Path,
    seed: u64,
    previous: Vec<ManifestEntry>,
    report: PipelineReport,
}

impl Runner<'_> {
    fn label(&self, path: &Path) -> String {
        match path.strip_prefix(self.out_dir) {
            Ok(rel) => rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
            Err(_) => path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into()),
        }
    }

    fn hashes(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        paths.iter().map(|p| Ok((self.label(p), file_sha256(p)?))).collect()
    }

    fn up_to_date(&self, entry: &ManifestEntry) -> bool {
        self.previous.iter().any(|prev| {
            prev.stage == entry.stage
                && prev.inputs == entry.inputs
                && prev.seed == entry.seed
                && prev.config_hash == entry.config_hash
                && prev.outputs.iter().all(|(rel, hash)| {
                    file_sha256(self.out_dir.join(rel)).is_ok_and(|h| &h == hash)
                })
        })
    }

    fn stage(
        &mut self,
        name: &str,
        inputs: &[PathBuf],
        outputs: &[&str],
        hash: String,
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<()> {
        let mut entry = ManifestEntry {
            stage: name.to_string(),
            inputs: self.hashes(inputs)?,
            outputs: BTreeMap::new(),
            seed: self.seed,
            config_hash: hash,
        };
        if self.up_to_date(&entry) {
            log::info!("{name}: inputs unchanged, reusing outputs");
            let prev = self.previous.iter().find(|p| p.stage == name).expect("matched");
            entry.outputs = prev.outputs.clone();
            self.report.reused.push(name.to_string());
        } else {
            log::info!("{name}: running");
            body(self.out_dir)?;
            let paths: Vec<PathBuf> = outputs.iter().map(|o| self.out_dir.join(o)).collect();
            entry.outputs = self.hashes(&paths)?;
        }
        self.report.manifest.push(entry);
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.out_dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&self.report.manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Runs prepare, judge, fit-elo, filter-negatives and build-dialogue over
/// `dialogues`, writing every artifact and `manifest.json` into `out_dir`.
/// A stage whose inputs, seed, config and outputs match the existing
/// manifest is skipped.
pub fn run_pipeline(dialogues: &Path, out_dir: &Path, config: &Config, teachers: &Teachers) -> Result<PipelineReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let seed = config.seed();
    let previous: Vec<ManifestEntry> = match std::fs::read_to_string(out_dir.join(MANIFEST)) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_else(|e| {
            log::warn!("ignoring unreadable manifest: {e}");
            Vec::new()
        }),
        Err(_) => Vec::new(),
    };
    let mut r = Runner {
        out_dir,
        seed,
        previous,
        report: PipelineReport::default(),
    };
    let p = |name: &str| out_dir.join(name);
    let panel_names: Vec<String> = teachers.panel.iter().map(|t| t.name().to_string()).collect();

    r.stage(
        "prepare",
        &[dialogues.to_path_buf()],
        &["queries.jsonl", "docs.jsonl", "pools.jsonl", "qrels.jsonl", "candidates.jsonl"],
        config_hash(&config.pipeline),
        |dir| {
            let ds: Vec<Dialogue> = read_jsonl_vec(dialogues)?;
            let prep = prepare(&ds, config.pipeline.pool_size)?;
            write_jsonl(dir.join("queries.jsonl"), &prep.queries)?;
            write_jsonl(dir.join("docs.jsonl"), &prep.docs)?;
            write_jsonl(dir.join("pools.jsonl"), &prep.pools)?;
            write_jsonl(dir.join("qrels.jsonl"), &prep.qrels)?;
            write_jsonl(dir.join("candidates.jsonl"), &prep.candidates)
        },
    )?;

    r.stage(
        "judge",
        &[p("queries.jsonl"), p("docs.jsonl"), p("pools.jsonl")],
        &["judgments.jsonl", "preferences.jsonl"],
        config_hash(&(&config.judge, &panel_names)),
        |dir| {
            let queries: Vec<Query> = read_jsonl_vec(dir.join("queries.jsonl"))?;
            let docs: Vec<Document> = read_jsonl_vec(dir.join("docs.jsonl"))?;
            let pools: Vec<CandidatePool> = read_jsonl_vec(dir.join("pools.jsonl"))?;
            let refs = teachers.panel_refs();
            let (judgments, prefs) = judge_all(&queries, &pools, &docs, &refs, &config.judge, seed, &ResumeLog::default(), None)?;
            write_jsonl(dir.join("judgments.jsonl"), &judgments)?;
            write_jsonl(dir.join("preferences.jsonl"), &prefs)
        },
    )?;

    r.stage(
        "fit-elo",
        &[p("preferences.jsonl"), p("pools.jsonl")],
        &["elo.jsonl"],
        config_hash(&config.elo),
        |dir| {
            let prefs: Vec<PairwisePreference> = read_jsonl_vec(dir.join("preferences.jsonl"))?;
            let pools: Vec<CandidatePool> = read_jsonl_vec(dir.join("pools.jsonl"))?;
            let records: Vec<EloRecord> = fit_all(&prefs, Some(&pools), &config.elo)?.into_iter().map(stable_elo).collect();
            write_jsonl(dir.join("elo.jsonl"), &records)
        },
    )?;

    r.stage(
        "filter-negatives",
        &[p("candidates.jsonl")],
        &["decisions.jsonl"],
        config_hash(&config.filter),
        |dir| {
            let cands: Vec<NegativeCandidate> = read_jsonl_vec(dir.join("candidates.jsonl"))?;
            let mut decisions = filter_candidates(&cands, &config.filter, seed)?;
            for d in &mut decisions {
                d.gap = stable(d.gap);
            }
            write_jsonl(dir.join("decisions.jsonl"), &decisions)
        },
    )?;

    let mut built = (0usize, Vec::new());
    r.stage(
        "build-dialogue",
        &[dialogues.to_path_buf(), p("docs.jsonl"), p("elo.jsonl"), p("decisions.jsonl")],
        &["examples.jsonl"],
        config_hash(&(&config.dialogue, &config.filter, teachers.writer.name())),
        |dir| {
            let ds: Vec<Dialogue> = read_jsonl_vec(dialogues)?;
            let docs: Vec<Document> = read_jsonl_vec(dir.join("docs.jsonl"))?;
            let elo: Vec<EloRecord> = read_jsonl_vec(dir.join("elo.jsonl"))?;
            let decisions: Vec<FilterDecision> = read_jsonl_vec(dir.join("decisions.jsonl"))?;
            let upstream = UpstreamLabels {
                scores: scores_by_query(&elo),
                mined: mined_negatives(&decisions, &docs)?,
            };
            let scorers = Scorers {
                similarity: &TokenCosine,
                verifier: &TokenOverlap,
            };
            let out = build_examples(
                &ds,
                teachers.writer.as_ref(),
                &scorers,
                &config.dialogue,
                &config.filter,
                &upstream,
                derive_seed(seed, "build-dialogue"),
            )?;
            let mut examples = out.examples;
            for ex in &mut examples {
                if let Some(labels) = &mut ex.soft_labels {
                    for v in labels.values_mut() {
                        *v = stable(*v);
                    }
                }
            }
            write_jsonl(dir.join("examples.jsonl"), &examples)?;
            built = (examples.len(), out.incomplete);
            Ok(())
        },
    )?;

    let mut report = r.report;
    if report.reused.iter().any(|s| s == "build-dialogue") {
        let text = std::fs::read_to_string(p("examples.jsonl")).map_err(|e| Error::io(p("examples.jsonl"), e))?;
        built.0 = text.lines().filter(|l| !l.trim().is_empty()).count();
    }
    report.examples = built.0;
    report.incomplete = built.1;
    Ok(report)
}

//! Hard-negative filtering by first-stage similarity gap.
//!
//! For a negative with similarity `s_neg` to the query and the positive's
//! `s_pos`, the gap is `s_pos - s_neg`:
//!
//! | gap          | bucket          | action                               |
//! |--------------|-----------------|--------------------------------------|
//! | `< 0`        | suspect error   | cross-verify; keep, drop or relabel  |
//! | `[0, 0.2)`   | hard negative   | keep                                 |
//! | `>= 0.2`     | easy negative   | keep a seeded 20% sample             |

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::derive_seed;
use crate::error::{Error, Result};

pub const HARD_GAP_LIMIT: f64 = 0.2;

fn is_false(b: &bool) -> bool {
    !*b
}

/// One input line: a candidate with its precomputed similarity to the query.
/// Lines flagged `positive` supply the reference similarity for their query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeCandidate {
    pub query_id: String,
    pub doc_id: String,
    pub sim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier_score: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    SuspectError,
    HardNegative,
    EasyNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub query_id: String,
    pub doc_id: String,
    pub gap: f64,
    pub bucket: Bucket,
    pub kept: bool,
    /// The document likely answers the query; queue it for relabeling.
    #[serde(default, skip_serializing_if = "is_false")]
    pub relabel: bool,
    pub reason: String,
}

pub fn compute_gap(pos_sim: f64, neg_sim: f64) -> f64 {
    pos_sim - neg_sim
}

/// Half-open step function: 0 is hard, 0.2 is easy.
pub fn classify_gap(gap: f64) -> Bucket {
    if gap < 0.0 {
        Bucket::SuspectError
    } else if gap < HARD_GAP_LIMIT {
        Bucket::HardNegative
    } else {
        Bucket::EasyNegative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    Keep,
    Drop,
    Relabel,
}

/// Second opinion on a suspect negative using verifier relevance scores.
pub fn cross_verify(candidate: &NegativeCandidate, positive_verifier_score: f64, margin: f64) -> Result<Verification> {
    let Some(v) = candidate.verifier_score else {
        return Err(Error::invalid(format!(
            "{}/{}: suspect negative has no verifier_score; run the verifier first",
            candidate.query_id, candidate.doc_id
        )));
    };
    Ok(if v > positive_verifier_score + margin {
        Verification::Relabel
    } else if v >= positive_verifier_score - margin {
        Verification::Drop
    } else {
        Verification::Keep
    })
}

/// `ceil(rate * n)`, robust to representation error in `rate * n`.
pub fn easy_quota(rate: f64, n: usize) -> usize {
    ((rate * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Keeps `ceil(rate * n)` items chosen by a seeded shuffle, returned in
/// their input order with `kept` set.
pub fn subsample_easy(easy: &[FilterDecision], rate: f64, seed: u64) -> Result<Vec<FilterDecision>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("easy-negative rate {rate} outside [0, 1]")));
    }
    let quota = easy_quota(rate, easy.len());
    let mut order: Vec<usize> = (0..easy.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = order[..quota].to_vec();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|i| FilterDecision {
            kept: true,
            reason: format!("easy negative sampled at rate {rate}"),
            ..easy[i].clone()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Verifier margin for ambiguous suspects.
    pub delta: f64,
    pub easy_rate: f64,
    /// Apply the easy quota across all queries instead of per query.
    pub global_quota: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            delta: 0.1,
            easy_rate: 0.2,
            global_quota: false,
        }
    }
}

/// The reference positive for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveRef {
    pub sim: f64,
    pub verifier_score: Option<f64>,
}

fn easy_pending(c: &NegativeCandidate, gap: f64) -> FilterDecision {
    FilterDecision {
        query_id: c.query_id.clone(),
        doc_id: c.doc_id.clone(),
        gap,
        bucket: Bucket::EasyNegative,
        kept: false,
        relabel: false,
        reason: "easy negative not sampled".into(),
    }
}

/// Decides every negative of one query. With `sample_easy == false` easy
/// negatives are returned unsampled so a caller can apply a global quota.
fn decide_query(
    positive: PositiveRef,
    negatives: &[NegativeCandidate],
    config: &FilterConfig,
    seed: u64,
    sample_easy: bool,
) -> Result<Vec<FilterDecision>> {
    let mut out = Vec::with_capacity(negatives.len());
    let mut easy_slots = Vec::new();
    for c in negatives {
        if !c.sim.is_finite() {
            return Err(Error::invalid(format!("{}/{}: non-finite similarity", c.query_id, c.doc_id)));
        }
        let gap = compute_gap(positive.sim, c.sim);
        let bucket = classify_gap(gap);
        let decision = match bucket {
            Bucket::SuspectError => {
                let pos_v = positive.verifier_score.ok_or_else(|| {
                    Error::invalid(format!(
                        "{}: positive has no verifier_score but suspect negatives need cross-verification",
                        c.query_id
                    ))
                })?;
                let (kept, relabel, reason) = match cross_verify(c, pos_v, config.delta)? {
                    Verification::Keep => (true, false, "cleared by cross-verification; kept as hard negative"),
                    Verification::Drop => (false, false, "ambiguous under cross-verification; dropped"),
                    Verification::Relabel => (false, true, "verifier prefers it over the positive; relabel"),
                };
                FilterDecision {
                    query_id: c.query_id.clone(),
                    doc_id: c.doc_id.clone(),
                    gap,
                    bucket,
                    kept,
                    relabel,
                    reason: reason.into(),
                }
            }
            Bucket::HardNegative => FilterDecision {
                query_id: c.query_id.clone(),
                doc_id: c.doc_id.clone(),
                gap,
                bucket,
                kept: true,
                relabel: false,
                reason: "hard negative".into(),
            },
            Bucket::EasyNegative => {
                easy_slots.push(out.len());
                easy_pending(c, gap)
            }
        };
        out.push(decision);
    }
    if sample_easy {
        let easy: Vec<FilterDecision> = easy_slots.iter().map(|&i| out[i].clone()).collect();
        apply_sample(&mut out, &easy_slots, &easy, config.easy_rate, seed)?;
    }
    Ok(out)
}

fn apply_sample(
    out: &mut [FilterDecision],
    slots: &[usize],
    easy: &[FilterDecision],
    rate: f64,
    seed: u64,
) -> Result<()> {
    let kept = subsample_easy(easy, rate, seed)?;
    let mut kept = kept.into_iter().peekable();
    for &slot in slots {
        if kept.peek().is_some_and(|d| d.doc_id == out[slot].doc_id && d.query_id == out[slot].query_id) {
            out[slot] = kept.next().expect("peeked");
        }
    }
    Ok(())
}

/// Filters one query's negatives against its positive.
pub fn filter_query(
    positive: PositiveRef,
    negatives: &[NegativeCandidate],
    config: &FilterConfig,
    seed: u64,
) -> Result<Vec<FilterDecision>> {
    decide_query(positive, negatives, config, seed, true)
}

/// Filters a whole candidate file. Each query needs at least one line with
/// `positive: true`; with several, the most similar positive is the
/// reference. Output is grouped by query id, input order within a query.
pub fn filter_candidates(candidates: &[NegativeCandidate], config: &FilterConfig, seed: u64) -> Result<Vec<FilterDecision>> {
    let mut groups: BTreeMap<&str, (Vec<&NegativeCandidate>, Vec<NegativeCandidate>)> = BTreeMap::new();
    for c in candidates {
        let g = groups.entry(c.query_id.as_str()).or_default();
        if c.positive {
            g.0.push(c);
        } else {
            g.1.push(c.clone());
        }
    }
    let per_query: Vec<Vec<FilterDecision>> = groups
        .par_iter()
        .map(|(qid, (positives, negatives))| {
            let best = positives
                .iter()
                .max_by(|a, b| a.sim.total_cmp(&b.sim))
                .ok_or_else(|| Error::invalid(format!("query {qid} has no positive candidate")))?;
            let positive = PositiveRef {
                sim: best.sim,
                verifier_score: best.verifier_score,
            };
            decide_query(positive, negatives, config, derive_seed(seed, qid), !config.global_quota)
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<FilterDecision> = per_query.into_iter().flatten().collect();
    if config.global_quota {
        let slots: Vec<usize> = (0..out.len()).filter(|&i| out[i].bucket == Bucket::EasyNegative).collect();
        let easy: Vec<FilterDecision> = slots.iter().map(|&i| out[i].clone()).collect();
        apply_sample(&mut out, &slots, &easy, config.easy_rate, derive_seed(seed, "global-easy-quota"))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(doc: &str, sim: f64, v: Option<f64>) -> NegativeCandidate {
        NegativeCandidate { query_id: "q".into(), doc_id: doc.into(), sim, verifier_score: v, positive: false }
    }

    #[test]
    fn gaps() {
        assert_eq!(compute_gap(0.8, 0.8), 0.0);
        assert!((compute_gap(0.9, 0.6) - 0.3).abs() < 1e-15);
        assert!((compute_gap(0.5, 0.7) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn buckets() {
        assert_eq!(classify_gap(-0.05), Bucket::SuspectError);
        assert_eq!(classify_gap(0.0), Bucket::HardNegative);
        assert_eq!(classify_gap(0.1), Bucket::HardNegative);
        assert_eq!(classify_gap(0.2), Bucket::EasyNegative);
        assert_eq!(classify_gap(0.35), Bucket::EasyNegative);
    }

    #[test]
    fn verification_rules() {
        assert_eq!(cross_verify(&cand("d", 0.0, Some(0.9)), 0.4, 0.1).unwrap(), Verification::Relabel);
        assert_eq!(cross_verify(&cand("d", 0.0, Some(0.45)), 0.5, 0.1).unwrap(), Verification::Drop);
        assert_eq!(cross_verify(&cand("d", 0.0, Some(0.1)), 0.8, 0.1).unwrap(), Verification::Keep);
        assert!(cross_verify(&cand("d", 0.0, None), 0.8, 0.1).is_err());
    }

    #[test]
    fn quota_rounding() {
        assert_eq!(easy_quota(0.2, 10), 2);
        assert_eq!(easy_quota(0.2, 15), 3);
        assert_eq!(easy_quota(0.2, 1), 1);
        assert_eq!(easy_quota(0.0, 10), 0);
        assert_eq!(easy_quota(1.0, 7), 7);
    }

    #[test]
    fn subsample_counts_and_replays() {
        let easy: Vec<FilterDecision> = (0..10).map(|i| easy_pending(&cand(&format!("e{i}"), 0.0, None), 0.5)).collect();
        let a = subsample_easy(&easy, 0.2, 9).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|d| d.kept));
        assert_eq!(a, subsample_easy(&easy, 0.2, 9).unwrap());
        assert!(subsample_easy(&easy, 0.0, 9).unwrap().is_empty());
        assert!(subsample_easy(&easy, 1.5, 9).is_err());
    }

    #[test]
    fn every_candidate_decided_once() {
        let negs = vec![
            cand("s", 0.9, Some(0.1)),
            cand("h", 0.75, None),
            cand("e1", 0.1, None),
            cand("e2", 0.2, None),
            cand("e3", 0.3, None),
        ];
        let pos = PositiveRef { sim: 0.8, verifier_score: Some(0.9) };
        let d = filter_query(pos, &negs, &FilterConfig::default(), 1).unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d[0].bucket, Bucket::SuspectError);
        assert!(d[0].kept);
        assert_eq!(d[1].bucket, Bucket::HardNegative);
        let easy_kept = d.iter().filter(|x| x.bucket == Bucket::EasyNegative && x.kept).count();
        assert_eq!(easy_kept, 1);
    }

    #[test]
    fn missing_positive_is_an_error() {
        assert!(filter_candidates(&[cand("a", 0.1, None)], &FilterConfig::default(), 0).is_err());
    }

    #[test]
    fn global_quota_spans_queries() {
        let mut all = Vec::new();
        for q in ["q1", "q2"] {
            all.push(NegativeCandidate { query_id: q.into(), doc_id: "pos".into(), sim: 0.9, verifier_score: None, positive: true });
            for i in 0..6 {
                all.push(NegativeCandidate { query_id: q.into(), doc_id: format!("e{i}"), sim: 0.1, verifier_score: None, positive: false });
            }
        }
        let per_query = filter_candidates(&all, &FilterConfig::default(), 3).unwrap();
        assert_eq!(per_query.iter().filter(|d| d.kept).count(), 4);
        let global = FilterConfig { global_quota: true, ..Default::default() };
        let g = filter_candidates(&all, &global, 3).unwrap();
        assert_eq!(g.iter().filter(|d| d.kept).count(), 3);
        assert_eq!(g.len(), 12);
    }
}

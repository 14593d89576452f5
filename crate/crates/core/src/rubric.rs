//! Weighted audit score over four quality dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RubricWeights {
    pub semantic_relevance: f64,
    pub attribute_precision: f64,
    pub information_completeness: f64,
    pub answer_density: f64,
}

impl Default for RubricWeights {
    fn default() -> Self {
        RubricWeights {
            semantic_relevance: 0.30,
            attribute_precision: 0.30,
            information_completeness: 0.25,
            answer_density: 0.15,
        }
    }
}

impl RubricWeights {
    fn as_array(&self) -> [f64; 4] {
        [
            self.semantic_relevance,
            self.attribute_precision,
            self.information_completeness,
            self.answer_density,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("rubric weights must be finite and nonnegative"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("rubric weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Sub-scores in [0, 1], supplied by a teacher or a human auditor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RubricScores {
    pub semantic_relevance: f64,
    pub attribute_precision: f64,
    pub information_completeness: f64,
    pub answer_density: f64,
}

impl RubricScores {
    pub fn new(sr: f64, ap: f64, ic: f64, ad: f64) -> Self {
        RubricScores {
            semantic_relevance: sr,
            attribute_precision: ap,
            information_completeness: ic,
            answer_density: ad,
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [
            self.semantic_relevance,
            self.attribute_precision,
            self.information_completeness,
            self.answer_density,
        ]
    }
}

pub fn aggregate_rubric(scores: &RubricScores) -> Result<f64> {
    aggregate_rubric_with(scores, &RubricWeights::default())
}

pub fn aggregate_rubric_with(scores: &RubricScores, weights: &RubricWeights) -> Result<f64> {
    weights.validate()?;
    let s = scores.as_array();
    if let Some(bad) = s.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!("rubric sub-score {bad} outside [0, 1]")));
    }
    let total: f64 = s.iter().zip(weights.as_array()).map(|(x, w)| x * w).sum();
    Ok(total.clamp(0.0, 1.0))
}

/// One audit line; `total` is filled in on output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub query_id: String,
    pub doc_id: String,
    pub sr: f64,
    pub ap: f64,
    pub ic: f64,
    pub ad: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
}

impl AuditRecord {
    pub fn scores(&self) -> RubricScores {
        RubricScores::new(self.sr, self.ap, self.ic, self.ad)
    }
}

/// Scores every record; with `min_total`, records below it are dropped.
pub fn score_audit(records: Vec<AuditRecord>, weights: &RubricWeights, min_total: Option<f64>) -> Result<Vec<AuditRecord>> {
    let mut out = Vec::with_capacity(records.len());
    for mut r in records {
        let total = aggregate_rubric_with(&r.scores(), weights)
            .map_err(|e| Error::invalid(format!("{}/{}: {e}", r.query_id, r.doc_id)))?;
        if min_total.is_some_and(|m| total < m) {
            continue;
        }
        r.total = Some(total);
        out.push(r);
    }
    Ok(out)
}

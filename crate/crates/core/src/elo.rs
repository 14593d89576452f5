//! Bradley-Terry fitting of Elo-style document scores from pairwise
//! preferences, and their calibration onto five relevance bands.
//!
//! The model is `P(i beats j) = sigmoid(elo_i - elo_j)`. The fit maximizes
//!
//! ```text
//! sum_prefs w * ln sigmoid(elo_winner - elo_loser) - (lambda / 2) * sum_docs elo^2
//! ```
//!
//! by cyclic minorize-maximize: along coordinate `i` the objective's
//! curvature is bounded by `n_i / 4 + lambda` (`n_i` the total weight of
//! comparisons involving `i`), so the step `gradient_i / (n_i / 4 + lambda)`
//! never decreases it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::PairwisePreference;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(x)` without overflow for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability that a document with score `elo_i` is preferred over one
/// with `elo_j`.
pub fn pairwise_probability(elo_i: f64, elo_j: f64) -> f64 {
    sigmoid(elo_i - elo_j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Normalization {
    /// `sigmoid(elo / tau)`.
    Logistic { tau: f64 },
    /// Affine map of the query's [min, max] onto [0, 1].
    MinMax,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Logistic { tau: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BtFitConfig {
    pub prior_strength: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub normalization: Normalization,
}

impl Default for BtFitConfig {
    fn default() -> Self {
        BtFitConfig {
            prior_strength: 0.1,
            tolerance: 1e-8,
            max_iterations: 1000,
            normalization: Normalization::default(),
        }
    }
}

impl BtFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("fit tolerance must be > 0"));
        }
        if !(self.prior_strength >= 0.0 && self.prior_strength.is_finite()) {
            return Err(Error::invalid("prior strength must be finite and >= 0"));
        }
        if let Normalization::Logistic { tau } = self.normalization {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::invalid("logistic tau must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EloScores {
    pub query_id: String,
    /// Mean-zero scores by document id.
    pub scores: BTreeMap<String, f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Win weights between indexed documents.
struct Tournament {
    ids: Vec<String>,
    /// `(opponent, wins_against, losses_against)` per document.
    edges: Vec<Vec<(usize, f64, f64)>>,
    /// Total comparison weight per document.
    volume: Vec<f64>,
}

impl Tournament {
    fn build(prefs: &[PairwisePreference], extra_docs: &[String]) -> Result<(String, Self)> {
        let Some(first) = prefs.first() else {
            return Err(Error::invalid("cannot fit scores from an empty preference list"));
        };
        let query_id = first.query_id.clone();
        let mut ids: Vec<String> = extra_docs.to_vec();
        let mut wins: BTreeMap<(String, String), f64> = BTreeMap::new();
        for p in prefs {
            if p.query_id != query_id {
                return Err(Error::invalid(format!(
                    "preferences mix queries {query_id} and {}",
                    p.query_id
                )));
            }
            if p.winner == p.loser {
                return Err(Error::invalid(format!("{}: document {} preferred over itself", query_id, p.winner)));
            }
            if !(p.weight.is_finite() && p.weight > 0.0) {
                return Err(Error::invalid(format!(
                    "{}: preference weight must be finite and > 0, got {}",
                    query_id, p.weight
                )));
            }
            ids.push(p.winner.clone());
            ids.push(p.loser.clone());
            *wins.entry((p.winner.clone(), p.loser.clone())).or_default() += p.weight;
        }
        ids.sort();
        ids.dedup();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let n = ids.len();
        let mut pair_weights: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
        for ((w, l), weight) in &wins {
            let (wi, li) = (index[w.as_str()], index[l.as_str()]);
            let e = pair_weights.entry((wi.min(li), wi.max(li))).or_default();
            if wi < li {
                e.0 += weight;
            } else {
                e.1 += weight;
            }
        }
        let mut edges = vec![Vec::new(); n];
        let mut volume = vec![0.0; n];
        for (&(a, b), &(a_wins, b_wins)) in &pair_weights {
            edges[a].push((b, a_wins, b_wins));
            edges[b].push((a, b_wins, a_wins));
            volume[a] += a_wins + b_wins;
            volume[b] += a_wins + b_wins;
        }
        Ok((query_id, Tournament { ids, edges, volume }))
    }

    fn gradient_at(&self, theta: &[f64], i: usize, lambda: f64) -> f64 {
        let mut g = -lambda * theta[i];
        for &(j, w, l) in &self.edges[i] {
            g += w - (w + l) * sigmoid(theta[i] - theta[j]);
        }
        g
    }

    fn objective(&self, theta: &[f64], lambda: f64) -> f64 {
        let mut f = -0.5 * lambda * theta.iter().map(|t| t * t).sum::<f64>();
        for (i, es) in self.edges.iter().enumerate() {
            for &(j, w, _) in es {
                if w > 0.0 {
                    f += w * log_sigmoid(theta[i] - theta[j]);
                }
            }
        }
        f
    }
}

/// Penalized log-likelihood of `scores` under the preferences.
pub fn penalized_log_likelihood(prefs: &[PairwisePreference], scores: &BTreeMap<String, f64>, lambda: f64) -> f64 {
    let ll: f64 = prefs
        .iter()
        .map(|p| p.weight * log_sigmoid(scores[&p.winner] - scores[&p.loser]))
        .sum();
    ll - 0.5 * lambda * scores.values().map(|s| s * s).sum::<f64>()
}

pub fn fit_bradley_terry(prefs: &[PairwisePreference], config: &BtFitConfig) -> Result<EloScores> {
    fit_bradley_terry_from(prefs, &[], config, None)
}

/// Full-control fit: `extra_docs` adds documents that may have no resolved
/// comparison (they stay at the prior mean), and `init` seeds the iteration.
pub fn fit_bradley_terry_from(
    prefs: &[PairwisePreference],
    extra_docs: &[String],
    config: &BtFitConfig,
    init: Option<&BTreeMap<String, f64>>,
) -> Result<EloScores> {
    config.validate()?;
    let (query_id, t) = Tournament::build(prefs, extra_docs)?;
    let n = t.ids.len();
    let lambda = config.prior_strength;
    let mut theta: Vec<f64> = t
        .ids
        .iter()
        .map(|id| init.and_then(|m| m.get(id)).copied().unwrap_or(0.0))
        .collect();
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("initial scores must be finite"));
    }
    recenter(&mut theta);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iterations {
        iterations += 1;
        let mut max_delta: f64 = 0.0;
        for i in 0..n {
            let curvature = t.volume[i] / 4.0 + lambda;
            if curvature == 0.0 {
                continue;
            }
            let step = t.gradient_at(&theta, i, lambda) / curvature;
            theta[i] += step;
            max_delta = max_delta.max(step.abs());
        }
        max_delta = max_delta.max(recenter(&mut theta));
        if max_delta < config.tolerance {
            converged = true;
            break;
        }
    }

    if !converged {
        log::debug!("{query_id}: minorize-maximize did not converge, switching to Newton");
        let (its, ok) = newton_ascent(&t, &mut theta, lambda, config);
        iterations += its;
        converged = ok;
    }

    let mean = theta.iter().sum::<f64>() / n as f64;
    let scores: BTreeMap<String, f64> = t.ids.into_iter().zip(theta.into_iter().map(|x| x - mean)).collect();
    if scores.values().any(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("{query_id}: fit produced non-finite scores")));
    }
    Ok(EloScores {
        query_id,
        scores,
        iterations_used: iterations,
        converged,
    })
}

/// Shifts `theta` to mean zero and returns the size of the shift. The
/// likelihood ignores a common shift and the prior is smallest at mean zero,
/// so this is an exact maximization along the all-ones direction.
fn recenter(theta: &mut [f64]) -> f64 {
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    theta.iter_mut().for_each(|x| *x -= mean);
    mean.abs()
}

/// Damped Newton ascent on the penalized objective; returns
/// (iterations, converged). The prior makes the Hessian negative definite.
fn newton_ascent(t: &Tournament, theta: &mut [f64], lambda: f64, config: &BtFitConfig) -> (usize, bool) {
    let n = theta.len();
    let mut f = t.objective(theta, lambda);
    for it in 1..=config.max_iterations {
        let g: Vec<f64> = (0..n).map(|i| t.gradient_at(theta, i, lambda)).collect();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = lambda;
            for &(j, w, l) in &t.edges[i] {
                let p = sigmoid(theta[i] - theta[j]);
                let c = (w + l) * p * (1.0 - p);
                h[i * n + i] += c;
                h[i * n + j] -= c;
            }
        }
        let Some(dir) = cholesky_solve(&mut h, &g, n) else {
            return (it, false);
        };
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let mut rate = 1.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(x, d)| x + rate * d).collect();
            let fc = t.objective(&cand, lambda);
            if fc >= f + 1e-4 * rate * slope || rate < 1e-12 {
                let max_delta = dir.iter().map(|d| (rate * d).abs()).fold(0.0, f64::max);
                theta.copy_from_slice(&cand);
                f = fc;
                if max_delta < config.tolerance {
                    return (it, true);
                }
                break;
            }
            rate *= 0.5;
        }
    }
    (config.max_iterations, false)
}

/// Solves `h x = b` for symmetric positive definite `h` (row-major, overwritten).
fn cholesky_solve(h: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = h[j * n + j];
        for k in 0..j {
            d -= h[j * n + k] * h[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        h[j * n + j] = d;
        for i in j + 1..n {
            let mut v = h[i * n + j];
            for k in 0..j {
                v -= h[i * n + k] * h[j * n + k];
            }
            h[i * n + j] = v / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= h[i * n + k] * y[k];
        }
        y[i] /= h[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= h[k * n + i] * y[k];
        }
        y[i] /= h[i * n + i];
    }
    Some(y)
}

/// Five-level relevance scale over [0, 1], half-open bands closed at 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Band {
    /// [0, 0.2)
    Irrelevant = 1,
    /// [0.2, 0.4): missing key information
    Low = 2,
    /// [0.4, 0.6)
    Partial = 3,
    /// [0.6, 0.8)
    High = 4,
    /// [0.8, 1.0]: direct answer
    Direct = 5,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Irrelevant, Band::Low, Band::Partial, Band::High, Band::Direct];

    pub fn from_score(score: f64) -> Band {
        if score < 0.2 {
            Band::Irrelevant
        } else if score < 0.4 {
            Band::Low
        } else if score < 0.6 {
            Band::Partial
        } else if score < 0.8 {
            Band::High
        } else {
            Band::Direct
        }
    }

    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::Irrelevant => "irrelevant",
            Band::Low => "low relevance",
            Band::Partial => "partially relevant",
            Band::High => "highly relevant",
            Band::Direct => "direct answer",
        }
    }
}

impl From<Band> for u8 {
    fn from(b: Band) -> u8 {
        b.level()
    }
}

impl TryFrom<u8> for Band {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Band::ALL
            .get((v as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| format!("band must be 1..=5, got {v}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScore {
    pub doc_id: String,
    pub score: f64,
    pub band: Band,
}

pub fn normalize_scores(elos: &EloScores, normalization: Normalization) -> Vec<CalibratedScore> {
    let map: Box<dyn Fn(f64) -> f64> = match normalization {
        Normalization::Logistic { tau } => Box::new(move |e| sigmoid(e / tau)),
        Normalization::MinMax => {
            let lo = elos.scores.values().copied().fold(f64::INFINITY, f64::min);
            let hi = elos.scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                Box::new(move |e| ((e - lo) / (hi - lo)).clamp(0.0, 1.0))
            } else {
                Box::new(|_| 0.5)
            }
        }
    };
    elos.scores
        .iter()
        .map(|(doc, &e)| {
            let score = map(e);
            CalibratedScore {
                doc_id: doc.clone(),
                score,
                band: Band::from_score(score),
            }
        })
        .collect()
}

/// One line of the fitted-score JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloRecord {
    pub query_id: String,
    pub doc_id: String,
    pub elo: f64,
    pub score: f64,
    pub band: Band,
}

pub fn elo_records(elos: &EloScores, normalization: Normalization) -> Vec<EloRecord> {
    normalize_scores(elos, normalization)
        .into_iter()
        .map(|c| EloRecord {
            query_id: elos.query_id.clone(),
            elo: elos.scores[&c.doc_id],
            doc_id: c.doc_id,
            score: c.score,
            band: c.band,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pref(w: &str, l: &str, weight: f64) -> PairwisePreference {
        PairwisePreference { query_id: "q".into(), winner: w.into(), loser: l.into(), weight }
    }

    #[test]
    fn probability_basics() {
        assert_eq!(pairwise_probability(0.0, 0.0), 0.5);
        assert!((pairwise_probability(3f64.ln(), 0.0) - 0.75).abs() < 1e-15);
        for (x, y) in [(0.3, -1.2), (40.0, -3.0), (-700.0, 2.0)] {
            assert!((pairwise_probability(x, y) + pairwise_probability(y, x) - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn split_record_gives_equal_scores() {
        let e = fit_bradley_terry(&[pref("i", "j", 1.0), pref("j", "i", 1.0)], &BtFitConfig::default()).unwrap();
        assert!(e.converged);
        assert!(e.scores["i"].abs() < 1e-8 && e.scores["j"].abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_input() {
        let c = BtFitConfig::default();
        assert!(fit_bradley_terry(&[], &c).is_err());
        assert!(fit_bradley_terry(&[pref("a", "b", f64::NAN)], &c).is_err());
        assert!(fit_bradley_terry(&[pref("a", "b", 0.0)], &c).is_err());
        assert!(fit_bradley_terry(&[pref("a", "a", 1.0)], &c).is_err());
        let bad = BtFitConfig { tolerance: 0.0, ..Default::default() };
        assert!(fit_bradley_terry(&[pref("a", "b", 1.0)], &bad).is_err());
    }

    #[test]
    fn undefeated_stays_finite_with_prior() {
        let e = fit_bradley_terry(&[pref("a", "b", 5.0), pref("a", "c", 5.0)], &BtFitConfig::default()).unwrap();
        assert!(e.converged);
        assert!(e.scores["a"] > e.scores["b"]);
        assert!(e.scores.values().all(|x| x.is_finite()));
        let mean: f64 = e.scores.values().sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn isolated_extra_doc_sits_at_mean() {
        let e = fit_bradley_terry_from(&[pref("a", "b", 1.0)], &["z".into()], &BtFitConfig::default(), None).unwrap();
        assert_eq!(e.scores.len(), 3);
        assert!(e.scores["a"] > e.scores["z"] && e.scores["z"] > e.scores["b"]);
    }

    #[test]
    fn fallback_path_converges() {
        let cfg = BtFitConfig { max_iterations: 10, tolerance: 1e-9, ..Default::default() };
        let prefs = [pref("a", "b", 3.0), pref("b", "a", 1.0), pref("b", "c", 2.0)];
        let e = fit_bradley_terry(&prefs, &cfg).unwrap();
        let reference = fit_bradley_terry(&prefs, &BtFitConfig { tolerance: 1e-12, ..Default::default() }).unwrap();
        assert!(e.converged && e.iterations_used > 10, "{}", e.iterations_used);
        for (k, v) in &reference.scores {
            assert!((e.scores[k] - v).abs() < 1e-6, "{k}: {} vs {v}", e.scores[k]);
        }
    }

    #[test]
    fn bands() {
        let cases = [(0.0, 1), (0.19999, 1), (0.2, 2), (0.4, 3), (0.5, 3), (0.6, 4), (0.8, 5), (0.85, 5), (1.0, 5)];
        for (s, b) in cases {
            assert_eq!(Band::from_score(s).level(), b, "score {s}");
        }
        assert_eq!(serde_json::to_string(&Band::Direct).unwrap(), "5");
        assert!(serde_json::from_str::<Band>("6").is_err());
    }

    #[test]
    fn normalization_modes() {
        let e = EloScores {
            query_id: "q".into(),
            scores: [("a".to_string(), 0.0), ("b".to_string(), 0.0)].into_iter().collect(),
            iterations_used: 0,
            converged: true,
        };
        let logistic = normalize_scores(&e, Normalization::default());
        assert!(logistic.iter().all(|c| c.score == 0.5 && c.band == Band::Partial));
        let mm = normalize_scores(&e, Normalization::MinMax);
        assert!(mm.iter().all(|c| c.score == 0.5));
        let spread = EloScores {
            scores: [("a".to_string(), -1.0), ("b".to_string(), 0.5), ("c".to_string(), 1.0)].into_iter().collect(),
            ..e
        };
        let mm = normalize_scores(&spread, Normalization::MinMax);
        assert_eq!(mm.iter().map(|c| c.score).collect::<Vec<_>>(), [0.0, 0.75, 1.0]);
    }
}

//! Reference loss functions with analytic gradients: pointwise binary cross
//! entropy against soft labels, and listwise InfoNCE.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::elo::sigmoid;
use crate::error::{Error, Result};

/// `-[t ln p + (1 - t) ln(1 - p)]` with `p = sigmoid(logit)`, and its
/// derivative `p - t`.
///
/// Uses `max(x, 0) - x t + ln(1 + e^-|x|)`, exact for large |logit|.
pub fn bce_soft(logit: f64, target: f64) -> Result<(f64, f64)> {
    if !logit.is_finite() {
        return Err(Error::invalid("logit must be finite"));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::invalid(format!("soft target {target} outside [0, 1]")));
    }
    let loss = logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    Ok((loss, sigmoid(logit) - target))
}

/// Candidate scores with the index of the positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList {
    pub scores: Vec<f64>,
    pub positive_index: usize,
    pub temperature: f64,
}

impl ScoredList {
    pub fn new(scores: Vec<f64>, positive_index: usize, temperature: f64) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::invalid("InfoNCE needs at least two scores"));
        }
        if positive_index >= scores.len() {
            return Err(Error::invalid(format!(
                "positive index {positive_index} out of range for {} scores",
                scores.len()
            )));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid("temperature must be > 0"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        Ok(ScoredList {
            scores,
            positive_index,
            temperature,
        })
    }
}

/// `-ln softmax(s / tau)[positive]` and its gradient
/// `(softmax(s / tau) - onehot(positive)) / tau`.
pub fn infonce_listwise(list: &ScoredList) -> (f64, Vec<f64>) {
    let tau = list.temperature;
    let z: Vec<f64> = list.scores.iter().map(|s| s / tau).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = max + sum.ln();
    let loss = log_sum - z[list.positive_index];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let p = e / sum;
            let onehot = if i == list.positive_index { 1.0 } else { 0.0 };
            (p - onehot) / tau
        })
        .collect();
    (loss.max(0.0), grad)
}

pub const FD_STEP: f64 = 1e-5;

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Largest componentwise gap between analytic and numeric gradients,
/// relative to the larger gradient's max-norm (floored at 1e-3).
pub fn gradient_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-3, f64::max);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / norm)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub samples: usize,
    pub bce_max_rel_error: f64,
    pub infonce_max_rel_error: Vec<(f64, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.infonce_max_rel_error
            .iter()
            .map(|(_, e)| *e)
            .fold(self.bce_max_rel_error, f64::max)
    }
}

pub const CHECK_TEMPERATURES: [f64; 3] = [0.05, 1.0, 10.0];

/// Compares analytic gradients with central finite differences on
/// `samples` random inputs per loss (and per temperature for InfoNCE).
pub fn gradient_check(samples: usize, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bce_err: f64 = 0.0;
    for _ in 0..samples {
        let logit = rng.gen_range(-10.0..10.0);
        let t = rng.gen_range(0.0..=1.0);
        let (_, g) = bce_soft(logit, t).expect("valid input");
        let fd = central_difference(|x| bce_soft(x, t).expect("valid input").0, logit, FD_STEP);
        bce_err = bce_err.max(gradient_relative_error(&[g], &[fd]));
    }
    let mut info = Vec::new();
    for tau in CHECK_TEMPERATURES {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let n = rng.gen_range(2..=8);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let pos = rng.gen_range(0..n);
            let list = ScoredList::new(scores.clone(), pos, tau).expect("valid list");
            let (_, g) = infonce_listwise(&list);
            let fd: Vec<f64> = (0..n)
                .map(|i| {
                    central_difference(
                        |x| {
                            let mut s = scores.clone();
                            s[i] = x;
                            infonce_listwise(&ScoredList { scores: s, positive_index: pos, temperature: tau }).0
                        },
                        scores[i],
                        FD_STEP,
                    )
                })
                .collect();
            worst = worst.max(gradient_relative_error(&g, &fd));
        }
        info.push((tau, worst));
    }
    GradCheckReport {
        samples,
        bce_max_rel_error: bce_err,
        infonce_max_rel_error: info,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_analytic_values() {
        let (l, g) = bce_soft(0.0, 0.5).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert_eq!(g, 0.0);
        let (l, g) = bce_soft(0.0, 1.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert_eq!(g, -0.5);
    }

    #[test]
    fn bce_is_stable_at_large_logits() {
        let (l, _) = bce_soft(40.0, 0.0).unwrap();
        assert!((l - 40.0).abs() < 1e-9, "{l}");
        let (l, _) = bce_soft(-40.0, 1.0).unwrap();
        assert!((l - 40.0).abs() < 1e-9, "{l}");
        let (l, g) = bce_soft(50.0, 1.0).unwrap();
        assert!((0.0..1e-20).contains(&l) && g.abs() < 1e-20);
    }

    #[test]
    fn bce_rejects_bad_target() {
        assert!(bce_soft(0.0, 1.5).is_err());
        assert!(bce_soft(f64::INFINITY, 0.5).is_err());
    }

    #[test]
    fn infonce_uniform_and_saturated() {
        let (l, g) = infonce_listwise(&ScoredList::new(vec![0.3; 4], 2, 1.0).unwrap());
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        let (l, _) = infonce_listwise(&ScoredList::new(vec![100.0, 0.0, 0.0], 0, 1.0).unwrap());
        assert!(l < 1e-40);
    }

    #[test]
    fn infonce_rejects_degenerate_lists() {
        assert!(ScoredList::new(vec![1.0], 0, 1.0).is_err());
        assert!(ScoredList::new(vec![1.0, 2.0], 2, 1.0).is_err());
        assert!(ScoredList::new(vec![1.0, 2.0], 0, 0.0).is_err());
    }

    #[test]
    fn finite_at_extremes() {
        let (l, g) = infonce_listwise(&ScoredList::new(vec![1e4, -1e4, 0.0], 1, 1e-3).unwrap());
        assert!(l.is_finite() && g.iter().all(|x| x.is_finite()));
    }
}

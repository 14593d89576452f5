//! Distribution checks over calibrated scores.

use serde::Serialize;

use crate::elo::Band;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandShare {
    pub band: u8,
    pub label: &'static str,
    pub count: usize,
    pub fraction: f64,
}

/// Fraction of scores falling into each band, in band order.
pub fn band_occupancy(scores: &[f64]) -> Result<Vec<BandShare>> {
    if scores.is_empty() {
        return Err(Error::invalid("band occupancy of an empty score set"));
    }
    check_unit(scores)?;
    let mut counts = [0usize; 5];
    for &s in scores {
        counts[Band::from_score(s).level() as usize - 1] += 1;
    }
    let n = scores.len() as f64;
    Ok(Band::ALL
        .iter()
        .zip(counts)
        .map(|(b, c)| BandShare {
            band: b.level(),
            label: b.label(),
            count: c,
            fraction: c as f64 / n,
        })
        .collect())
}

fn check_unit(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        Some(bad) => Err(Error::invalid(format!("score {bad} outside [0, 1]"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over [0, 1]; the last bin includes 1.0.
pub fn histogram(scores: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    check_unit(scores)?;
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let i = ((s * bins as f64) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: i as f64 / bins as f64,
            hi: (i + 1) as f64 / bins as f64,
            count,
        })
        .collect())
}

/// Adjusted Fisher-Pearson sample skewness `G1 = g1 sqrt(n(n-1)) / (n-2)`.
pub fn skewness(xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 3 {
        return Err(Error::invalid(format!("skewness needs at least 3 values, got {n}")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("skewness of non-finite values"));
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf;
    if m2 <= f64::EPSILON * mean.abs().max(1.0).powi(2) {
        return Err(Error::invalid("degenerate distribution: zero variance"));
    }
    let g1 = m3 / m2.powf(1.5);
    Ok(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub predicted_positive: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Precision, recall and F1 of `score >= t` against binary labels for
/// `t = 0, step, 2 step, ..., 1`. Undefined ratios are `None`.
pub fn threshold_sweep(scores: &[f64], labels: &[bool], step: f64) -> Result<Vec<ThresholdRow>> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::invalid("sweep step must be in (0, 1)"));
    }
    check_unit(scores)?;
    let positives = labels.iter().filter(|&&l| l).count();
    let steps = (1.0 / step + 1e-9).floor() as usize;
    let mut rows = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = (i as f64 * step).min(1.0);
        let mut tp = 0usize;
        let mut pp = 0usize;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t {
                pp += 1;
                tp += l as usize;
            }
        }
        let precision = (pp > 0).then(|| tp as f64 / pp as f64);
        let recall = (positives > 0).then(|| tp as f64 / positives as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        rows.push(ThresholdRow {
            threshold: t,
            predicted_positive: pp,
            precision,
            recall,
            f1,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub skewness: Option<f64>,
    pub bands: Vec<BandShare>,
    pub histogram: Vec<HistogramBin>,
}

pub fn distribution_report(scores: &[f64], bins: usize) -> Result<DistributionReport> {
    let bands = band_occupancy(scores)?;
    let n = scores.len();
    Ok(DistributionReport {
        count: n,
        mean: scores.iter().sum::<f64>() / n as f64,
        min: scores.iter().copied().fold(f64::INFINITY, f64::min),
        max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        skewness: skewness(scores).ok(),
        bands,
        histogram: histogram(scores, bins)?,
    })
}

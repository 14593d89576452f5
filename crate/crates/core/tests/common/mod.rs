//! Reference implementations written directly from the metric and model
//! definitions, sharing no code with the library.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// A random evaluation instance: scored run records (with ties) and graded
/// judgments, some for documents the run never retrieved.
#[derive(Debug, Clone)]
pub struct Instance {
    pub run: Vec<(String, f64)>,
    pub grades: BTreeMap<String, u32>,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(1..=12);
    let run: Vec<(String, f64)> = (0..n)
        .map(|i| (format!("d{i:02}"), rng.gen_range(0..6) as f64 * 0.5))
        .collect();
    let mut grades = BTreeMap::new();
    for (id, _) in &run {
        if rng.gen_bool(0.6) {
            grades.insert(id.clone(), rng.gen_range(0..=3));
        }
    }
    for j in 0..rng.gen_range(0..3) {
        grades.insert(format!("x{j}"), rng.gen_range(0..=3));
    }
    if !grades.values().any(|&g| g > 0) {
        grades.insert(run[0].0.clone(), rng.gen_range(1..=3));
    }
    Instance { run, grades }
}

pub fn instances(count: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_instance(&mut rng)).collect()
}

/// Ranked ids by repeated extraction of the best remaining record:
/// highest score, then smallest id.
pub fn oracle_order(run: &[(String, f64)]) -> Vec<String> {
    let mut left: Vec<(String, f64)> = run.to_vec();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (bi, bs) = (&left[best].0, left[best].1);
            let (ci, cs) = (&left[i].0, left[i].1);
            if cs > bs || (cs == bs && ci < bi) {
                best = i;
            }
        }
        out.push(left.remove(best).0);
    }
    out
}

fn grade(inst: &Instance, id: &str) -> u32 {
    inst.grades.get(id).copied().unwrap_or(0)
}

fn relevant_total(inst: &Instance) -> usize {
    inst.grades.values().filter(|&&g| g >= 1).count()
}

pub fn oracle_ap(inst: &Instance) -> f64 {
    let order = oracle_order(&inst.run);
    let mut sum = 0.0;
    for k in 1..=order.len() {
        if grade(inst, &order[k - 1]) >= 1 {
            let rel_in_top_k = order[..k].iter().filter(|d| grade(inst, d) >= 1).count();
            sum += rel_in_top_k as f64 / k as f64;
        }
    }
    sum / relevant_total(inst) as f64
}

pub fn oracle_rr(inst: &Instance) -> f64 {
    let order = oracle_order(&inst.run);
    for (i, d) in order.iter().enumerate() {
        if grade(inst, d) >= 1 {
            return 1.0 / (i as f64 + 1.0);
        }
    }
    0.0
}

fn dcg(grades: &[u32]) -> f64 {
    let mut s = 0.0;
    for (i, &g) in grades.iter().enumerate() {
        let rank = i as f64 + 1.0;
        s += (2f64.powf(g as f64) - 1.0) / (rank + 1.0).ln() * 2f64.ln();
    }
    s
}

/// `k = None` means the whole ranking.
pub fn oracle_ndcg(inst: &Instance, k: Option<usize>) -> f64 {
    let order = oracle_order(&inst.run);
    let depth = k.unwrap_or(order.len()).min(order.len());
    let run_grades: Vec<u32> = order[..depth].iter().map(|d| grade(inst, d)).collect();
    let mut pool: Vec<u32> = inst.grades.values().copied().collect();
    let mut ideal = Vec::new();
    while !pool.is_empty() {
        let (i, _) = pool.iter().enumerate().fold((0, 0), |acc, (i, &g)| if g > acc.1 { (i, g) } else { acc });
        ideal.push(pool.remove(i));
    }
    let ideal_depth = k.unwrap_or(ideal.len()).min(ideal.len());
    dcg(&run_grades) / dcg(&ideal[..ideal_depth])
}

pub fn oracle_set(inst: &Instance, k: usize) -> (f64, f64, f64) {
    let order = oracle_order(&inst.run);
    let top: Vec<&String> = order.iter().take(k).collect();
    let hits = top.iter().filter(|d| grade(inst, d) >= 1).count() as f64;
    let recall = hits / relevant_total(inst) as f64;
    let precision = hits / k as f64;
    let f1 = if hits == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (recall, precision, f1)
}

/// Penalized log-likelihood of a three-document tournament, written out
/// term by term. `wins[i][j]` is the weight of "i beat j".
pub fn bt_objective(theta: [f64; 3], wins: [[f64; 3]; 3], lambda: f64) -> f64 {
    let mut f = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            if wins[i][j] > 0.0 {
                let p = 1.0 / (1.0 + (theta[j] - theta[i]).exp());
                f += wins[i][j] * p.ln();
            }
        }
    }
    f - 0.5 * lambda * theta.iter().map(|t| t * t).sum::<f64>()
}

/// Maximizer on the mean-zero plane over a 0.001 lattice: a 0.01 sweep of
/// [-4, 4]^2, then every 0.001 point within 0.02 of the coarse winner.
pub fn bt_grid_search(wins: [[f64; 3]; 3], lambda: f64) -> [f64; 3] {
    let eval = |a: f64, b: f64| bt_objective([a, b, -a - b], wins, lambda);
    let mut best = (f64::NEG_INFINITY, 0i64, 0i64);
    for ai in -400..=400 {
        for bi in -400..=400 {
            let v = eval(ai as f64 * 0.01, bi as f64 * 0.01);
            if v > best.0 {
                best = (v, ai * 10, bi * 10);
            }
        }
    }
    let (ca, cb) = (best.1, best.2);
    for ai in ca - 20..=ca + 20 {
        for bi in cb - 20..=cb + 20 {
            let v = eval(ai as f64 * 0.001, bi as f64 * 0.001);
            if v > best.0 {
                best = (v, ai, bi);
            }
        }
    }
    let a = best.1 as f64 * 0.001;
    let b = best.2 as f64 * 0.001;
    [a, b, -a - b]
}

/// Kendall tau-a between two score vectors over the same items.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let s = (x[i] - x[j]) * (y[i] - y[j]);
            if s > 0.0 {
                concordant += 1;
            } else if s < 0.0 {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (n * (n - 1) / 2) as f64
}

/// Draws `per_pair` comparisons for every pair of `truth` under the
/// logistic model. Returns `wins[i][j]`.
pub fn sample_tournament(truth: &[f64], per_pair: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = truth.len();
    let mut wins = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let p = 1.0 / (1.0 + (truth[j] - truth[i]).exp());
            for _ in 0..per_pair {
                if rng.gen::<f64>() < p {
                    wins[i][j] += 1.0;
                } else {
                    wins[j][i] += 1.0;
                }
            }
        }
    }
    wins
}

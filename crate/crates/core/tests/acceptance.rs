mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rankforge::calibration::{band_occupancy, skewness};
use rankforge::elo::{fit_bradley_terry, fit_bradley_terry_from, pairwise_probability, sigmoid, BtFitConfig};
use rankforge::judge::{parse_listwise_ranking, PairwisePreference, RankingParseError};
use rankforge::losses::{bce_soft, central_difference, infonce_listwise, ScoredList};
use rankforge::metrics::{average_precision, f1_at_k, ndcg, precision_at_k, recall_at_k, reciprocal_rank, Cutoff};
use rankforge::model::{Document, Qrels, Query, RunRanking};
use rankforge::negatives::{classify_gap, compute_gap, filter_query, subsample_easy, Bucket, FilterConfig, FilterDecision, NegativeCandidate, PositiveRef};
use rankforge::prompts::render_ranking_prompt;
use rankforge::rubric::{aggregate_rubric, RubricScores};

use common::*;

fn close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}

fn to_lib(inst: &Instance) -> (RunRanking, Qrels) {
    let run = RunRanking::new("q", inst.run.clone()).unwrap();
    let mut qrels = Qrels::new();
    for (d, g) in &inst.grades {
        qrels.insert("q", d.clone(), *g);
    }
    (run, qrels)
}

fn metric_oracle() {
    let start = Instant::now();
    let all = instances(500, 20_240_501);
    for (n, inst) in all.iter().enumerate() {
        let (run, qrels) = to_lib(inst);
        let ctx = format!("instance {n}");
        close(average_precision(&run, &qrels).unwrap(), oracle_ap(inst), 1e-9, &format!("{ctx} MAP"));
        close(reciprocal_rank(&run, &qrels).unwrap(), oracle_rr(inst), 1e-9, &format!("{ctx} MRR"));
        for k in [1, 3, 10] {
            close(ndcg(&run, &qrels, Cutoff::K(k)).unwrap(), oracle_ndcg(inst, Some(k)), 1e-9, &format!("{ctx} NDCG@{k}"));
        }
        close(ndcg(&run, &qrels, Cutoff::Full).unwrap(), oracle_ndcg(inst, None), 1e-9, &format!("{ctx} NDCG"));
        for k in [1, 3, 5, 10, 20] {
            let (r, p, f) = oracle_set(inst, k);
            close(recall_at_k(&run, &qrels, k).unwrap(), r, 1e-9, &format!("{ctx} R@{k}"));
            close(precision_at_k(&run, &qrels, k).unwrap(), p, 1e-9, &format!("{ctx} P@{k}"));
            close(f1_at_k(&run, &qrels, k).unwrap(), f, 1e-9, &format!("{ctx} F1@{k}"));
        }
    }
    let took = start.elapsed();
    assert!(took < Duration::from_secs(5), "took {took:?}");
}

fn hand_computed() {
    let run = RunRanking::new("q", vec![("A".into(), 3.0), ("B".into(), 2.0), ("C".into(), 1.0)]).unwrap();
    let mut qrels = Qrels::new();
    qrels.insert("q", "A", 1);
    qrels.insert("q", "C", 1);
    close(average_precision(&run, &qrels).unwrap(), 5.0 / 6.0, 1e-6, "AP");

    let run = RunRanking::new("q", vec![("x".into(), 2.0), ("y".into(), 1.0)]).unwrap();
    let mut qrels = Qrels::new();
    qrels.insert("q", "x", 0);
    qrels.insert("q", "y", 3);
    close(ndcg(&run, &qrels, Cutoff::K(2)).unwrap(), 0.630930, 1e-6, "NDCG@2");

    let run = RunRanking::new("q", vec![("a".into(), 3.0), ("b".into(), 2.0), ("c".into(), 1.0)]).unwrap();
    let mut qrels = Qrels::new();
    qrels.insert("q", "b", 1);
    qrels.insert("q", "z", 1);
    close(f1_at_k(&run, &qrels, 3).unwrap(), 0.4, 1e-6, "F1@3");
}

fn prefs_from(wins: &[Vec<f64>], names: &[&str]) -> Vec<PairwisePreference> {
    let mut out = Vec::new();
    for (i, row) in wins.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w > 0.0 {
                out.push(PairwisePreference {
                    query_id: "q".into(),
                    winner: names[i].into(),
                    loser: names[j].into(),
                    weight: w,
                });
            }
        }
    }
    out
}

fn elo_recovery() {
    let start = Instant::now();
    let truth = [-1.0, 0.0, 1.0];
    let names = ["a", "b", "c"];
    let config = BtFitConfig::default();
    let mut perfect = 0;
    let mut worst_gap: f64 = 0.0;
    for seed in 0..100 {
        let wins = sample_tournament(&truth, 200, seed);
        let fit = fit_bradley_terry(&prefs_from(&wins, &names), &config).unwrap();
        assert!(fit.converged, "seed {seed} did not converge");
        let fitted: Vec<f64> = names.iter().map(|n| fit.scores[*n]).collect();
        if kendall_tau(&fitted, &truth) == 1.0 {
            perfect += 1;
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let empirical = wins[i][j] / (wins[i][j] + wins[j][i]);
                let p = sigmoid(fitted[i] - fitted[j]);
                worst_gap = worst_gap.max((p - empirical).abs());
            }
        }
    }
    assert!(perfect >= 99, "tau = 1 on {perfect}/100 seeds");
    assert!(worst_gap <= 0.05, "worst probability gap {worst_gap}");
    let took = start.elapsed();
    assert!(took < Duration::from_secs(10), "took {took:?}");
}

fn elo_symmetry_gauge() {
    let config = BtFitConfig::default();
    let prefs = vec![
        PairwisePreference { query_id: "q".into(), winner: "a".into(), loser: "b".into(), weight: 1.0 },
        PairwisePreference { query_id: "q".into(), winner: "b".into(), loser: "a".into(), weight: 1.0 },
    ];
    let fit = fit_bradley_terry(&prefs, &config).unwrap();
    close(fit.scores["a"], fit.scores["b"], 1e-8, "split scores");

    let wins = sample_tournament(&[-0.7, 0.2, 0.5, 1.3], 15, 3);
    let names = ["a", "b", "c", "d"];
    let prefs = prefs_from(&wins, &names);
    let base = fit_bradley_terry(&prefs, &config).unwrap();
    for shift in [-50.0, -3.0, 2.5, 40.0] {
        let init: BTreeMap<String, f64> = names.iter().map(|n| (n.to_string(), shift)).collect();
        let moved = fit_bradley_terry_from(&prefs, &[], &config, Some(&init)).unwrap();
        for i in names {
            for j in names {
                let a = pairwise_probability(base.scores[i], base.scores[j]);
                let b = pairwise_probability(moved.scores[i], moved.scores[j]);
                close(a, b, 1e-10, &format!("shift {shift} P({i}>{j})"));
            }
        }
    }
}

fn elo_grid() {
    // a>b 3, b>a 1, b>c 2, c>a 1
    let wins = [[0.0, 3.0, 0.0], [1.0, 0.0, 2.0], [1.0, 0.0, 0.0]];
    let lambda = 0.1;
    let expected = bt_grid_search(wins, lambda);
    let rows: Vec<Vec<f64>> = wins.iter().map(|r| r.to_vec()).collect();
    let fit = fit_bradley_terry(&prefs_from(&rows, &["a", "b", "c"]), &BtFitConfig::default()).unwrap();
    for (i, n) in ["a", "b", "c"].iter().enumerate() {
        close(fit.scores[*n], expected[i], 5e-3, &format!("score {n}"));
    }
}

fn gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-5;
    let rel = |a: f64, n: f64, scale: f64| (a - n).abs() / scale.max(1e-3);
    for _ in 0..1000 {
        let x = rng.gen_range(-10.0..10.0);
        let t = rng.gen_range(0.0..=1.0);
        let (_, g) = bce_soft(x, t).unwrap();
        let fd = central_difference(|v| bce_soft(v, t).unwrap().0, x, h);
        let e = rel(g, fd, g.abs().max(fd.abs()));
        assert!(e <= 1e-6, "bce at ({x}, {t}): {g} vs {fd}");
    }
    for tau in [0.05, 1.0, 10.0] {
        for _ in 0..1000 {
            let n = rng.gen_range(2..=8);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let pos = rng.gen_range(0..n);
            let (_, grad) = infonce_listwise(&ScoredList::new(scores.clone(), pos, tau).unwrap());
            let numeric: Vec<f64> = (0..n)
                .map(|i| {
                    let f = |v: f64| {
                        let mut s = scores.clone();
                        s[i] = v;
                        infonce_listwise(&ScoredList::new(s, pos, tau).unwrap()).0
                    };
                    central_difference(f, scores[i], h)
                })
                .collect();
            let scale = grad.iter().chain(&numeric).map(|v| v.abs()).fold(0.0, f64::max);
            for i in 0..n {
                let e = rel(grad[i], numeric[i], scale);
                assert!(e <= 1e-6, "infonce tau {tau} component {i}: {} vs {}", grad[i], numeric[i]);
            }
        }
    }
    close(bce_soft(0.0, 0.5).unwrap().0, 2f64.ln(), 1e-9, "bce at zero");
    close(bce_soft(0.0, 1.0).unwrap().0, 2f64.ln(), 1e-9, "bce at zero, hard label");
    let flat = ScoredList::new(vec![0.4; 4], 2, 1.0).unwrap();
    close(infonce_listwise(&flat).0, 4f64.ln(), 1e-9, "uniform infonce");
}

fn filter_rules() {
    let expected = [
        (-0.05, Bucket::SuspectError),
        (0.0, Bucket::HardNegative),
        (0.1, Bucket::HardNegative),
        (0.2, Bucket::EasyNegative),
        (0.35, Bucket::EasyNegative),
    ];
    for (gap, bucket) in expected {
        assert_eq!(classify_gap(gap), bucket, "gap {gap}");
    }
    let pos_sim = 0.5;
    let negatives: Vec<NegativeCandidate> = expected
        .iter()
        .enumerate()
        .map(|(i, (gap, _))| NegativeCandidate {
            query_id: "q".into(),
            doc_id: format!("n{i}"),
            sim: pos_sim - gap,
            verifier_score: Some(0.1),
            positive: false,
        })
        .collect();
    let decisions = filter_query(PositiveRef { sim: pos_sim, verifier_score: Some(0.9) }, &negatives, &FilterConfig::default(), 1).unwrap();
    for (d, (gap, bucket)) in decisions.iter().zip(expected) {
        assert_eq!(d.bucket, bucket, "pipeline bucket for gap {gap}");
        close(d.gap, compute_gap(pos_sim, pos_sim - gap), 0.0, "gap");
    }

    for n in [1usize, 4, 5, 6, 10, 23, 50, 101] {
        let easy: Vec<FilterDecision> = (0..n)
            .map(|i| FilterDecision {
                query_id: "q".into(),
                doc_id: format!("e{i}"),
                gap: 0.5,
                bucket: Bucket::EasyNegative,
                kept: false,
                relabel: false,
                reason: String::new(),
            })
            .collect();
        let want = (0.2 * n as f64 - 1e-9).ceil() as usize;
        let a = subsample_easy(&easy, 0.2, 99).unwrap();
        let b = subsample_easy(&easy, 0.2, 99).unwrap();
        assert_eq!(a.len(), want, "quota for n = {n}");
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap(), "replay for n = {n}");
    }
}

fn rubric_weights() {
    assert_eq!(aggregate_rubric(&RubricScores::new(1.0, 0.0, 0.0, 0.0)).unwrap(), 0.30);
    assert_eq!(aggregate_rubric(&RubricScores::new(0.0, 1.0, 0.0, 0.0)).unwrap(), 0.30);
    assert_eq!(aggregate_rubric(&RubricScores::new(0.0, 0.0, 1.0, 0.0)).unwrap(), 0.25);
    assert_eq!(aggregate_rubric(&RubricScores::new(0.0, 0.0, 0.0, 1.0)).unwrap(), 0.15);
}

fn run_pipeline(out: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_rankforge"))
        .args(["--mock-teacher", "--seed", "7", "pipeline", "run", "--dialogues"])
        .arg(fixture("dialogues20.jsonl"))
        .arg("--out")
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success(), "pipeline exited with {status}");
    std::fs::read(out.join("manifest.json")).unwrap()
}

fn pipeline_replay() {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    assert!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
    assert_eq!(first, second, "manifests differ between runs");
    let golden = std::fs::read(fixture("pipeline_seed7_manifest.json")).unwrap();
    assert_eq!(first, golden, "manifest differs from the recorded one");
}

fn calibration() {
    let near_zero: Vec<f64> = (0..50).map(|i| i as f64 * 1e-6).collect();
    let occ: Vec<f64> = band_occupancy(&near_zero).unwrap().iter().map(|b| b.fraction).collect();
    assert_eq!(occ, vec![1.0, 0.0, 0.0, 0.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let uniform: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
    for b in band_occupancy(&uniform).unwrap() {
        close(b.fraction, 0.2, 0.02, &format!("band {}", b.band));
    }

    let skewed: Vec<f64> = (0..500).map(|_| rng.gen::<f64>().powi(3)).collect();
    let mirrored: Vec<f64> = skewed.iter().map(|x| 1.0 - x).collect();
    let s = skewness(&skewed).unwrap();
    assert!(s > 0.5, "fixture should be right-skewed, got {s}");
    close(skewness(&mirrored).unwrap(), -s, 1e-9, "mirrored skewness");
}

fn prompt_round_trip() {
    let query = Query::new("q", "where did we park");
    let docs = vec![Document::new("d0", "level 2, row F"), Document::new("d1", "the blue gate")];
    let prompt = render_ranking_prompt(&query, &docs);
    let expected = "You are a document relevance ranking expert. Given a query\n\
and a set of documents, rank the document IDs by relevance\n\
to the query from highest to lowest.\n\
\n\
Query: where did we park\n\
\n\
Document list:\n\
[0] level 2, row F\n\
[1] the blue gate\n\
\n\
Output the ranked document IDs as a JSON array,\n\
e.g. [3, 0, 2, 1, ...].\n\
Output only the JSON array, nothing else.";
    assert_eq!(prompt, expected);

    assert_eq!(parse_listwise_ranking("[3, 0, 2, 1]", 4).unwrap(), vec![3, 0, 2, 1]);
    assert_eq!(parse_listwise_ranking("[3, 0, 3, 1]", 4), Err(RankingParseError::Duplicate(3)));
    assert!(matches!(
        parse_listwise_ranking("[3, 0, 4, 1]", 4),
        Err(RankingParseError::OutOfRange { index: 4, n: 4 })
    ));
    assert!(matches!(
        parse_listwise_ranking("[3, -1, 2, 1]", 4),
        Err(RankingParseError::OutOfRange { index: -1, .. })
    ));
}

fn main() {
    let criteria: [(&str, fn()); 11] = [
        ("metric oracle equivalence", metric_oracle),
        ("hand-computed metric cases", hand_computed),
        ("Bradley-Terry recovery", elo_recovery),
        ("Bradley-Terry symmetry and gauge", elo_symmetry_gauge),
        ("grid-search MLE oracle", elo_grid),
        ("loss gradient checks", gradients),
        ("filter rule conformance", filter_rules),
        ("rubric weights", rubric_weights),
        ("end-to-end replay", pipeline_replay),
        ("calibration diagnostics", calibration),
        ("ranking prompt round-trip", prompt_round_trip),
    ];
    std::panic::set_hook(Box::new(|info| eprintln!("    {info}")));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(check)).is_ok();
        if !ok {
            failed += 1;
        }
        println!("{} [{}] {name} ({:.2?})", if ok { "PASS" } else { "FAIL" }, i + 1, start.elapsed());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

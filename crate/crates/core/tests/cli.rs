mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture;

fn rankforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankforge")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_1() {
    let o = rankforge(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(rankforge(&[]).status.code(), Some(1));
    assert_eq!(rankforge(&["evaluate", "--run", "x.jsonl"]).status.code(), Some(1));
    assert_eq!(rankforge(&["evaluate", "--run", "a", "--qrels", "b", "--cutoffs", "0,3"]).status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    let o = rankforge(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["judge", "fit-elo", "filter-negatives", "build-dialogue", "rubric", "evaluate", "calibrate", "pipeline"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    assert_eq!(rankforge(&["evaluate", "--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_exits_2() {
    let o = rankforge(&["evaluate", "--run", "/nonexistent/run.jsonl", "--qrels", "/nonexistent/q.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: "), "{}", stderr(&o));
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("run.jsonl");
    std::fs::write(&bad, "{\"query_id\": \"q\", \"doc_id\": \"d\"}\n").unwrap();
    let o = rankforge(&["evaluate", "--run", path(&bad), "--qrels", path(&fixture("qrels3.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.jsonl:1"), "{}", stderr(&o));
}

#[test]
fn evaluate_matches_golden_for_both_run_formats() {
    let golden = std::fs::read_to_string(fixture("eval3_golden.json")).unwrap();
    for run in ["run3.jsonl", "run3.trec"] {
        let o = rankforge(&[
            "evaluate",
            "--run",
            path(&fixture(run)),
            "--qrels",
            path(&fixture("qrels3.jsonl")),
            "--queries",
            path(&fixture("queries3.jsonl")),
            "--format",
            "json",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(String::from_utf8(o.stdout).unwrap(), golden, "{run}");
    }
}

#[test]
fn evaluate_text_report() {
    let o = rankforge(&[
        "evaluate",
        "--run",
        path(&fixture("run3.jsonl")),
        "--qrels",
        path(&fixture("qrels3.jsonl")),
        "--queries",
        path(&fixture("queries3.jsonl")),
        "--cutoffs",
        "3,10",
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("All queries (n=3)"));
    assert!(text.contains("Category: single_hop (n=2)"));
    assert!(text.contains("Category: multi_hop (n=1)"));
    assert!(text.contains("MAP"));
    assert!(text.contains("0.4139"));
    assert!(text.contains("NDCG@10"));
    assert!(!text.contains("NDCG@5"));
}

#[test]
fn pipeline_replays_and_reuses_stages() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let dialogues = fixture("dialogues20.jsonl");
    let run = |out: &Path| rankforge(&["--mock-teacher", "--seed", "7", "pipeline", "run", "--dialogues", path(&dialogues), "--out", path(out)]);
    for out in [a.path(), b.path()] {
        let o = run(out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let manifest = |d: &Path| std::fs::read(d.join("manifest.json")).unwrap();
    assert_eq!(manifest(a.path()), manifest(b.path()));
    for f in ["examples.jsonl", "elo.jsonl", "decisions.jsonl", "judgments.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let again = run(a.path());
    assert!(String::from_utf8_lossy(&again.stdout).contains("5 of 5 stages reused"));
    assert_eq!(manifest(a.path()), manifest(b.path()));

    let other = tempfile::tempdir().unwrap();
    let o = rankforge(&["--mock-teacher", "--seed", "8", "pipeline", "run", "--dialogues", path(&dialogues), "--out", path(other.path())]);
    assert!(o.status.success());
    assert_ne!(manifest(other.path()), manifest(a.path()));
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = rankforge(&["--mock-teacher", "--seed", "3", "pipeline", "run", "--dialogues", path(&fixture("dialogues20.jsonl")), "--out", path(d)]);
    assert!(o.status.success());

    let judged = d.join("judge2");
    std::fs::create_dir(&judged).unwrap();
    let prefs = judged.join("prefs.jsonl");
    let log = judged.join("log.jsonl");
    let o = rankforge(&[
        "--mock-teacher", "--seed", "3", "judge",
        "--queries", path(&d.join("queries.jsonl")),
        "--docs", path(&d.join("docs.jsonl")),
        "--pools", path(&d.join("pools.jsonl")),
        "--out", path(&prefs),
        "--log", path(&log),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read(&prefs).unwrap() == std::fs::read(d.join("preferences.jsonl")).unwrap());

    let elo = judged.join("elo.jsonl");
    let o = rankforge(&["fit-elo", "--preferences", path(&prefs), "--pools", path(&d.join("pools.jsonl")), "--out", path(&elo)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = std::fs::read_to_string(&elo).unwrap();
    assert!(lines.lines().count() > 0);
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let s = v["score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&s));
    }

    let decisions = judged.join("decisions.jsonl");
    let o = rankforge(&["--seed", "3", "filter-negatives", "--input", path(&d.join("candidates.jsonl")), "--out", path(&decisions)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |p: &Path| -> Vec<serde_json::Value> {
        std::fs::read_to_string(p).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    };
    let (mine, staged) = (read(&decisions), read(&d.join("decisions.jsonl")));
    assert_eq!(mine.len(), staged.len());
    for (x, y) in mine.iter().zip(&staged) {
        for key in ["query_id", "doc_id", "bucket", "kept"] {
            assert_eq!(x[key], y[key]);
        }
        assert!((x["gap"].as_f64().unwrap() - y["gap"].as_f64().unwrap()).abs() < 1e-9);
    }

    let o = rankforge(&["calibrate", "--scores", path(&elo)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let total: f64 = report["bands"].as_array().unwrap().iter().map(|b| b["fraction"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12, "{report}");
}

#[test]
fn rubric_command_scores_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("audit.jsonl");
    std::fs::write(
        &input,
        "{\"query_id\":\"q\",\"doc_id\":\"a\",\"sr\":1,\"ap\":1,\"ic\":1,\"ad\":1}\n{\"query_id\":\"q\",\"doc_id\":\"b\",\"sr\":1,\"ap\":0,\"ic\":0,\"ad\":0}\n",
    )
    .unwrap();
    let out = dir.path().join("scored.jsonl");
    let o = rankforge(&["rubric", "--input", path(&input), "--out", path(&out), "--min-rubric", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["doc_id"], "a");
    assert!((v["total"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn losses_check_passes() {
    let o = rankforge(&["losses", "check", "--samples", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
}

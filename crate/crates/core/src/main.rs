use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use rankforge::calibration::{distribution_report, threshold_sweep};
use rankforge::config::{build_teachers, Config};
use rankforge::dialogue::{build_examples, Dialogue, Scorers, UpstreamLabels};
use rankforge::elo::{EloRecord, Normalization};
use rankforge::io::{append_jsonl, read_jsonl_vec, read_run_any, write_jsonl};
use rankforge::judge::{JudgeMode, PairwisePreference, RawJudgment, ResumeLog};
use rankforge::losses::gradient_check;
use rankforge::metrics::{evaluate_run, CutoffSet};
use rankforge::model::{group_run, CandidatePool, Document, QrelRecord, Qrels, Query};
use rankforge::negatives::{filter_candidates, NegativeCandidate};
use rankforge::pipeline::{fit_all, judge_all, mined_negatives, run_pipeline, scores_by_query};
use rankforge::rubric::{score_audit, AuditRecord, RubricWeights};
use rankforge::text::{TokenCosine, TokenOverlap};
use rankforge::{Error, Result};

/// Teacher-judged relevance labels, training data construction and ranking
/// evaluation.
#[derive(Parser)]
#[command(name = "rankforge", version)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for cached teacher responses.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Answer every teacher call offline with the deterministic mock.
    #[arg(long, global = true)]
    mock_teacher: bool,
    /// Worker threads for per-query parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect teacher votes over candidate pools.
    Judge(JudgeArgs),
    /// Fit Bradley-Terry scores from preferences.
    FitElo(FitEloArgs),
    /// Sort negatives by similarity gap and subsample easy ones.
    FilterNegatives(FilterArgs),
    /// Build multi-turn training examples from dialogues.
    BuildDialogue(BuildArgs),
    /// Aggregate audit sub-scores.
    Rubric(RubricArgs),
    /// Score a run against qrels.
    Evaluate(EvaluateArgs),
    /// Score distribution diagnostics.
    Calibrate(CalibrateArgs),
    /// Loss function checks.
    Losses {
        #[command(subcommand)]
        command: LossesCommand,
    },
    /// The chained stages.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pairwise,
    Listwise,
}

#[derive(Args)]
struct JudgeArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    docs: PathBuf,
    #[arg(long)]
    pools: PathBuf,
    /// Preference output.
    #[arg(long)]
    out: PathBuf,
    /// Append-only judgment log; existing entries are reused.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    votes: Option<u8>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Logistic,
    Minmax,
}

#[derive(Args)]
struct FitEloArgs {
    #[arg(long)]
    preferences: PathBuf,
    /// Pools whose unjudged documents should still get a score.
    #[arg(long)]
    pools: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Prior strength.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    normalization: Option<NormArg>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    easy_rate: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// One easy quota across all queries.
    #[arg(long)]
    global_quota: bool,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    dialogues: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fitted scores used as soft labels.
    #[arg(long)]
    elo: Option<PathBuf>,
    /// Filter decisions whose kept documents join the negatives; needs --docs.
    #[arg(long, requires = "docs")]
    decisions: Option<PathBuf>,
    #[arg(long)]
    docs: Option<PathBuf>,
    #[arg(long)]
    n_neg: Option<usize>,
    #[arg(long)]
    history_budget: Option<usize>,
}

#[derive(Args)]
struct RubricArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Drop records whose total is below this value.
    #[arg(long)]
    min_rubric: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Json,
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSONL or TREC run.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Query records supplying categories.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Comma-separated rank cutoffs.
    #[arg(long)]
    cutoffs: Option<String>,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// JSONL records with a `score` field and optionally `label`.
    #[arg(long)]
    scores: PathBuf,
    /// Labels from qrels (grade >= 1) instead of a `label` field.
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LossesCommand {
    /// Compare analytic gradients with finite differences.
    Check {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// judge, fit-elo, filter-negatives and build-dialogue over a dialogue corpus.
    Run {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn effective_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.cache_dir.is_some() {
        cfg.cache_dir = cli.cache_dir.clone();
    }
    cfg.mock_teacher |= cli.mock_teacher;
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    let mut cfg = effective_config(&cli)?;
    let seed = cfg.seed();
    match cli.command {
        Command::Judge(a) => {
            if let Some(m) = a.mode {
                cfg.judge.mode = match m {
                    ModeArg::Pairwise => JudgeMode::Pairwise,
                    ModeArg::Listwise => JudgeMode::Listwise,
                };
            }
            if let Some(v) = a.votes {
                cfg.judge.votes = v;
            }
            let queries: Vec<Query> = read_jsonl_vec(&a.queries)?;
            let docs: Vec<Document> = read_jsonl_vec(&a.docs)?;
            let pools: Vec<CandidatePool> = read_jsonl_vec(&a.pools)?;
            let resume = match &a.log {
                Some(p) if p.exists() => ResumeLog::new(read_jsonl_vec::<RawJudgment>(p)?),
                _ => ResumeLog::default(),
            };
            let teachers = build_teachers(&cfg)?;
            let refs = teachers.panel_refs();
            let lock = Mutex::new(());
            let sink = |r: &rankforge::judge::PoolJudgment| -> Result<()> {
                if let Some(log) = &a.log {
                    let fresh: Vec<&RawJudgment> = r.judgments.iter().filter(|j| !resume.contains(j)).collect();
                    let _guard = lock.lock().expect("log lock");
                    append_jsonl(log, fresh)?;
                }
                Ok(())
            };
            let (_, prefs) = judge_all(&queries, &pools, &docs, &refs, &cfg.judge, seed, &resume, Some(&sink))?;
            write_jsonl(&a.out, &prefs)
        }
        Command::FitElo(a) => {
            if let Some(l) = a.lambda {
                cfg.elo.prior_strength = l;
            }
            match (a.normalization, a.tau) {
                (Some(NormArg::Minmax), _) => cfg.elo.normalization = Normalization::MinMax,
                (Some(NormArg::Logistic), tau) => {
                    cfg.elo.normalization = Normalization::Logistic { tau: tau.unwrap_or(1.0) }
                }
                (None, Some(tau)) => cfg.elo.normalization = Normalization::Logistic { tau },
                (None, None) => {}
            }
            let prefs: Vec<PairwisePreference> = read_jsonl_vec(&a.preferences)?;
            let pools: Option<Vec<CandidatePool>> = a.pools.as_ref().map(read_jsonl_vec).transpose()?;
            let records = fit_all(&prefs, pools.as_deref(), &cfg.elo)?;
            write_jsonl(&a.out, &records)
        }
        Command::FilterNegatives(a) => {
            if let Some(r) = a.easy_rate {
                cfg.filter.easy_rate = r;
            }
            if let Some(d) = a.delta {
                cfg.filter.delta = d;
            }
            cfg.filter.global_quota |= a.global_quota;
            let cands: Vec<NegativeCandidate> = read_jsonl_vec(&a.input)?;
            let decisions = filter_candidates(&cands, &cfg.filter, seed)?;
            write_jsonl(&a.out, &decisions)
        }
        Command::BuildDialogue(a) => {
            if let Some(n) = a.n_neg {
                cfg.dialogue.n_neg = n;
            }
            if let Some(b) = a.history_budget {
                cfg.dialogue.history_budget = b;
            }
            let dialogues: Vec<Dialogue> = read_jsonl_vec(&a.dialogues)?;
            let mut upstream = UpstreamLabels::default();
            if let Some(p) = &a.elo {
                upstream.scores = scores_by_query(&read_jsonl_vec::<EloRecord>(p)?);
            }
            if let (Some(dec), Some(docs)) = (&a.decisions, &a.docs) {
                upstream.mined = mined_negatives(&read_jsonl_vec(dec)?, &read_jsonl_vec(docs)?)?;
            }
            let teachers = build_teachers(&cfg)?;
            let scorers = Scorers {
                similarity: &TokenCosine,
                verifier: &TokenOverlap,
            };
            let out = build_examples(
                &dialogues,
                teachers.writer.as_ref(),
                &scorers,
                &cfg.dialogue,
                &cfg.filter,
                &upstream,
                seed,
            )?;
            if !out.incomplete.is_empty() {
                log::warn!("{} exchanges had no surviving negatives", out.incomplete.len());
            }
            write_jsonl(&a.out, &out.examples)
        }
        Command::Rubric(a) => {
            let records: Vec<AuditRecord> = read_jsonl_vec(&a.input)?;
            let scored = score_audit(records, &RubricWeights::default(), a.min_rubric)?;
            write_jsonl(&a.out, &scored)
        }
        Command::Evaluate(a) => {
            let cutoffs = match &a.cutoffs {
                Some(list) => CutoffSet::parse(list).map_err(|e| Error::Usage(format!("--cutoffs: {e}")))?,
                None => cfg.eval.cutoff_set()?,
            };
            let runs = group_run(read_run_any(&a.run)?)?;
            let qrels = Qrels::from_records(read_jsonl_vec::<QrelRecord>(&a.qrels)?);
            let mut categories = BTreeMap::new();
            if let Some(p) = &a.queries {
                for q in read_jsonl_vec::<Query>(p)? {
                    if let Some(c) = q.category {
                        categories.insert(q.id, c);
                    }
                }
            }
            let report = evaluate_run(&runs, &qrels, &cutoffs, &categories)?;
            let text = match a.format {
                FormatArg::Json => to_json(&report),
                FormatArg::Text => report.to_text(),
            };
            emit(&text, a.out.as_deref())
        }
        Command::Calibrate(a) => {
            let rows: Vec<Value> = read_jsonl_vec(&a.scores)?;
            let qrels = a
                .qrels
                .as_ref()
                .map(|p| read_jsonl_vec::<QrelRecord>(p).map(Qrels::from_records))
                .transpose()?;
            let mut scores = Vec::with_capacity(rows.len());
            let mut labels = Vec::new();
            for (i, r) in rows.iter().enumerate() {
                let s = r
                    .get("score")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::invalid(format!("record {} has no numeric score", i + 1)))?;
                scores.push(s);
                let label = match &qrels {
                    Some(q) => {
                        let field = |k: &str| r.get(k).and_then(Value::as_str).unwrap_or_default();
                        Some(q.grade(field("query_id"), field("doc_id")) >= 1)
                    }
                    None => match r.get("label") {
                        Some(Value::Bool(b)) => Some(*b),
                        Some(Value::Number(n)) => Some(n.as_f64() == Some(1.0)),
                        _ => None,
                    },
                };
                labels.extend(label);
            }
            let mut report = serde_json::to_value(distribution_report(&scores, a.bins)?).expect("serializes");
            if labels.len() == scores.len() {
                let sweep = threshold_sweep(&scores, &labels, a.step)?;
                report["threshold_sweep"] = serde_json::to_value(sweep).expect("serializes");
            } else if !labels.is_empty() {
                return Err(Error::invalid("some records have a label and some do not"));
            }
            emit(&to_json(&report), a.out.as_deref())
        }
        Command::Losses {
            command: LossesCommand::Check { samples, tolerance },
        } => {
            let report = gradient_check(samples, seed);
            println!("samples per check: {}", report.samples);
            println!("bce_soft max relative error: {:.3e}", report.bce_max_rel_error);
            for (tau, err) in &report.infonce_max_rel_error {
                println!("infonce_listwise tau={tau} max relative error: {err:.3e}");
            }
            let worst = report.max_rel_error();
            println!("max relative error: {worst:.3e}");
            if worst > tolerance {
                return Err(Error::invalid(format!("gradient check exceeded tolerance {tolerance}")));
            }
            Ok(())
        }
        Command::Pipeline {
            command: PipelineCommand::Run { dialogues, out },
        } => {
            cfg.validate()?;
            let teachers = build_teachers(&cfg)?;
            let report = run_pipeline(&dialogues, &out, &cfg, &teachers)?;
            println!(
                "{} examples written, {} incomplete, {} of {} stages reused",
                report.examples,
                report.incomplete.len(),
                report.reused.len(),
                report.manifest.len()
            );
            Ok(())
        }
    }
}

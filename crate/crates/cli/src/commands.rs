use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use deckqa::calc::calculate;
use deckqa::corpus::{CorpusLine, DeckBundle, SlideDeck, Split};
use deckqa::eval::{breakdown_report_at, Prediction};
use deckqa::retrieve::{rank_pages, Bm25Params};
use deckqa::textproc::build_vocab;
use deckqa_model::{page_probabilities, select_above, top_k_pages, Method, Query};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{parse_split, read_bundles, read_corpus, read_vocab, split_path, write_corpus, CorpusStats, VOCAB_FILE};
use crate::error::CliError;
use crate::experiment::{score, train_system, EvalReport, Panels, Trace, TrainedSystem};

fn load_run(path: Option<&Path>) -> Result<RunConfig, CliError> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn required(flag: Option<&Path>, fallback: Option<&PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.map(Path::to_path_buf)
        .or_else(|| fallback.cloned())
        .ok_or_else(|| CliError::Config(format!("no {name} given on the command line or in the config")))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn gen(config: Option<&Path>, out: &Path) -> Result<CorpusStats, CliError> {
    let run = load_run(config)?;
    write_corpus(&run.generator, &run.model, out)
}

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    pub corpus: Option<&'a Path>,
    pub out: Option<&'a Path>,
    pub trace: Option<&'a Path>,
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub config: serde_json::Value,
    pub checkpoint: PathBuf,
    pub loss_trace: PathBuf,
    pub steps: u64,
    pub final_loss: f64,
    pub dev_losses: Vec<(u64, f64)>,
    pub best_dev_loss: Option<f64>,
    pub best_step: Option<u64>,
    pub threshold: Option<f64>,
    pub selector_threshold: Option<f64>,
}

/// CSV with one row per step; `dev_loss` is filled on evaluation steps.
pub fn trace_csv(trace: &Trace, dev_losses: &[(u64, f64)]) -> String {
    let mut out = String::from("step,lr,loss,dec_loss,sel_loss,dev_loss\n");
    for (step, parts, lr) in trace {
        let dev = dev_losses.iter().find(|(s, _)| s == step).map(|(_, d)| d.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{step},{lr},{},{},{},{dev}", parts.total, parts.dec, parts.sel);
    }
    out
}

pub fn train(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    let run = load_run(args.config)?;
    let corpus_dir = required(args.corpus, run.paths.corpus.as_ref(), "corpus directory")?;
    let out = required(args.out, run.paths.checkpoint.as_ref(), "checkpoint path")?;
    let trace_path = args
        .trace
        .map(Path::to_path_buf)
        .or_else(|| run.paths.loss_trace.clone())
        .unwrap_or_else(|| {
            let mut s = out.as_os_str().to_owned();
            s.push(".loss.csv");
            PathBuf::from(s)
        });
    let train = read_bundles(&split_path(&corpus_dir, Split::Train))?;
    let dev = read_bundles(&split_path(&corpus_dir, Split::Dev))?;
    let vocab = if corpus_dir.join(VOCAB_FILE).exists() { read_vocab(&corpus_dir)? } else { build_vocab(&train, 1) };
    let system = train_system(&run, &train, &dev, &vocab, |_, _| ControlFlow::Continue(()))?;
    system.save(&run, &out)?;
    let csv = trace_csv(&system.trace, &system.report.dev_losses);
    fs::write(&trace_path, csv).map_err(|e| CliError::io(&trace_path, e))?;
    Ok(TrainSummary {
        config: run.to_value(),
        checkpoint: out,
        loss_trace: trace_path,
        steps: system.report.steps,
        final_loss: system.report.final_loss.total,
        dev_losses: system.report.dev_losses.clone(),
        best_dev_loss: system.report.best_dev_loss,
        best_step: system.report.best_step,
        threshold: system.threshold,
        selector_threshold: system.selector.as_ref().map(|s| s.1),
    })
}

/// Predictions as a JSON array or one object per line.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let malformed = |e: serde_json::Error| CliError::Malformed(format!("{}: {e}", path.display()));
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(malformed);
    }
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(malformed)).collect()
}

pub struct EvalArgs<'a> {
    pub config: Option<&'a Path>,
    pub checkpoint: Option<&'a Path>,
    pub corpus: Option<&'a Path>,
    pub split: &'a str,
    pub method: Option<Method>,
    pub pred: Option<&'a Path>,
    pub gold: Option<&'a Path>,
}

/// Scores a prediction file against a gold corpus file, or runs a
/// checkpoint over a corpus split.
pub fn eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    if let Some(pred) = args.pred {
        let gold_path = args.gold.ok_or_else(|| CliError::Config("--pred needs --gold".into()))?;
        let run = load_run(args.config)?;
        let gold = read_bundles(gold_path)?;
        let metrics = score(&read_predictions(pred)?, &gold)?;
        return Ok(EvalReport { config: run.to_value(), method: None, split: None, panels: Panels::from_report(&metrics), metrics });
    }
    let run = args.config.map(RunConfig::load).transpose()?;
    let ckpt = required(args.checkpoint, run.as_ref().and_then(|r| r.paths.checkpoint.as_ref()), "checkpoint")?;
    let corpus_dir = required(args.corpus, run.as_ref().and_then(|r| r.paths.corpus.as_ref()), "corpus directory")?;
    let (system, stored_config) = TrainedSystem::load(&ckpt)?;
    if let Some(m) = args.method {
        if m != system.method {
            return Err(CliError::Mismatch(format!("checkpoint was trained for {}, not {m}", system.method)));
        }
    }
    if let Some(run) = &run {
        if run.method != system.method || run.resolved_model(system.vocab.len()) != system.model.config {
            return Err(CliError::Mismatch(format!("{} does not match the given config", ckpt.display())));
        }
    }
    let split = parse_split(args.split)?;
    let bundles = read_bundles(&split_path(&corpus_dir, split))?;
    let metrics = system.evaluate(&bundles)?;
    Ok(EvalReport {
        config: stored_config,
        method: Some(system.method),
        split: Some(split.name().to_string()),
        panels: Panels::from_report(&metrics),
        metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictOutput {
    pub answer: String,
    pub evidence_pages: BTreeSet<u32>,
    /// The generated arithmetic expression when the answer was computed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    pub degraded: bool,
}

pub fn read_deck(path: &Path) -> Result<SlideDeck, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    match serde_json::from_str::<SlideDeck>(&text) {
        Ok(deck) => Ok(deck),
        Err(e) => match serde_json::from_str::<CorpusLine>(&text) {
            Ok(CorpusLine::Deck(deck)) => Ok(deck),
            _ => Err(CliError::Malformed(format!("{}: {e}", path.display()))),
        },
    }
}

pub fn predict(checkpoint: &Path, deck_path: &Path, question: &str) -> Result<PredictOutput, CliError> {
    let deck = read_deck(deck_path)?;
    let (system, _) = TrainedSystem::load(checkpoint)?;
    let query = Query { qa_id: "query", deck: &deck, question };
    let p = system.predictor().predict(&[query])?.remove(0);
    Ok(PredictOutput { answer: p.answer, evidence_pages: p.evidence_pages, expression: p.expression, degraded: p.degraded })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectMethod {
    Bm25,
    Hier,
}

impl std::str::FromStr for SelectMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bm25" => Ok(SelectMethod::Bm25),
            "hier" => Ok(SelectMethod::Hier),
            _ => Err(format!("unknown selection method {s:?}, expected bm25 or hier")),
        }
    }
}

pub struct SelectArgs<'a> {
    pub method: SelectMethod,
    pub corpus: &'a Path,
    pub split: &'a str,
    pub checkpoint: Option<&'a Path>,
    pub k: usize,
}

#[derive(Debug, Serialize)]
pub struct Ranking {
    pub qa_id: String,
    pub ranked_pages: Vec<u32>,
    pub evidence_pages: BTreeSet<u32>,
}

#[derive(Debug, Serialize)]
pub struct SelectReport {
    pub config: serde_json::Value,
    pub method: String,
    pub split: String,
    pub k: usize,
    pub evidence_em: f64,
    pub evidence_f1: f64,
    pub recall_at_k: Option<f64>,
    pub rankings: Vec<Ranking>,
}

/// Page selection alone. BM25 selects its top page; the hierarchical
/// classifier selects pages above its tuned threshold.
pub fn select(args: &SelectArgs) -> Result<SelectReport, CliError> {
    let split = parse_split(args.split)?;
    let bundles: Vec<DeckBundle> = read_corpus(args.corpus).map(|c| c.split(split).to_vec())?;
    let mut rankings = Vec::new();
    let mut config = serde_json::json!({ "bm25": Bm25Params::default() });
    match args.method {
        SelectMethod::Bm25 => {
            for b in &bundles {
                for r in &b.records {
                    let ranked = top_k_pages(&rank_pages(&b.deck, &r.question, Bm25Params::default()), b.deck.slides.len());
                    let evidence = ranked.iter().take(1).copied().collect();
                    rankings.push(Ranking { qa_id: r.qa_id.clone(), ranked_pages: ranked, evidence_pages: evidence });
                }
            }
        }
        SelectMethod::Hier => {
            let ckpt = args.checkpoint.ok_or_else(|| CliError::Config("select --method hier needs --checkpoint".into()))?;
            let (system, stored) = TrainedSystem::load(ckpt)?;
            let (model, tau) = system
                .selector
                .as_ref()
                .ok_or_else(|| CliError::Mismatch(format!("{} has no page classifier", ckpt.display())))?;
            config = stored;
            let queries: Vec<Query> = bundles.iter().flat_map(|b| b.records.iter().map(|r| Query::from_record(r, &b.deck))).collect();
            for (q, probs) in queries.iter().zip(page_probabilities(model, &system.vocab, &queries, 16)?) {
                rankings.push(Ranking {
                    qa_id: q.qa_id.to_string(),
                    ranked_pages: top_k_pages(&probs, probs.len()),
                    evidence_pages: select_above(&probs, *tau),
                });
            }
        }
    }
    let preds: Vec<Prediction> = rankings
        .iter()
        .map(|r| Prediction {
            qa_id: r.qa_id.clone(),
            evidence_pages: r.evidence_pages.clone(),
            ranked_pages: Some(r.ranked_pages.clone()),
            ..Prediction::default()
        })
        .collect();
    let golds = crate::data::records(&bundles);
    let report = breakdown_report_at(&preds, &golds, args.k).map_err(|e| CliError::Malformed(e.to_string()))?;
    Ok(SelectReport {
        config,
        method: match args.method {
            SelectMethod::Bm25 => "bm25".into(),
            SelectMethod::Hier => "hier".into(),
        },
        split: split.name().into(),
        k: args.k,
        evidence_em: report.overall.evidence_em,
        evidence_f1: report.overall.evidence_f1,
        recall_at_k: report.overall.recall_at_k,
        rankings,
    })
}

pub fn calc(expr: &str) -> Result<String, CliError> {
    Ok(calculate(expr)?)
}

//! Training and evaluating one method end to end.

use std::collections::BTreeSet;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use deckqa::corpus::DeckBundle;
use deckqa::eval::{breakdown_report, MetricsReport, Prediction};
use deckqa::textproc::Vocab;
use deckqa_model::batch::{build_instances, Instance, Recipe};
use deckqa_model::{
    load_checkpoint, page_probabilities, predict_records, save_checkpoint, tune_threshold, CheckpointMeta, LossParts,
    Method, Model, ModelConfig, Predictor, Query, SelectorKind, TrainReport, Trainer,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{decks, records};
use crate::error::CliError;

/// Loss trace rows: `(step, losses, learning rate)`.
pub type Trace = Vec<(u64, LossParts, f64)>;

pub struct TrainedSystem {
    pub method: Method,
    pub model: Model,
    pub vocab: Vocab,
    /// Threshold of the model's own selector head.
    pub threshold: Option<f64>,
    /// Separate page classifier with its threshold (`pipeline-hier`).
    pub selector: Option<(Model, f64)>,
    pub report: TrainReport,
    pub trace: Trace,
    pub selector_report: Option<TrainReport>,
}

pub fn build_all(recipe: Recipe, bundles: &[DeckBundle], vocab: &Vocab, config: &ModelConfig) -> Result<Vec<Instance>, CliError> {
    let mut out = Vec::new();
    let mut index = 0;
    for b in bundles {
        for r in &b.records {
            out.extend(build_instances(recipe, index, &b.deck, r, vocab, config)?);
            index += 1;
        }
    }
    Ok(out)
}

/// Threshold maximizing evidence F1 on `bundles`; 0.5 without data.
pub fn tune_on(model: &Model, vocab: &Vocab, bundles: &[DeckBundle]) -> Result<f64, CliError> {
    let mut queries = Vec::new();
    let mut gold: Vec<BTreeSet<u32>> = Vec::new();
    for b in bundles {
        for r in &b.records {
            queries.push(Query::from_record(r, &b.deck));
            gold.push(r.evidence_pages.clone());
        }
    }
    if queries.is_empty() {
        return Ok(0.5);
    }
    let probs = page_probabilities(model, vocab, &queries, 16)?;
    Ok(tune_threshold(&probs.into_iter().zip(gold).collect::<Vec<_>>()))
}

fn fit(
    config: ModelConfig,
    recipe: Recipe,
    run: &RunConfig,
    train: &[DeckBundle],
    dev: &[DeckBundle],
    vocab: &Vocab,
    on_eval: &mut dyn FnMut(&Model, u64) -> ControlFlow<()>,
) -> Result<(Model, TrainReport, Trace), CliError> {
    let train_set = build_all(recipe, train, vocab, &config)?;
    let dev_set = build_all(recipe, dev, vocab, &config)?;
    let model = Model::new(config, run.seed)?;
    let mut trainer = Trainer::new(model, run.train_config(), train_set, dev_set)?;
    let report = trainer.run(|m, step| on_eval(m, step))?;
    let trace = std::mem::take(&mut trainer.trace);
    Ok((trainer.into_best_model(), report, trace))
}

/// Trains `run.method` on `train`, selecting parameters by `dev` loss and
/// tuning selector thresholds on `dev`. `on_eval` runs at every evaluation
/// of the main model and may stop training early.
pub fn train_system(
    run: &RunConfig,
    train: &[DeckBundle],
    dev: &[DeckBundle],
    vocab: &Vocab,
    mut on_eval: impl FnMut(&Model, u64) -> ControlFlow<()>,
) -> Result<TrainedSystem, CliError> {
    let method = run.method;
    let config = run.resolved_model(vocab.len());
    config.validate()?;
    let (model, report, trace) = fit(config.clone(), Recipe::for_method(method), run, train, dev, vocab, &mut on_eval)?;
    let threshold = match method.selector() {
        SelectorKind::None => None,
        _ => Some(tune_on(&model, vocab, dev)?),
    };
    let mut selector = None;
    let mut selector_report = None;
    if method == Method::PipelineHier {
        let sel_config = ModelConfig { selector: SelectorKind::Hierarchical, ..config };
        let (sel, rep, _) = fit(sel_config, Recipe::PageClassifier, run, train, dev, vocab, &mut |_, _| ControlFlow::Continue(()))?;
        let tau = tune_on(&sel, vocab, dev)?;
        selector = Some((sel, tau));
        selector_report = Some(rep);
    }
    Ok(TrainedSystem { method, model, vocab: vocab.clone(), threshold, selector, report, trace, selector_report })
}

impl TrainedSystem {
    pub fn predictor(&self) -> Predictor<'_> {
        let mut p = Predictor::new(self.method, &self.model, &self.vocab);
        if let Some(t) = self.threshold {
            p.threshold = t;
        }
        p.selector = self.selector.as_ref().map(|(m, t)| (m, *t));
        p
    }

    pub fn predict(&self, bundles: &[DeckBundle]) -> Result<Vec<Prediction>, CliError> {
        Ok(predict_records(&self.predictor(), &records(bundles), &decks(bundles))?)
    }

    pub fn evaluate(&self, bundles: &[DeckBundle]) -> Result<MetricsReport, CliError> {
        score(&self.predict(bundles)?, bundles)
    }

    pub fn meta(&self, run: &RunConfig) -> CheckpointMeta {
        let mut meta = CheckpointMeta::new(self.method, &self.model, &self.vocab);
        meta.threshold = self.threshold;
        meta.best_dev_loss = self.report.best_dev_loss;
        meta.run_config = run.to_value();
        meta
    }

    /// Writes the main checkpoint and, for `pipeline-hier`, the page
    /// classifier next to it.
    pub fn save(&self, run: &RunConfig, path: &Path) -> Result<(), CliError> {
        save_checkpoint(path, &self.model, &self.meta(run)).map_err(|e| with_path(e, path))?;
        if let Some((sel, tau)) = &self.selector {
            let mut meta = CheckpointMeta::new(self.method, sel, &self.vocab);
            meta.threshold = Some(*tau);
            meta.best_dev_loss = self.selector_report.as_ref().and_then(|r| r.best_dev_loss);
            meta.run_config = run.to_value();
            let sel_path = selector_path(path);
            save_checkpoint(&sel_path, sel, &meta).map_err(|e| with_path(e, &sel_path))?;
        }
        Ok(())
    }

    /// Loads a system saved with [`TrainedSystem::save`].
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), CliError> {
        let ckpt = load_checkpoint(path).map_err(|e| with_path(e, path))?;
        let vocab = ckpt.meta.vocab()?;
        if ckpt.meta.config.vocab_size != vocab.len() {
            return Err(CliError::Corrupt(format!("{}: vocab has {} tokens, model expects {}", path.display(), vocab.len(), ckpt.meta.config.vocab_size)));
        }
        let method = ckpt.meta.method;
        let mut selector = None;
        let mut selector_report = None;
        if method == Method::PipelineHier {
            let sel_path = selector_path(path);
            let sel = load_checkpoint(&sel_path).map_err(|e| with_path(e, &sel_path))?;
            if sel.meta.vocab != ckpt.meta.vocab || sel.meta.config.selector != SelectorKind::Hierarchical {
                return Err(CliError::Mismatch(format!("{} does not belong to {}", sel_path.display(), path.display())));
            }
            selector_report = Some(TrainReport { steps: sel.meta.step, best_dev_loss: sel.meta.best_dev_loss, ..TrainReport::default() });
            selector = Some((sel.model, sel.meta.threshold.unwrap_or(0.5)));
        }
        let report = TrainReport { steps: ckpt.meta.step, best_dev_loss: ckpt.meta.best_dev_loss, ..TrainReport::default() };
        let system = TrainedSystem {
            method,
            model: ckpt.model,
            vocab,
            threshold: ckpt.meta.threshold,
            selector,
            report,
            trace: Vec::new(),
            selector_report,
        };
        Ok((system, ckpt.meta.run_config))
    }
}

fn with_path(e: deckqa_model::ModelError, path: &Path) -> CliError {
    match CliError::from(e) {
        CliError::Model(m) => CliError::Model(format!("{}: {m}", path.display())),
        CliError::Corrupt(m) => CliError::Corrupt(format!("{}: {m}", path.display())),
        CliError::Mismatch(m) => CliError::Mismatch(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn selector_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".selector");
    PathBuf::from(s)
}

pub fn score(preds: &[Prediction], bundles: &[DeckBundle]) -> Result<MetricsReport, CliError> {
    breakdown_report(preds, &records(bundles)).map_err(|e| CliError::Malformed(e.to_string()))
}

#[derive(Clone, Debug, Serialize)]
pub struct MainPanel {
    pub answer_em: f64,
    pub answer_f1: f64,
    pub evidence_em: f64,
    pub evidence_f1: f64,
    pub joint_em: f64,
    pub joint_f1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectPanel {
    pub evidence_em: f64,
    pub evidence_f1: f64,
    pub recall_at_k: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct QaPanel {
    pub answer_em: f64,
    pub answer_f1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Panels {
    pub main: MainPanel,
    pub select: SelectPanel,
    pub qa: QaPanel,
}

impl Panels {
    pub fn from_report(r: &MetricsReport) -> Self {
        let o = &r.overall;
        Self {
            main: MainPanel {
                answer_em: o.answer_em,
                answer_f1: o.answer_f1,
                evidence_em: o.evidence_em,
                evidence_f1: o.evidence_f1,
                joint_em: o.joint_em,
                joint_f1: o.joint_f1,
            },
            select: SelectPanel { evidence_em: o.evidence_em, evidence_f1: o.evidence_f1, recall_at_k: o.recall_at_k },
            qa: QaPanel { answer_em: o.answer_em, answer_f1: o.answer_f1 },
        }
    }
}

/// What `eval` writes.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub method: Option<Method>,
    pub split: Option<String>,
    pub panels: Panels,
    pub metrics: MetricsReport,
}

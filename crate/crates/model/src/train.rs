//! Multi-task loss and the training loop.

use std::ops::ControlFlow;

use deckqa::textproc::BOS;
use deckqa_numerics::{AdamW, AdamWConfig, Graph, ParamStore, Schedule, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{Instance, Role};
use crate::config::SelectorKind;
use crate::network::{MemorySpan, Model};
use crate::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: u64,
    /// Instances per step; a question trained on both tasks counts twice.
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    /// Shuffling and dropout seed; runs set it from their own seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            warmup_steps: 1000,
            batch_size: 32,
            max_steps: 3000,
            eval_every: 500,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            seed: 7,
        }
    }
}

/// Loss components of one batch. Absent components are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub dec: f64,
    pub sel: f64,
    pub total: f64,
}

const IGNORE: usize = usize::MAX;

/// Builds the weighted loss `lambda_dec * L_dec + lambda_sel * L_sel` of a
/// batch on `g` and returns its node with the component values.
pub fn batch_loss(model: &Model, g: &mut Graph, batch: &[&Instance]) -> Result<(Var, LossParts), ModelError> {
    let cfg = &model.config;
    let seqs: Vec<_> = batch.iter().flat_map(|i| i.pages.iter()).collect();
    let encoded = model.encode(g, &seqs)?;

    let mut spans = Vec::with_capacity(batch.len());
    let mut first_rows = Vec::with_capacity(seqs.len());
    let mut row = 0;
    for inst in batch {
        let start = row;
        for p in &inst.pages {
            first_rows.push(row);
            row += p.len;
        }
        spans.push(MemorySpan { start, len: row - start });
    }

    let mut terms: Vec<(Var, f32)> = Vec::new();
    let mut parts = LossParts::default();

    let decoding: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].target.is_empty()).collect();
    if cfg.has_decoder() && !decoding.is_empty() {
        let kv = model.memory_kv(g, encoded)?;
        let inputs: Vec<Vec<u32>> = decoding
            .iter()
            .map(|&i| {
                let t = &batch[i].target;
                std::iter::once(BOS).chain(t[..t.len() - 1].iter().copied()).collect()
            })
            .collect();
        let pairs: Vec<(&[u32], MemorySpan)> =
            decoding.iter().zip(&inputs).map(|(&i, inp)| (inp.as_slice(), spans[i])).collect();
        let states = model.decode_states(g, &kv, &pairs)?;
        let logits = model.logits(g, states)?;
        let mut answer = Vec::new();
        let mut evidence = Vec::new();
        for &i in &decoding {
            let inst = batch[i];
            for &t in &inst.target {
                let (a, e) = match inst.role {
                    Role::Evidence => (IGNORE, t as usize),
                    _ => (t as usize, IGNORE),
                };
                answer.push(a);
                evidence.push(e);
            }
        }
        if answer.iter().any(|&t| t != IGNORE) {
            let l = g.cross_entropy(logits, &answer, IGNORE)?;
            parts.dec = g.value(l).item() as f64;
            terms.push((l, cfg.lambda_dec));
        }
        if evidence.iter().any(|&t| t != IGNORE) {
            let l = g.cross_entropy(logits, &evidence, IGNORE)?;
            parts.sel = g.value(l).item() as f64;
            terms.push((l, cfg.lambda_sel));
        }
    }

    if cfg.selector != SelectorKind::None {
        let mut rows = Vec::new();
        let mut sizes = Vec::new();
        let mut labels = Vec::new();
        let mut at = 0;
        for inst in batch {
            let n = inst.pages.len();
            if !inst.page_labels.is_empty() {
                rows.extend_from_slice(&first_rows[at..at + n]);
                sizes.push(n);
                labels.extend_from_slice(&inst.page_labels);
            }
            at += n;
        }
        if !rows.is_empty() {
            let logits = model.page_logits(g, encoded, &rows, &sizes)?;
            let l = g.bce_with_logits(logits, &labels)?;
            parts.sel = g.value(l).item() as f64;
            terms.push((l, cfg.lambda_sel));
        }
    }

    if terms.is_empty() {
        return Err(ModelError::Unsupported("batch has nothing to learn from".into()));
    }
    let total = g.weighted_sum(&terms)?;
    parts.total = g.value(total).item() as f64;
    Ok((total, parts))
}

/// One optimizer step on `batch`; dropout masks are keyed by `seed` and the
/// step counter.
pub fn training_step(model: &mut Model, optimizer: &AdamW, batch: &[&Instance], seed: u64) -> Result<LossParts, ModelError> {
    let grads = {
        let mut g = Graph::training(&model.store, model.config.dropout, seed, model.store.step);
        let (loss, parts) = batch_loss(model, &mut g, batch)?;
        (g.backward(loss), parts)
    };
    optimizer.step(&mut model.store, &grads.0);
    Ok(grads.1)
}

/// Mean inference-mode loss over `instances` in chunks of `batch_size`,
/// weighted by chunk length.
pub fn mean_loss(model: &Model, instances: &[Instance], batch_size: usize) -> Result<f64, ModelError> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in instances.chunks(batch_size.max(1)) {
        let refs: Vec<&Instance> = chunk.iter().collect();
        let mut g = Graph::new(&model.store);
        let (_, parts) = batch_loss(model, &mut g, &refs)?;
        total += parts.total * chunk.len() as f64;
    }
    Ok(total / instances.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub final_loss: LossParts,
    /// `(step, dev loss)` at each evaluation.
    pub dev_losses: Vec<(u64, f64)>,
    pub best_dev_loss: Option<f64>,
    pub best_step: Option<u64>,
    pub stopped_early: bool,
}

/// Instances grouped by source record so both tasks of a question land in
/// the same batch.
fn group_by_record(instances: &[Instance]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if instances[g[0]].record == inst.record => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    optimizer: AdamW,
    train: Vec<Instance>,
    dev: Vec<Instance>,
    groups: Vec<Vec<usize>>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    best: Option<(f64, u64, ParamStore)>,
    pub trace: Vec<(u64, LossParts, f64)>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, train: Vec<Instance>, dev: Vec<Instance>) -> Result<Self, ModelError> {
        if train.is_empty() {
            return Err(ModelError::Unsupported("no training instances".into()));
        }
        if config.batch_size == 0 {
            return Err(ModelError::Config { field: "batch_size".into(), message: "must be positive".into() });
        }
        let optimizer = AdamW::new(
            AdamWConfig {
                weight_decay: config.weight_decay,
                max_grad_norm: (config.max_grad_norm > 0.0).then_some(config.max_grad_norm),
                ..AdamWConfig::default()
            },
            Schedule::new(config.lr, config.warmup_steps),
        );
        let groups = group_by_record(&train);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00);
        let mut t = Self {
            model,
            config,
            optimizer,
            train,
            dev,
            groups,
            order: Vec::new(),
            cursor: 0,
            rng,
            best: None,
            trace: Vec::new(),
        };
        t.reshuffle();
        Ok(t)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.groups.len()).collect();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        while batch.len() < self.config.batch_size {
            if self.cursor == self.order.len() {
                self.reshuffle();
            }
            let group = &self.groups[self.order[self.cursor]];
            if !batch.is_empty() && batch.len() + group.len() > self.config.batch_size {
                break;
            }
            batch.extend_from_slice(group);
            self.cursor += 1;
        }
        batch
    }

    pub fn step_count(&self) -> u64 {
        self.model.store.step
    }

    pub fn train_instances(&self) -> &[Instance] {
        &self.train
    }

    pub fn step(&mut self) -> Result<LossParts, ModelError> {
        let ids = self.next_batch();
        let batch: Vec<&Instance> = ids.iter().map(|&i| &self.train[i]).collect();
        let lr = self.optimizer.schedule.lr(self.model.store.step + 1);
        let parts = training_step(&mut self.model, &self.optimizer, &batch, self.config.seed)?;
        self.trace.push((self.model.store.step, parts, lr));
        Ok(parts)
    }

    pub fn dev_loss(&self) -> Result<f64, ModelError> {
        mean_loss(&self.model, &self.dev, self.config.batch_size)
    }

    /// Evaluates dev loss and keeps a copy of the parameters when it improves.
    pub fn checkpoint_best(&mut self) -> Result<f64, ModelError> {
        let loss = self.dev_loss()?;
        let step = self.step_count();
        if self.best.as_ref().is_none_or(|b| loss < b.0) {
            self.best = Some((loss, step, self.model.store.clone()));
        }
        Ok(loss)
    }

    pub fn best_dev_loss(&self) -> Option<(f64, u64)> {
        self.best.as_ref().map(|b| (b.0, b.1))
    }

    /// Trains until `max_steps`. Every `eval_every` steps (and at the end)
    /// dev loss is recorded and `on_eval` may stop training early.
    pub fn run<F>(&mut self, mut on_eval: F) -> Result<TrainReport, ModelError>
    where
        F: FnMut(&Model, u64) -> ControlFlow<()>,
    {
        let mut report = TrainReport::default();
        let every = self.config.eval_every.max(1);
        while self.step_count() < self.config.max_steps {
            report.final_loss = self.step()?;
            let step = self.step_count();
            if step % every == 0 || step == self.config.max_steps {
                let dev = if self.dev.is_empty() { None } else { Some(self.checkpoint_best()?) };
                if let Some(d) = dev {
                    report.dev_losses.push((step, d));
                }
                log::info!("step {step} loss {:.4} dev {:?}", report.final_loss.total, dev);
                if on_eval(&self.model, step).is_break() {
                    report.stopped_early = step < self.config.max_steps;
                    break;
                }
            }
        }
        report.steps = self.step_count();
        if let Some((loss, step, _)) = &self.best {
            report.best_dev_loss = Some(*loss);
            report.best_step = Some(*step);
        }
        Ok(report)
    }

    /// The model with the best dev-loss parameters restored, if any were recorded.
    pub fn into_best_model(self) -> Model {
        let mut model = self.model;
        if let Some((_, step, store)) = self.best {
            model.store = store;
            model.store.step = step;
        }
        model
    }

    pub fn into_model(self) -> Model {
        self.model
    }
}

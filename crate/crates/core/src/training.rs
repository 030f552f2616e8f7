//! Batching, the optimization loop, early stopping and checkpointing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::corpus::{load_corpus, DialogueSample, EmotionLabels, PAD};
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::knowledge::KnowledgeBase;
use crate::model::{sample_loss, LossItem, LossValues, Model, ModelConfig};
use crate::numerics::{clip_grad_norm, lr_schedule, AdamConfig, AdamState, ParamGrads, Session};
use crate::pipeline::{build_model_vocab, prepare_examples, Example, KnowledgePaths};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub warmup: u64,
    /// Multiplier on the warmup schedule.
    pub lr_factor: f64,
    pub max_epochs: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Validate every this many steps; 0 means once per epoch.
    pub eval_every: u64,
    pub clip_norm: f64,
    pub min_count: usize,
    pub max_vocab: Option<usize>,
    pub checkpoint: PathBuf,
    pub log: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 16,
            warmup: 8000,
            lr_factor: 1.0,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            eval_every: 0,
            clip_norm: 1.0,
            min_count: 1,
            max_vocab: None,
            checkpoint: PathBuf::from("model.bin"),
            log: None,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size and patience must be at least 1".into()));
        }
        if !(self.lr_factor > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("lr_factor and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Corpus splits and the label set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    /// Falls back to the training split.
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Emotion labels in id order; the 32 standard labels when absent.
    pub labels: Option<Vec<String>>,
}

impl DataPaths {
    pub fn labels(&self) -> Result<EmotionLabels> {
        match &self.labels {
            Some(l) => EmotionLabels::new(l.iter().cloned()),
            None => Ok(EmotionLabels::default()),
        }
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub train: TrainOptions,
    pub data: DataPaths,
    pub knowledge: KnowledgePaths,
    pub graph: GraphConfig,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn train_split(&self) -> Result<&Path> {
        self.data
            .train
            .as_deref()
            .ok_or_else(|| Error::Config("no training corpus configured".into()))
    }
}

/// One mini-batch: example indices, `PAD`-padded targets (EOS included),
/// their mask and gold emotions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub targets: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub emotions: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Unpadded targets of row `k`.
    pub fn row_targets(&self, k: usize) -> &[usize] {
        let n = self.mask[k].iter().filter(|&&m| m).count();
        &self.targets[k][..n]
    }
}

/// Shuffles `examples` with `rng` and cuts batches of `batch_size`, keeping
/// the final partial batch.
pub fn make_batches(examples: &[Example], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let width = chunk.iter().map(|&i| examples[i].targets.len()).max().unwrap_or(0);
            let mut batch = Batch {
                indices: chunk.to_vec(),
                targets: Vec::with_capacity(chunk.len()),
                mask: Vec::with_capacity(chunk.len()),
                emotions: Vec::with_capacity(chunk.len()),
            };
            for &i in chunk {
                let t = &examples[i].targets;
                let mut row = t.clone();
                row.resize(width, PAD);
                batch.mask.push((0..width).map(|j| j < t.len()).collect());
                batch.targets.push(row);
                batch.emotions.push(examples[i].emotion);
            }
            batch
        })
        .collect()
}

/// Stop after `patience` consecutive validations without a new best.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub bad: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    /// Records a validation loss; returns true when it is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.bad = 0;
            true
        } else {
            self.bad += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub loss_emo: f64,
    pub loss_gen: f64,
    pub val_loss: Option<f64>,
}

pub const LOG_HEADER: &str = "step,lr,loss,loss_emo,loss_gen,val_loss";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.lr, r.loss, r.loss_emo, r.loss_gen, val
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation loss.
    pub model: Model,
    pub log: Vec<LogRow>,
    pub steps: u64,
    pub epochs: usize,
    pub stopped_early: bool,
    pub best_val_loss: f64,
}

fn add_grads(acc: &mut ParamGrads, g: ParamGrads) {
    for (a, g) in acc.iter_mut().zip(g) {
        match (a.as_mut(), g) {
            (Some(a), Some(g)) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
            (None, Some(g)) => *a = Some(g),
            _ => {}
        }
    }
}

/// Loss values and gradients of the joint batch loss, with one tape per
/// sample.
pub fn batch_gradients(model: &Model, items: &[LossItem<'_>]) -> Result<(LossValues, ParamGrads)> {
    if items.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let cfg = &model.config;
    let n = items.len() as f64;
    let tokens: usize = items.iter().map(|i| i.targets.len()).sum();
    let (we, wg) = (cfg.gamma_emo / n, cfg.gamma_gen / tokens as f64);
    let mut grads: ParamGrads = vec![None; model.params.len()];
    let (mut emo, mut gen) = (0.0, 0.0);
    for item in items {
        let mut s = Session::new(&model.params, true);
        let (e, g) = sample_loss(&mut s, cfg, item)?;
        emo += s.tape.value(e).item();
        gen += s.tape.value(g).item();
        let a = s.tape.scale(e, we);
        let b = s.tape.scale(g, wg);
        let total = s.tape.add(a, b)?;
        add_grads(&mut grads, s.param_grads(total)?);
    }
    let (emotion, generation) = (emo / n, gen / tokens as f64);
    Ok((
        LossValues {
            total: cfg.gamma_emo * emotion + cfg.gamma_gen * generation,
            emotion,
            generation,
            tokens,
        },
        grads,
    ))
}

/// Joint loss over a whole split, averaged like one large batch.
pub fn dataset_loss(model: &Model, examples: &[Example]) -> Result<LossValues> {
    if examples.is_empty() {
        return Err(Error::Domain("empty dataset".into()));
    }
    let (mut emo, mut gen, mut tokens) = (0.0, 0.0, 0);
    for ex in examples {
        let mut s = Session::new(&model.params, false);
        let (e, g) = sample_loss(&mut s, &model.config, &item(ex))?;
        emo += s.tape.value(e).item();
        gen += s.tape.value(g).item();
        tokens += ex.targets.len();
    }
    let cfg = &model.config;
    let (emotion, generation) = (emo / examples.len() as f64, gen / tokens as f64);
    Ok(LossValues {
        total: cfg.gamma_emo * emotion + cfg.gamma_gen * generation,
        emotion,
        generation,
        tokens,
    })
}

pub fn item(ex: &Example) -> LossItem<'_> {
    LossItem {
        graph: &ex.context.graph,
        emotion: ex.emotion,
        targets: &ex.targets,
    }
}

/// The optimization loop. `on_improve` sees every new best model.
pub fn train_loop(
    mut model: Model,
    train: &[Example],
    valid: &[Example],
    opts: &TrainOptions,
    on_improve: &mut dyn FnMut(&Model) -> Result<()>,
) -> Result<TrainOutcome> {
    opts.validate()?;
    if train.is_empty() {
        return Err(Error::Domain("empty training split".into()));
    }
    let valid = if valid.is_empty() { train } else { valid };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = AdamState::new(&model.params, AdamConfig::default());
    let mut stopper = EarlyStopping::new(opts.patience);
    let mut best = model.clone();
    let mut log = Vec::new();
    let mut step = 0u64;
    let mut epochs = 0;
    let mut stopped_early = false;
    let mut last_eval = 0;

    'outer: for epoch in 0..opts.max_epochs {
        epochs = epoch + 1;
        let batches = make_batches(train, opts.batch_size, &mut rng);
        let per_epoch = batches.len() as u64;
        for (b, batch) in batches.iter().enumerate() {
            step += 1;
            let lr = opts.lr_factor * lr_schedule(step, model.config.d_model, opts.warmup);
            let items: Vec<LossItem<'_>> = batch.indices.iter().map(|&i| item(&train[i])).collect();
            let (values, mut grads) = batch_gradients(&model, &items)?;
            if !values.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {} at step {step}, batch {b} of epoch {epoch}",
                    values.total
                )));
            }
            clip_grad_norm(&mut grads, opts.clip_norm);
            adam.step(&mut model.params, &grads, lr);
            model.params.round_to_f32();

            let every = if opts.eval_every == 0 {
                per_epoch
            } else {
                opts.eval_every
            };
            let val_loss = if step.is_multiple_of(every) {
                last_eval = step;
                Some(dataset_loss(&model, valid)?.total)
            } else {
                None
            };
            log.push(LogRow {
                step,
                lr,
                loss: values.total,
                loss_emo: values.emotion,
                loss_gen: values.generation,
                val_loss,
            });
            if let Some(v) = val_loss {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("validation loss {v} at step {step}")));
                }
                if stopper.observe(v) {
                    best = model.clone();
                    on_improve(&best)?;
                } else if stopper.should_stop() {
                    stopped_early = true;
                    break 'outer;
                }
            }
        }
    }
    if last_eval != step && !stopped_early {
        let v = dataset_loss(&model, valid)?.total;
        if let Some(row) = log.last_mut() {
            row.val_loss = Some(v);
        }
        if stopper.observe(v) {
            best = model.clone();
            on_improve(&best)?;
        }
    }
    if stopper.best.is_infinite() {
        // No validation ran (zero epochs); keep the initial model.
        on_improve(&best)?;
    }
    Ok(TrainOutcome {
        model: best,
        log,
        steps: step,
        epochs,
        stopped_early,
        best_val_loss: stopper.best,
    })
}

/// Loaded splits and knowledge for one configuration.
pub struct Prepared {
    pub model: Model,
    pub kb: KnowledgeBase,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
}

/// Loads corpora and knowledge, builds the vocabulary and a fresh model.
pub fn prepare_run(cfg: &TrainConfig) -> Result<Prepared> {
    let labels = cfg.data.labels()?;
    let kb = cfg.knowledge.load()?;
    let train_samples = load_corpus(cfg.train_split()?, &labels)?;
    let valid_samples: Vec<DialogueSample> = match &cfg.data.valid {
        Some(p) => load_corpus(p, &labels)?,
        None => Vec::new(),
    };
    let mut graph = cfg.graph.clone();
    graph.use_knowledge &= cfg.model.use_knowledge;
    let vocab = build_model_vocab(&train_samples, &kb, &graph, cfg.train.min_count, cfg.train.max_vocab)?;
    let embeddings = (!kb.embeddings.is_empty()).then_some(&kb.embeddings);
    let model = Model::new(
        cfg.model.clone(),
        cfg.graph.clone(),
        vocab,
        labels,
        cfg.train.seed,
        embeddings,
    )?;
    let train = prepare_examples(&model, &kb, &train_samples)?;
    let valid = prepare_examples(&model, &kb, &valid_samples)?;
    log::info!(
        "prepared {} training and {} validation examples, vocabulary {}",
        train.len(),
        valid.len(),
        model.vocab.len()
    );
    Ok(Prepared {
        model,
        kb,
        train,
        valid,
    })
}

/// Full run: prepare, optimize, write the best checkpoint and the CSV log.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let prepared = prepare_run(cfg)?;
    let path = cfg.train.checkpoint.clone();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let outcome = train_loop(prepared.model, &prepared.train, &prepared.valid, &cfg.train, &mut |m| {
        save_checkpoint(m, &path)
    })?;
    if let Some(log_path) = &cfg.train.log {
        std::fs::write(log_path, log_csv(&outcome.log)).map_err(|e| Error::io(log_path, e))?;
    }
    Ok(outcome)
}

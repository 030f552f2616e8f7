//! Automatic metrics, the concept-count sweep and the ablation harness.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, DialogueSample};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeBase;
use crate::model::{Model, DEFAULT_MAX_DECODE_STEPS};
use crate::pipeline::{prepare_examples, Example};
use crate::training::{dataset_loss, prepare_run, train_loop, TrainConfig};

/// Fraction of positions where `predicted` equals `gold`.
pub fn emotion_accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.len() != gold.len() || gold.is_empty() {
        return Err(Error::Domain(format!(
            "accuracy needs equal non-empty lengths, got {} and {}",
            predicted.len(),
            gold.len()
        )));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Unique n-grams over total n-grams across all responses; 0 when there are
/// none.
pub fn distinct_n<S: AsRef<str>>(responses: &[Vec<S>], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        if r.len() < n {
            continue;
        }
        for w in r.windows(n) {
            seen.insert(w.iter().map(AsRef::as_ref).collect());
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// `exp` of the mean token negative log-likelihood under teacher forcing.
pub fn perplexity(model: &Model, examples: &[Example]) -> Result<f64> {
    Ok(dataset_loss(model, examples)?.generation.exp())
}

/// Index of the largest value, the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutput {
    pub id: String,
    pub gold_emotion: String,
    pub predicted_emotion: String,
    pub reference: String,
    pub generated: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub perplexity: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub distinct1_x100: f64,
    pub distinct2_x100: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleOutput>,
}

/// Greedy-decodes every example and scores the outputs. Gold emotions are
/// used only for scoring.
pub fn evaluate_examples(model: &Model, examples: &[Example], max_steps: usize) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Domain("nothing to evaluate".into()));
    }
    let mut predicted = Vec::with_capacity(examples.len());
    let mut responses = Vec::with_capacity(examples.len());
    let mut samples = Vec::with_capacity(examples.len());
    for ex in examples {
        let dec = model.decode(&ex.context.graph, max_steps)?;
        let emo = argmax(&dec.emotion_probs);
        predicted.push(emo);
        let words = model.vocab.decode(&dec.tokens);
        samples.push(SampleOutput {
            id: ex.sample.id.clone(),
            gold_emotion: ex.sample.emotion.clone(),
            predicted_emotion: model.labels.name(emo).to_string(),
            reference: ex.sample.response.clone(),
            generated: words.join(" "),
        });
        responses.push(words);
    }
    let gold: Vec<usize> = examples.iter().map(|e| e.emotion).collect();
    let (d1, d2) = (distinct_n(&responses, 1), distinct_n(&responses, 2));
    Ok(EvalReport {
        accuracy: emotion_accuracy(&predicted, &gold)?,
        perplexity: perplexity(model, examples)?,
        distinct1: d1,
        distinct2: d2,
        distinct1_x100: d1 * 100.0,
        distinct2_x100: d2 * 100.0,
        n_samples: examples.len(),
        samples,
    })
}

pub fn evaluate(model: &Model, kb: &KnowledgeBase, samples: &[DialogueSample], max_steps: usize) -> Result<EvalReport> {
    let examples = prepare_examples(model, kb, samples)?;
    evaluate_examples(model, &examples, max_steps)
}

/// The evaluation split of a configuration: test, else valid, else train.
pub fn eval_samples(cfg: &TrainConfig, model: &Model) -> Result<Vec<DialogueSample>> {
    let path = cfg
        .data
        .test
        .as_deref()
        .or(cfg.data.valid.as_deref())
        .map_or_else(|| cfg.train_split(), Ok)?;
    load_corpus(path, &model.labels)
}

/// Trains on `cfg` without writing files and evaluates on its evaluation
/// split.
pub fn train_and_evaluate(cfg: &TrainConfig, max_steps: usize) -> Result<EvalReport> {
    let prepared = prepare_run(cfg)?;
    let outcome = train_loop(
        prepared.model,
        &prepared.train,
        &prepared.valid,
        &cfg.train,
        &mut |_| Ok(()),
    )?;
    let samples = eval_samples(cfg, &outcome.model)?;
    evaluate(&outcome.model, &prepared.kb, &samples, max_steps)
}

/// Emotion accuracy per per-dialogue concept cap, one training run each.
pub fn concept_sweep(cfg: &TrainConfig, caps: &[usize]) -> Result<Vec<(usize, f64)>> {
    let mut rows = Vec::with_capacity(caps.len());
    for &cap in caps {
        let mut c = cfg.clone();
        c.graph.per_dialogue_cap = cap;
        let report = train_and_evaluate(&c, DEFAULT_MAX_DECODE_STEPS)?;
        log::info!("cap {cap}: accuracy {}", report.accuracy);
        rows.push((cap, report.accuracy));
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("cap,accuracy\n");
    for (cap, acc) in rows {
        let _ = writeln!(out, "{cap},{acc}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoMkce,
    NoEcatm,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoMkce, Variant::NoEcatm];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMkce => "no_mkce",
            Variant::NoEcatm => "no_ecatm",
        }
    }

    /// `cfg` with the variant's model flags.
    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::NoMkce => {
                c.model.use_knowledge = false;
                c.model.use_graph_attention = false;
            }
            Variant::NoEcatm => c.model.use_ecatm = false,
        }
        c
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}; expected full, no_mkce or no_ecatm")))
    }
}

pub fn ablation_run(cfg: &TrainConfig, variant: Variant, max_steps: usize) -> Result<EvalReport> {
    train_and_evaluate(&variant.apply(cfg), max_steps)
}

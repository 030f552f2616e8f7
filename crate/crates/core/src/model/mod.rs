//! The dialogue model: encoder, decoder, losses and greedy decoding, plus a
//! bundle of everything needed to run it on raw histories.

mod config;
mod decoder;
mod encoder;
mod init;
mod layers;

pub use config::{from_kv, to_kv, ModelConfig};
pub use decoder::{decoder_forward, generate_distribution, OutputVars};
pub use encoder::{
    distill_emotion, embed_nodes, encode, encode_global, graph_attention, neighbourhood_mask, EncodedContext,
    EncodedVars,
};
pub use init::{init_params, param_specs, Init, ParamSpec};

use crate::corpus::{EmotionLabels, Vocab, EOS};
use crate::error::{Error, Result};
use crate::graph::{prepare_context, EmotionalContextGraph, GraphConfig, PreparedContext};
use crate::knowledge::{EmbeddingTable, KnowledgeBase};
use crate::numerics::{ParamStore, Session, Tensor, Var};

pub const DEFAULT_MAX_DECODE_STEPS: usize = 30;

/// One training example for the loss: a graph, its gold emotion id and the
/// target ids ending in EOS.
#[derive(Debug, Clone, Copy)]
pub struct LossItem<'a> {
    pub graph: &'a EmotionalContextGraph,
    pub emotion: usize,
    pub targets: &'a [usize],
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    /// Mean emotion negative log-likelihood over samples.
    pub emotion: Var,
    /// Mean token negative log-likelihood over all target tokens.
    pub generation: Var,
    pub tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub emotion: f64,
    pub generation: f64,
    pub tokens: usize,
}

impl LossVars {
    pub fn values(&self, s: &Session<'_>) -> LossValues {
        let v = |x: Var| s.tape.value(x).item();
        LossValues {
            total: v(self.total),
            emotion: v(self.emotion),
            generation: v(self.generation),
            tokens: self.tokens,
        }
    }
}

/// Per-sample emotion NLL and summed token NLL under teacher forcing.
pub fn sample_loss(s: &mut Session<'_>, cfg: &ModelConfig, item: &LossItem<'_>) -> Result<(Var, Var)> {
    if item.targets.is_empty() {
        return Err(Error::Domain("empty target sequence".into()));
    }
    if item.emotion >= cfg.num_emotions {
        return Err(Error::Index(format!(
            "emotion id {} of {}",
            item.emotion, cfg.num_emotions
        )));
    }
    let enc = encode(s, cfg, item.graph)?;
    let emo = s.tape.cross_entropy(enc.logits, &[item.emotion])?;
    let prefix = &item.targets[..item.targets.len() - 1];
    let states = decoder_forward(s, cfg, prefix, &enc)?;
    let out = generate_distribution(s, cfg, states, &enc, item.graph)?;
    let gen = s.tape.nll_sum(out.probs, item.targets)?;
    Ok((emo, gen))
}

/// Joint loss `γ1·L_emo + γ2·L_gen` over a batch.
pub fn compute_loss(s: &mut Session<'_>, cfg: &ModelConfig, items: &[LossItem<'_>]) -> Result<LossVars> {
    if items.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let mut emo_sum: Option<Var> = None;
    let mut gen_sum: Option<Var> = None;
    let mut tokens = 0;
    for item in items {
        let (e, g) = sample_loss(s, cfg, item)?;
        emo_sum = Some(match emo_sum {
            Some(acc) => s.tape.add(acc, e)?,
            None => e,
        });
        gen_sum = Some(match gen_sum {
            Some(acc) => s.tape.add(acc, g)?,
            None => g,
        });
        tokens += item.targets.len();
    }
    let emotion = s.tape.scale(emo_sum.expect("non-empty"), 1.0 / items.len() as f64);
    let generation = s.tape.scale(gen_sum.expect("non-empty"), 1.0 / tokens as f64);
    let a = s.tape.scale(emotion, cfg.gamma_emo);
    let b = s.tape.scale(generation, cfg.gamma_gen);
    let total = s.tape.add(a, b)?;
    Ok(LossVars {
        total,
        emotion,
        generation,
        tokens,
    })
}

/// Result of greedy decoding. Per-step vectors cover emitted tokens only.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub emotion_probs: Vec<f64>,
    /// `(1 - p_g)` times the scattered copy probability of each emitted token.
    pub copy_weights: Vec<f64>,
    /// Node-level copy attention for each emitted token.
    pub copy_attention: Vec<Vec<f64>>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding until EOS or `max_steps` tokens. EOS is not returned.
pub fn greedy_decode(
    params: &ParamStore,
    cfg: &ModelConfig,
    graph: &EmotionalContextGraph,
    max_steps: usize,
) -> Result<Decoded> {
    let mut s = Session::new(params, false);
    let enc = encode(&mut s, cfg, graph)?;
    let mut out = Decoded {
        tokens: Vec::new(),
        emotion_probs: s.tape.value(enc.probs).data().to_vec(),
        copy_weights: Vec::new(),
        copy_attention: Vec::new(),
    };
    let max_steps = max_steps.min(cfg.max_positions - 1);
    while out.tokens.len() < max_steps {
        let states = decoder_forward(&mut s, cfg, &out.tokens, &enc)?;
        let last = s.tape.slice_rows(states, out.tokens.len(), 1)?;
        let dist = generate_distribution(&mut s, cfg, last, &enc, graph)?;
        let probs = s.tape.value(dist.probs).data();
        let next = argmax(probs);
        if next == EOS {
            break;
        }
        let keep = 1.0 - s.tape.value(dist.gate).item();
        out.copy_weights.push(keep * s.tape.value(dist.copy_vocab).data()[next]);
        out.copy_attention.push(s.tape.value(dist.copy_nodes).data().to_vec());
        out.tokens.push(next);
    }
    Ok(out)
}

/// Configuration, vocabulary, labels and parameters of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub graph_config: GraphConfig,
    pub vocab: Vocab,
    pub labels: EmotionLabels,
    pub params: ParamStore,
}

impl Model {
    /// Freshly initialized model; `vocab_size` and `num_emotions` are taken
    /// from `vocab` and `labels`.
    pub fn new(
        mut config: ModelConfig,
        graph_config: GraphConfig,
        vocab: Vocab,
        labels: EmotionLabels,
        seed: u64,
        embeddings: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.num_emotions = labels.len();
        let params = init_params(&config, seed, Some(&vocab), embeddings)?;
        Ok(Model {
            config,
            graph_config,
            vocab,
            labels,
            params,
        })
    }

    /// Graph settings with the model's knowledge flag and table limits
    /// applied.
    pub fn effective_graph_config(&self) -> GraphConfig {
        let mut g = self.graph_config.clone();
        g.use_knowledge &= self.config.use_knowledge;
        let mu = self.config.max_utterances;
        g.max_utterances = Some(g.max_utterances.map_or(mu, |x| x.min(mu)));
        let mt = self.config.max_positions - 1;
        g.max_tokens = Some(g.max_tokens.map_or(mt, |x| x.min(mt)));
        g
    }

    pub fn prepare(&self, history: &[String], kb: &KnowledgeBase) -> Result<PreparedContext> {
        prepare_context(history, kb, &self.effective_graph_config(), &self.vocab)
    }

    pub fn encode(&self, graph: &EmotionalContextGraph) -> Result<EncodedContext> {
        let mut s = Session::new(&self.params, false);
        let vars = encode(&mut s, &self.config, graph)?;
        Ok(EncodedContext::snapshot(&s, &vars, graph))
    }

    pub fn decode(&self, graph: &EmotionalContextGraph, max_steps: usize) -> Result<Decoded> {
        greedy_decode(&self.params, &self.config, graph, max_steps)
    }

    /// Target ids for a response: vocabulary ids truncated to fit the
    /// decoder, then EOS.
    pub fn targets(&self, response: &[String]) -> Vec<usize> {
        let mut ids = self.vocab.encode(response);
        ids.truncate(self.config.max_positions - 1);
        ids.push(EOS);
        ids
    }

    /// Loss values for items without recording gradients.
    pub fn loss(&self, items: &[LossItem<'_>]) -> Result<LossValues> {
        let mut s = Session::new(&self.params, false);
        let vars = compute_loss(&mut s, &self.config, items)?;
        Ok(vars.values(&s))
    }
}

/// Shape check of a parameter store against a configuration.
pub fn check_params(cfg: &ModelConfig, params: &ParamStore) -> Result<()> {
    let specs = param_specs(cfg);
    if specs.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter tensors, found {}",
            specs.len(),
            params.len()
        )));
    }
    for spec in specs {
        let t: &Tensor = params
            .by_name(&spec.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", spec.name)))?;
        if t.shape() != spec.shape {
            return Err(Error::Checkpoint(format!(
                "parameter {} has shape {:?}, config needs {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
    }
    Ok(())
}

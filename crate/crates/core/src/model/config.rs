use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub num_emotions: usize,
    pub vocab_size: usize,
    /// Rows of the position table, shared by graph nodes and decoder steps.
    pub max_positions: usize,
    /// Rows of the dialogue-state table, excluding the CLS row.
    pub max_utterances: usize,
    pub gamma_emo: f64,
    pub gamma_gen: f64,
    /// Knowledge enrichment when building graphs.
    pub use_knowledge: bool,
    /// Local graph attention before the global layers.
    pub use_graph_attention: bool,
    /// Emotion vector concatenated to cross-attention in the decoder.
    pub use_ecatm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 128,
            num_emotions: 32,
            vocab_size: 0,
            max_positions: 256,
            max_utterances: 16,
            gamma_emo: 1.0,
            gamma_gen: 1.0,
            use_knowledge: true,
            use_graph_attention: true,
            use_ecatm: true,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.ffn_dim == 0 || self.num_emotions == 0 || self.max_positions < 2 || self.max_utterances == 0 {
            return bad("ffn_dim, num_emotions and max_utterances must be positive, max_positions at least 2".into());
        }
        if self.vocab_size <= crate::corpus::CLS {
            return bad(format!(
                "vocab_size {} does not cover the reserved tokens",
                self.vocab_size
            ));
        }
        if !(self.gamma_emo >= 0.0 && self.gamma_gen >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }

    /// Dialogue-state row used by the CLS node.
    pub fn cls_state(&self) -> usize {
        self.max_utterances
    }
}

/// Flat `prefix.key=value` lines with JSON-encoded values.
pub fn to_kv<T: Serialize>(prefix: &str, value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Internal(e.to_string()))?;
    let serde_json::Value::Object(map) = v else {
        return Err(Error::Internal("key=value encoding needs a struct".into()));
    };
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(&format!("{prefix}.{k}={v}\n"));
    }
    Ok(out)
}

/// Reads back the lines written by [`to_kv`] for `prefix`, ignoring others.
pub fn from_kv<T: DeserializeOwned>(prefix: &str, text: &str) -> Result<T> {
    let mut map = serde_json::Map::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Checkpoint(format!("config line {} has no '='", n + 1)));
        };
        let Some(key) = key.strip_prefix(prefix).and_then(|k| k.strip_prefix('.')) else {
            continue;
        };
        let value =
            serde_json::from_str(value).map_err(|e| Error::Checkpoint(format!("config key {prefix}.{key}: {e}")))?;
        map.insert(key.to_string(), value);
    }
    serde_json::from_value(serde_json::Value::Object(map))
        .map_err(|e| Error::Checkpoint(format!("config section {prefix}: {e}")))
}

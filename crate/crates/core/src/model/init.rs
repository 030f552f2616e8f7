//! Parameter naming, shapes and initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocab;
use crate::error::Result;
use crate::knowledge::EmbeddingTable;
use crate::model::ModelConfig;
use crate::numerics::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in (-0.1, 0.1).
    Embedding,
    XavierUniform,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 2],
    pub init: Init,
}

fn spec(out: &mut Vec<ParamSpec>, name: String, rows: usize, cols: usize, init: Init) {
    out.push(ParamSpec {
        name,
        shape: [rows, cols],
        init,
    });
}

fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    for w in ["wq", "wk", "wv", "wo"] {
        spec(out, format!("{prefix}.{w}"), d, d, Init::XavierUniform);
    }
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    spec(out, format!("{prefix}.gain"), 1, d, Init::Ones);
    spec(out, format!("{prefix}.bias"), 1, d, Init::Zeros);
}

fn ffn_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, f: usize) {
    spec(out, format!("{prefix}.w1"), d, f, Init::XavierUniform);
    spec(out, format!("{prefix}.b1"), 1, f, Init::Zeros);
    spec(out, format!("{prefix}.w2"), f, d, Init::XavierUniform);
    spec(out, format!("{prefix}.b2"), 1, d, Init::Zeros);
}

/// Every learnable tensor of the configuration, in store order. Matrices act
/// on row vectors (`x W`).
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (d, f, q, v) = (cfg.d_model, cfg.ffn_dim, cfg.num_emotions, cfg.vocab_size);
    let dh = cfg.head_dim();
    let mut out = Vec::new();
    spec(&mut out, "emb.word".into(), v, d, Init::Embedding);
    spec(&mut out, "emb.position".into(), cfg.max_positions, d, Init::Embedding);
    spec(&mut out, "emb.state".into(), cfg.max_utterances + 1, d, Init::Embedding);
    if cfg.use_graph_attention {
        for n in 0..cfg.heads {
            for w in ["wq", "wk", "wv"] {
                spec(&mut out, format!("graph.h{n}.{w}"), dh, dh, Init::XavierUniform);
            }
        }
    }
    for l in 0..cfg.encoder_layers {
        attention_specs(&mut out, &format!("enc{l}.attn"), d);
        norm_specs(&mut out, &format!("enc{l}.norm1"), d);
        ffn_specs(&mut out, &format!("enc{l}.ffn"), d, f);
        norm_specs(&mut out, &format!("enc{l}.norm2"), d);
    }
    spec(&mut out, "emotion.w".into(), d, q, Init::XavierUniform);
    spec(&mut out, "emotion.b".into(), 1, q, Init::Zeros);
    spec(&mut out, "emotion.prefix".into(), q, d, Init::XavierUniform);
    let mix_in = if cfg.use_ecatm { 2 * d } else { d };
    for l in 0..cfg.decoder_layers {
        attention_specs(&mut out, &format!("dec{l}.self"), d);
        norm_specs(&mut out, &format!("dec{l}.norm1"), d);
        attention_specs(&mut out, &format!("dec{l}.cross"), d);
        spec(&mut out, format!("dec{l}.mix"), mix_in, d, Init::XavierUniform);
        norm_specs(&mut out, &format!("dec{l}.norm2"), d);
        ffn_specs(&mut out, &format!("dec{l}.ffn"), d, f);
        norm_specs(&mut out, &format!("dec{l}.norm3"), d);
    }
    spec(&mut out, "out.w".into(), d, v, Init::XavierUniform);
    spec(&mut out, "copy.gate.w".into(), d, 1, Init::XavierUniform);
    spec(&mut out, "copy.gate.b".into(), 1, 1, Init::Zeros);
    spec(&mut out, "copy.attn.node".into(), d, d, Init::XavierUniform);
    spec(&mut out, "copy.attn.state".into(), d, d, Init::XavierUniform);
    spec(&mut out, "copy.attn.b".into(), 1, d, Init::Zeros);
    spec(&mut out, "copy.attn.v".into(), 1, d, Init::XavierUniform);
    out
}

/// Fresh parameters. Word vectors are copied from `embeddings` for
/// vocabulary words it contains when its dimension equals `d_model`. Values
/// are rounded to `f32` so checkpoints reproduce them exactly.
pub fn init_params(
    cfg: &ModelConfig,
    seed: u64,
    vocab: Option<&Vocab>,
    embeddings: Option<&EmbeddingTable>,
) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for s in param_specs(cfg) {
        let [r, c] = s.shape;
        let data: Vec<f64> = match s.init {
            Init::Zeros => vec![0.0; r * c],
            Init::Ones => vec![1.0; r * c],
            Init::Embedding => (0..r * c).map(|_| rng.random_range(-0.1..0.1)).collect(),
            Init::XavierUniform => {
                let a = (6.0 / (r + c) as f64).sqrt();
                (0..r * c).map(|_| rng.random_range(-a..a)).collect()
            }
        };
        store.insert(s.name, Tensor::matrix(r, c, data)?)?;
    }
    if let (Some(vocab), Some(table)) = (vocab, embeddings) {
        if table.dimension() == cfg.d_model {
            let d = cfg.d_model;
            let word = store.by_name_mut("emb.word").expect("word table exists");
            let mut copied = 0;
            for (id, tok) in vocab.tokens().iter().enumerate().take(cfg.vocab_size) {
                if let Some(vec) = table.get(tok) {
                    word.data_mut()[id * d..(id + 1) * d].copy_from_slice(vec);
                    copied += 1;
                }
            }
            log::info!("initialized {copied} word vectors from pretrained embeddings");
        } else if !table.is_empty() {
            log::warn!(
                "pretrained embedding dimension {} differs from d_model {}; using random word vectors",
                table.dimension(),
                cfg.d_model
            );
        }
    }
    store.round_to_f32();
    Ok(store)
}

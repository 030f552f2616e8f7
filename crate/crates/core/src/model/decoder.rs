//! Response generator: emotion-prefixed transformer decoder with emotional
//! cross-attention and a copy mixture over graph nodes.

use crate::error::{Error, Result};
use crate::graph::EmotionalContextGraph;
use crate::model::encoder::EncodedVars;
use crate::model::layers::{causal_mask, ffn, layer_norm, linear, linear_bias, multi_head};
use crate::model::ModelConfig;
use crate::numerics::{Session, Var};

/// Decoder states `j x d` for a prefix of `j - 1` tokens. Row 0 is the
/// projected emotion logits and predicts the first response token.
pub fn decoder_forward(s: &mut Session<'_>, cfg: &ModelConfig, prefix: &[usize], enc: &EncodedVars) -> Result<Var> {
    if let Some(&bad) = prefix.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::Index(format!(
            "prefix token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let j = prefix.len() + 1;
    if j > cfg.max_positions {
        return Err(Error::Index(format!(
            "decoder length {j} exceeds {} positions",
            cfg.max_positions
        )));
    }
    let start = linear(s, enc.logits, "emotion.prefix")?;
    let mut x = if prefix.is_empty() {
        start
    } else {
        let table = s.param_named("emb.word")?;
        let toks = s.tape.embedding(table, prefix)?;
        s.tape.concat_rows(&[start, toks])?
    };
    let positions: Vec<usize> = (0..j).collect();
    let ptable = s.param_named("emb.position")?;
    let p = s.tape.embedding(ptable, &positions)?;
    x = s.tape.add(x, p)?;

    let mask = causal_mask(j);
    for l in 0..cfg.decoder_layers {
        let att = multi_head(s, &format!("dec{l}.self"), x, x, cfg.heads, Some(&mask))?;
        let r = s.tape.add(x, att)?;
        let y = layer_norm(s, r, &format!("dec{l}.norm1"))?;
        let cross = multi_head(s, &format!("dec{l}.cross"), y, enc.nodes, cfg.heads, None)?;
        let mixed_in = if cfg.use_ecatm {
            let ce = s.tape.repeat_rows(enc.context, j)?;
            s.tape.concat_cols(&[cross, ce])?
        } else {
            cross
        };
        let mixed = linear(s, mixed_in, &format!("dec{l}.mix"))?;
        let dsum = s.tape.add(y, mixed)?;
        let dhat = layer_norm(s, dsum, &format!("dec{l}.norm2"))?;
        let f = ffn(s, dhat, &format!("dec{l}.ffn"))?;
        let r = s.tape.add(dhat, f)?;
        x = layer_norm(s, r, &format!("dec{l}.norm3"))?;
    }
    Ok(x)
}

/// Per-step output distributions, one row per decoder state.
#[derive(Debug, Clone, Copy)]
pub struct OutputVars {
    /// Final mixture `p(y)`, `j x V`.
    pub probs: Var,
    /// Vocabulary softmax `α^g`, `j x V`.
    pub generate: Var,
    /// Generation gate `p_g`, `j x 1`.
    pub gate: Var,
    /// Copy attention over nodes, `j x m`.
    pub copy_nodes: Var,
    /// Copy attention summed into vocabulary ids, `j x V`.
    pub copy_vocab: Var,
}

pub fn generate_distribution(
    s: &mut Session<'_>,
    cfg: &ModelConfig,
    states: Var,
    enc: &EncodedVars,
    graph: &EmotionalContextGraph,
) -> Result<OutputVars> {
    let logits = linear(s, states, "out.w")?;
    let generate = s.tape.softmax(logits);
    let g = linear_bias(s, states, "copy.gate.w", "copy.gate.b")?;
    let gate = s.tape.sigmoid(g);

    let keys = linear(s, enc.nodes, "copy.attn.node")?;
    let queries = linear_bias(s, states, "copy.attn.state", "copy.attn.b")?;
    let v = s.param_named("copy.attn.v")?;
    let scores = s.tape.additive_scores(queries, keys, v)?;
    let copy_nodes = s.tape.softmax(scores);
    let copy_vocab = s.tape.scatter_cols(copy_nodes, &graph.vocab_ids(), cfg.vocab_size)?;

    let keep = s.tape.affine(gate, -1.0, 1.0);
    let c = s.tape.mul_col(copy_vocab, keep)?;
    let gpart = s.tape.mul_col(generate, gate)?;
    let probs = s.tape.add(c, gpart)?;
    Ok(OutputVars {
        probs,
        generate,
        gate,
        copy_nodes,
        copy_vocab,
    })
}

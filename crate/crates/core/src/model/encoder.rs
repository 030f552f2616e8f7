//! Context-graph encoder: node embeddings, local graph attention, global
//! transformer layers and the intensity-weighted emotion read-out.

use crate::error::{Error, Result};
use crate::graph::EmotionalContextGraph;
use crate::model::layers::{attend, ffn, layer_norm, linear, linear_bias, multi_head};
use crate::model::ModelConfig;
use crate::numerics::{Session, Tensor, Var};

/// Encoder outputs as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    /// Node representations, `m x d`.
    pub nodes: Var,
    /// Emotion context vector, `1 x d`.
    pub context: Var,
    /// Emotion logits, `1 x q`.
    pub logits: Var,
    /// Emotion distribution, `1 x q`.
    pub probs: Var,
}

/// Encoder outputs detached from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedContext {
    pub nodes: Tensor,
    pub context: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub intensities: Vec<f64>,
}

impl EncodedContext {
    pub fn snapshot(s: &Session<'_>, vars: &EncodedVars, graph: &EmotionalContextGraph) -> Self {
        let row = |v: Var| s.tape.value(v).data().to_vec();
        EncodedContext {
            nodes: s.tape.value(vars.nodes).clone(),
            context: row(vars.context),
            logits: row(vars.logits),
            probs: row(vars.probs),
            intensities: graph.intensities(),
        }
    }
}

/// Sum of word, dialogue-state and position embeddings for every node.
pub fn embed_nodes(s: &mut Session<'_>, cfg: &ModelConfig, graph: &EmotionalContextGraph) -> Result<Var> {
    let m = graph.len();
    let (mut words, mut states, mut positions) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
    for (i, n) in graph.nodes.iter().enumerate() {
        let fail = |what: &str, value: usize, limit: usize| {
            Err(Error::Index(format!(
                "node {i} ({:?}) has {what} {value}, table holds {limit}",
                n.surface
            )))
        };
        if n.vocab_id >= cfg.vocab_size {
            return fail("word id", n.vocab_id, cfg.vocab_size);
        }
        if n.position >= cfg.max_positions {
            return fail("position", n.position, cfg.max_positions);
        }
        let state = match n.utterance {
            Some(u) if u >= cfg.max_utterances => return fail("utterance", u, cfg.max_utterances),
            Some(u) => u,
            None => cfg.cls_state(),
        };
        words.push(n.vocab_id);
        states.push(state);
        positions.push(n.position);
    }
    let (tw, ts, tp) = (
        s.param_named("emb.word")?,
        s.param_named("emb.state")?,
        s.param_named("emb.position")?,
    );
    let w = s.tape.embedding(tw, &words)?;
    let st = s.tape.embedding(ts, &states)?;
    let p = s.tape.embedding(tp, &positions)?;
    let ws = s.tape.add(w, st)?;
    s.tape.add(ws, p)
}

/// Mask for attention restricted to in-neighbours: node `i` sees `j` only
/// when the graph has an edge `j -> i` (self-loops included).
pub fn neighbourhood_mask(graph: &EmotionalContextGraph) -> Result<Vec<bool>> {
    let m = graph.len();
    let mut mask = vec![true; m * m];
    for i in 0..m {
        let mut any = false;
        for j in 0..m {
            if graph.has_edge(j, i) {
                mask[i * m + j] = false;
                any = true;
            }
        }
        if !any {
            return Err(Error::Internal(format!("node {i} has an empty neighbourhood")));
        }
    }
    Ok(mask)
}

/// Residual multi-head attention over graph neighbourhoods. Head `n` works
/// on the `n`-th `d/H` slice of each node vector with unscaled dot-product
/// scores.
pub fn graph_attention(s: &mut Session<'_>, cfg: &ModelConfig, v: Var, graph: &EmotionalContextGraph) -> Result<Var> {
    if !cfg.use_graph_attention {
        return Ok(v);
    }
    let mask = neighbourhood_mask(graph)?;
    let dh = cfg.head_dim();
    let mut heads = Vec::with_capacity(cfg.heads);
    for n in 0..cfg.heads {
        let slice = s.tape.slice_cols(v, n * dh, dh)?;
        let q = linear(s, slice, &format!("graph.h{n}.wq"))?;
        let k = linear(s, slice, &format!("graph.h{n}.wk"))?;
        let val = linear(s, slice, &format!("graph.h{n}.wv"))?;
        heads.push(attend(s, q, k, val, 1.0, Some(&mask))?);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        s.tape.concat_cols(&heads)?
    };
    s.tape.add(v, cat)
}

/// `encoder_layers` post-norm transformer layers over all nodes.
pub fn encode_global(s: &mut Session<'_>, cfg: &ModelConfig, mut x: Var) -> Result<Var> {
    for l in 0..cfg.encoder_layers {
        let att = multi_head(s, &format!("enc{l}.attn"), x, x, cfg.heads, None)?;
        let r = s.tape.add(x, att)?;
        let h = layer_norm(s, r, &format!("enc{l}.norm1"))?;
        let f = ffn(s, h, &format!("enc{l}.ffn"))?;
        let r = s.tape.add(h, f)?;
        x = layer_norm(s, r, &format!("enc{l}.norm2"))?;
    }
    Ok(x)
}

/// Softmax-of-intensity weighted node sum, then the emotion classifier.
/// Returns `(context, logits, probs)`.
pub fn distill_emotion(s: &mut Session<'_>, nodes: Var, intensities: &[f64]) -> Result<(Var, Var, Var)> {
    let m = s.tape.shape(nodes).0;
    if intensities.len() != m {
        return Err(Error::Dimension {
            op: "distill_emotion",
            detail: format!("{} intensities for {m} nodes", intensities.len()),
        });
    }
    let eta = s.tape.constant(Tensor::row(intensities.to_vec()));
    let weights = s.tape.softmax(eta);
    let context = s.tape.matmul(weights, nodes)?;
    let logits = linear_bias(s, context, "emotion.w", "emotion.b")?;
    let probs = s.tape.softmax(logits);
    Ok((context, logits, probs))
}

/// The whole encoder for one graph.
pub fn encode(s: &mut Session<'_>, cfg: &ModelConfig, graph: &EmotionalContextGraph) -> Result<EncodedVars> {
    let v = embed_nodes(s, cfg, graph)?;
    let v = graph_attention(s, cfg, v, graph)?;
    let nodes = encode_global(s, cfg, v)?;
    let (context, logits, probs) = distill_emotion(s, nodes, &graph.intensities())?;
    Ok(EncodedVars {
        nodes,
        context,
        logits,
        probs,
    })
}

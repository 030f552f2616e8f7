//! Emotion-enriched dialogue context graphs.
//!
//! A graph holds one CLS node, the flattened history tokens and the concepts
//! retrieved for them. Edges are directed: `A[i][j] == 1` means `i -> j`.
//! Attention at node `i` reads from its in-neighbours, so a token sees its
//! concepts and the CLS node sees everything.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, Vocab, CLS, UNK};
use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeBase, RankedConcept};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Cls,
    Token,
    Concept,
}

impl NodeKind {
    fn label(self) -> &'static str {
        match self {
            NodeKind::Cls => "CLS",
            NodeKind::Token => "TOKEN",
            NodeKind::Concept => "CONCEPT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Sequence,
    Emotion,
    Globality,
    SelfLoop,
}

impl EdgeKind {
    fn label(self) -> &'static str {
        match self {
            EdgeKind::Sequence => "sequence",
            EdgeKind::Emotion => "emotion",
            EdgeKind::Globality => "globality",
            EdgeKind::SelfLoop => "self",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub kind: NodeKind,
    pub surface: String,
    pub vocab_id: usize,
    /// `None` for the CLS node.
    pub utterance: Option<usize>,
    pub position: usize,
    pub intensity: f64,
    /// Node index of the anchor token, for concepts.
    pub anchor: Option<usize>,
}

/// A history token tagged with its utterance and global position (from 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub surface: String,
    pub utterance: usize,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionalContextGraph {
    pub nodes: Vec<GraphNode>,
    adjacency: Vec<u8>,
    edges: BTreeMap<(usize, usize), EdgeKind>,
}

impl EmotionalContextGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adjacency[from * self.nodes.len() + to] == 1
    }

    /// Row-major `m x m` 0/1 matrix.
    pub fn adjacency(&self) -> &[u8] {
        &self.adjacency
    }

    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), EdgeKind)> + '_ {
        self.edges.iter().map(|(&k, &v)| (k, v))
    }

    pub fn edge_kind(&self, from: usize, to: usize) -> Option<EdgeKind> {
        self.edges.get(&(from, to)).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Nodes `j` with an edge `j -> i`, self included.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&j| self.has_edge(j, i)).collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        (0..self.nodes.len()).filter(|&j| self.has_edge(j, i)).count()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        (0..self.nodes.len()).filter(|&j| self.has_edge(i, j)).count()
    }

    pub fn token_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Token).count()
    }

    pub fn concept_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Concept).count()
    }

    pub fn vocab_ids(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.vocab_id).collect()
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.intensity).collect()
    }

    /// Graphviz rendering with nodes labelled `kind:surface:intensity`.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph context {\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let label = format!("{}:{}:{:.4}", n.kind.label(), n.surface, n.intensity);
            let _ = writeln!(out, "  n{i} [label=\"{}\"];", label.replace('"', "\\\""));
        }
        for ((from, to), kind) in self.edges() {
            let _ = writeln!(out, "  n{from} -> n{to} [label=\"{}\"];", kind.label());
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub per_token_cap: usize,
    pub per_dialogue_cap: usize,
    pub alpha: f64,
    /// Candidate tuples considered per token before ranking; `None` means all.
    pub candidate_limit: Option<usize>,
    /// When false no concepts are retrieved at all.
    pub use_knowledge: bool,
    /// Keep only the most recent utterances / tokens.
    pub max_utterances: Option<usize>,
    pub max_tokens: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            per_token_cap: 5,
            per_dialogue_cap: 10,
            alpha: 0.1,
            candidate_limit: None,
            use_knowledge: true,
            max_utterances: None,
            max_tokens: None,
        }
    }
}

/// Concatenates tokenized utterances, tagging each token with its utterance
/// index and its global position starting at 1.
pub fn flatten_history(history: &[String]) -> Vec<TaggedToken> {
    let mut out = Vec::new();
    for (u, utt) in history.iter().enumerate() {
        for surface in corpus::tokenize(utt) {
            out.push(TaggedToken {
                surface,
                utterance: u,
                position: out.len() + 1,
            });
        }
    }
    out
}

/// Retrieves concepts for every eligible token, keeping at most
/// `per_token_cap` per token and `per_dialogue_cap` overall. The dialogue cap
/// admits concepts by descending score, then earlier position, then
/// lexicographic concept. The result is keyed by token position.
pub fn enrich(
    tokens: &[TaggedToken],
    kb: &KnowledgeBase,
    cfg: &GraphConfig,
    vocab: Option<&Vocab>,
) -> BTreeMap<usize, Vec<RankedConcept>> {
    let mut pool: Vec<(usize, usize, RankedConcept)> = Vec::new();
    if !cfg.use_knowledge || cfg.per_dialogue_cap == 0 || cfg.per_token_cap == 0 {
        return BTreeMap::new();
    }
    for tok in tokens {
        if kb.stopwords.contains(&tok.surface) {
            continue;
        }
        if vocab.is_some_and(|v| v.id(&tok.surface) == UNK) {
            continue;
        }
        let ranked = kb.concepts_for(&tok.surface, cfg.alpha, cfg.candidate_limit, cfg.per_token_cap);
        pool.extend(ranked.into_iter().enumerate().map(|(rank, c)| (tok.position, rank, c)));
    }
    pool.sort_by(|a, b| {
        b.2.score
            .total_cmp(&a.2.score)
            .then(a.0.cmp(&b.0))
            .then_with(|| a.2.concept.cmp(&b.2.concept))
            .then(a.1.cmp(&b.1))
    });
    pool.truncate(cfg.per_dialogue_cap);
    // Restore per-token rank order inside each anchor.
    pool.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: BTreeMap<usize, Vec<RankedConcept>> = BTreeMap::new();
    for (pos, _, c) in pool {
        out.entry(pos).or_default().push(c);
    }
    out
}

struct EdgeSet {
    m: usize,
    adjacency: Vec<u8>,
    edges: BTreeMap<(usize, usize), EdgeKind>,
}

impl EdgeSet {
    fn add(&mut self, from: usize, to: usize, kind: EdgeKind) {
        self.adjacency[from * self.m + to] = 1;
        self.edges.insert((from, to), kind);
    }
}

/// Assembles nodes (CLS, tokens, then concepts grouped by anchor) and the
/// sequence, emotion, globality and self-loop edges.
pub fn build_graph(
    tokens: &[TaggedToken],
    concepts: &BTreeMap<usize, Vec<RankedConcept>>,
    vocab: &Vocab,
    kb: &KnowledgeBase,
) -> Result<EmotionalContextGraph> {
    if tokens.is_empty() {
        return Err(Error::Domain("cannot build a graph without tokens".into()));
    }
    let mut nodes = Vec::with_capacity(1 + tokens.len());
    nodes.push(GraphNode {
        kind: NodeKind::Cls,
        surface: corpus::RESERVED[CLS].to_string(),
        vocab_id: CLS,
        utterance: None,
        position: 0,
        intensity: kb.intensity(corpus::RESERVED[CLS]),
        anchor: None,
    });
    let mut node_of_position = BTreeMap::new();
    for tok in tokens {
        node_of_position.insert(tok.position, nodes.len());
        nodes.push(GraphNode {
            kind: NodeKind::Token,
            surface: tok.surface.clone(),
            vocab_id: vocab.id(&tok.surface),
            utterance: Some(tok.utterance),
            position: tok.position,
            intensity: kb.intensity(&tok.surface),
            anchor: None,
        });
    }
    for (pos, list) in concepts {
        let Some(&anchor) = node_of_position.get(pos) else {
            return Err(Error::Index(format!("concept anchored at unknown position {pos}")));
        };
        for c in list {
            let (utterance, position) = (nodes[anchor].utterance, nodes[anchor].position);
            nodes.push(GraphNode {
                kind: NodeKind::Concept,
                surface: c.concept.clone(),
                vocab_id: vocab.id(&c.concept),
                utterance,
                position,
                intensity: kb.intensity(&c.concept),
                anchor: Some(anchor),
            });
        }
    }

    let m = nodes.len();
    let mut set = EdgeSet {
        m,
        adjacency: vec![0; m * m],
        edges: BTreeMap::new(),
    };
    let token_nodes = 1..1 + tokens.len();
    for i in token_nodes.clone().skip(1) {
        set.add(i - 1, i, EdgeKind::Sequence);
    }
    for i in token_nodes {
        set.add(i, 0, EdgeKind::Globality);
        set.add(0, i, EdgeKind::Globality);
    }
    for (i, n) in nodes.iter().enumerate() {
        if let Some(anchor) = n.anchor {
            set.add(i, anchor, EdgeKind::Emotion);
            set.add(i, 0, EdgeKind::Globality);
        }
    }
    for i in 0..m {
        set.add(i, i, EdgeKind::SelfLoop);
    }
    Ok(EmotionalContextGraph {
        nodes,
        adjacency: set.adjacency,
        edges: set.edges,
    })
}

/// The graph for one history plus the concepts that went into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedContext {
    pub tokens: Vec<TaggedToken>,
    pub concepts: BTreeMap<usize, Vec<RankedConcept>>,
    pub graph: EmotionalContextGraph,
}

/// Flattens, truncates, enriches and builds the graph for `history`.
pub fn prepare_context(
    history: &[String],
    kb: &KnowledgeBase,
    cfg: &GraphConfig,
    vocab: &Vocab,
) -> Result<PreparedContext> {
    let tokens = truncated_tokens(history, cfg);
    let concepts = enrich(&tokens, kb, cfg, Some(vocab));
    let graph = build_graph(&tokens, &concepts, vocab, kb)?;
    Ok(PreparedContext {
        tokens,
        concepts,
        graph,
    })
}

/// `flatten_history` restricted to the configured most recent window, with
/// utterance indices and positions renumbered from the window start.
pub fn truncated_tokens(history: &[String], cfg: &GraphConfig) -> Vec<TaggedToken> {
    let start = cfg.max_utterances.map_or(0, |mu| history.len().saturating_sub(mu));
    let mut tokens = flatten_history(&history[start..]);
    if let Some(max) = cfg.max_tokens {
        if tokens.len() > max {
            tokens.drain(..tokens.len() - max);
            for (i, t) in tokens.iter_mut().enumerate() {
                t.position = i + 1;
            }
        }
    }
    tokens
}

//! Slow, direct re-implementations used as test oracles.

use std::collections::{BTreeMap, HashSet};

use mkedg::graph::{EdgeKind, EmotionalContextGraph, GraphConfig, NodeKind};
use mkedg::knowledge::{
    EmbeddingTable, ExcludedRelations, KnowledgeBase, KnowledgeTuple, TupleStore, VadEntry, VadLexicon,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POOL: [&str; 12] = [
    "sun", "rain", "party", "gift", "storm", "cake", "dog", "exam", "music", "trip", "fear", "smile",
];
pub const RELATIONS: [&str; 6] = ["RelatedTo", "IsA", "Synonym", "Antonym", "NotDesires", "CapableOf"];

pub struct RandomKnowledge {
    pub tuples: Vec<KnowledgeTuple>,
    pub lexicon: VadLexicon,
    pub embeddings: EmbeddingTable,
}

impl RandomKnowledge {
    pub fn store(&self) -> TupleStore {
        TupleStore::from_tuples(self.tuples.clone())
    }
}

/// Up to `max_tuples` tuples over a small word pool. Weights are coarse so
/// confidences tie often; lexicon values and vectors are continuous so equal
/// scores only arise from equal tails.
pub fn random_knowledge(rng: &mut impl Rng, max_tuples: usize) -> RandomKnowledge {
    let n = rng.random_range(0..=max_tuples);
    let tuples = (0..n)
        .map(|_| {
            let raw = 1.0 + 0.5 * rng.random_range(0..19) as f64;
            KnowledgeTuple::new(
                *POOL.choose(rng).unwrap(),
                *RELATIONS.choose(rng).unwrap(),
                *POOL.choose(rng).unwrap(),
                raw,
            )
            .unwrap()
        })
        .collect();
    let mut lexicon = VadLexicon::default();
    let mut embeddings = EmbeddingTable::new(3);
    for w in POOL {
        if rng.random_bool(0.7) {
            lexicon.insert(
                w,
                VadEntry {
                    valence: rng.random(),
                    arousal: rng.random(),
                    dominance: 0.5,
                },
            );
        }
        if rng.random_bool(0.7) {
            let v = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            embeddings.insert(w, v).unwrap();
        }
    }
    RandomKnowledge {
        tuples,
        lexicon,
        embeddings,
    }
}

pub fn intensity(word: &str, lexicon: &VadLexicon) -> f64 {
    let (v, a) = lexicon.get(word).map_or((0.5, 0.5), |e| (e.valence, e.arousal));
    ((v - 0.5).powi(2) + (a / 2.0).powi(2)).sqrt() * 2f64.sqrt()
}

pub fn cosine(a: &str, b: &str, emb: &EmbeddingTable) -> f64 {
    let (Some(x), Some(y)) = (emb.get(a), emb.get(b)) else {
        return 0.0;
    };
    let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
    let norm = |z: &[f64]| z.iter().map(|p| p * p).sum::<f64>().sqrt();
    if norm(x) == 0.0 || norm(y) == 0.0 {
        0.0
    } else {
        dot / (norm(x) * norm(y))
    }
}

/// Score every tuple of the store, filter by head, relation and threshold,
/// sort and truncate. Returns `(concept, relation, score)`.
pub fn brute_force_rank(
    token: &str,
    k: &RandomKnowledge,
    excluded: &ExcludedRelations,
    alpha: f64,
    k_prime: usize,
) -> Vec<(String, String, f64)> {
    let mut scored: Vec<(f64, f64, String, String)> = k
        .tuples
        .iter()
        .map(|t| {
            let conf = (t.raw_confidence - 1.0) / 9.0;
            let s = intensity(&t.tail, &k.lexicon) + cosine(token, &t.tail, &k.embeddings) + conf;
            (s, conf, t)
        })
        .filter(|(_, conf, t)| t.head == token && *conf > alpha && !excluded.contains(&t.relation))
        .map(|(s, conf, t)| (s, conf, t.tail.clone(), t.relation.clone()))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(b.1.partial_cmp(&a.1).unwrap())
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    scored.into_iter().take(k_prime).map(|(s, _, c, r)| (c, r, s)).collect()
}

/// Edges enumerated from node kinds and anchors alone.
pub fn expected_edges(g: &EmotionalContextGraph) -> BTreeMap<(usize, usize), EdgeKind> {
    let mut e = BTreeMap::new();
    let tokens: Vec<usize> = (0..g.len()).filter(|&i| g.nodes[i].kind == NodeKind::Token).collect();
    for w in tokens.windows(2) {
        e.insert((w[0], w[1]), EdgeKind::Sequence);
    }
    for &t in &tokens {
        e.insert((t, 0), EdgeKind::Globality);
        e.insert((0, t), EdgeKind::Globality);
    }
    for (i, n) in g.nodes.iter().enumerate() {
        if n.kind == NodeKind::Concept {
            e.insert((i, n.anchor.unwrap()), EdgeKind::Emotion);
            e.insert((i, 0), EdgeKind::Globality);
        }
        e.insert((i, i), EdgeKind::SelfLoop);
    }
    e
}

pub fn distinct_brute(responses: &[Vec<String>], n: usize) -> f64 {
    let mut all = Vec::new();
    for r in responses {
        let mut i = 0;
        while i + n <= r.len() {
            all.push(r[i..i + n].join("\u{1}"));
            i += 1;
        }
    }
    if all.is_empty() {
        return 0.0;
    }
    let unique: HashSet<&String> = all.iter().collect();
    unique.len() as f64 / all.len() as f64
}

/// A random history over the word pool with random knowledge and caps.
pub fn random_dialogue(seed: u64) -> (Vec<String>, KnowledgeBase, GraphConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = random_knowledge(&mut rng, 50);
    let kb = KnowledgeBase {
        tuples: k.store(),
        lexicon: k.lexicon,
        embeddings: k.embeddings,
        excluded: ExcludedRelations::default(),
        stopwords: ["the".to_string()].into(),
    };
    let mut words: Vec<&str> = POOL.to_vec();
    words.push("the");
    let history = (0..rng.random_range(1..4))
        .map(|_| {
            (0..rng.random_range(1..7))
                .map(|_| *words.choose(&mut rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let cfg = GraphConfig {
        per_token_cap: rng.random_range(0..4),
        per_dialogue_cap: rng.random_range(0..12),
        alpha: rng.random_range(0.0..0.5),
        ..Default::default()
    };
    (history, kb, cfg)
}

/// Node counts, the edge-count identity, per-kind edge sets against the
/// enumeration above, and concept degrees.
pub fn check_schema(g: &EmotionalContextGraph, t: usize, c: usize) {
    assert_eq!(g.token_count(), t);
    assert_eq!(g.concept_count(), c);
    assert_eq!(g.len(), 1 + t + c);
    let identity = (t - 1) + c + (t + c + t) + (1 + t + c);
    assert_eq!(g.edge_count(), identity);
    let got: std::collections::BTreeMap<_, _> = g.edges().collect();
    assert_eq!(got, expected_edges(g));
    let ones = g.adjacency().iter().filter(|&&x| x == 1).count();
    assert_eq!(ones, identity);
    for (i, n) in g.nodes.iter().enumerate() {
        if n.kind == NodeKind::Concept {
            assert_eq!(g.in_degree(i), 1);
            assert_eq!(g.in_neighbors(i), vec![i]);
            assert_eq!(g.out_degree(i), 3);
            let a = n.anchor.unwrap();
            assert!(g.has_edge(i, a) && g.has_edge(i, 0));
            assert_eq!(g.nodes[a].kind, NodeKind::Token);
            assert_eq!((n.utterance, n.position), (g.nodes[a].utterance, g.nodes[a].position));
        }
    }
}

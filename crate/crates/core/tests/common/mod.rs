#![allow(dead_code)]

pub mod oracles;
use mkedg::corpus::{EmotionLabels, Vocab};
use mkedg::graph::{prepare_context, EmotionalContextGraph, GraphConfig};
use mkedg::knowledge::{EmbeddingTable, ExcludedRelations, KnowledgeBase, TupleStore, VadLexicon};
use mkedg::model::{init_params, ModelConfig};
use mkedg::numerics::ParamStore;

pub const LEXICON: &str = "\
happy\t0.9\t0.8\t0.6
sad\t0.1\t0.6\t0.3
lottery\t0.8\t0.9\t0.5
joy\t0.95\t0.85\t0.7
glad\t0.85\t0.5\t0.6
money\t0.7\t0.6\t0.8
win\t0.9\t0.9\t0.9
";

pub const TUPLES: &str = "\
happy\tRelatedTo\tjoy\t5.0
happy\tSynonym\tglad\t4.0
lottery\tRelatedTo\tmoney\t6.0
lottery\tRelatedTo\twin\t3.0
won\tRelatedTo\twin\t2.0
";

pub const WORDS: [&str; 15] = [
    "i", "won", "the", "lottery", "feel", "happy", "joy", "glad", "money", "win", "that", "is", "great", "!", "sad",
];

pub fn kb() -> KnowledgeBase {
    KnowledgeBase {
        lexicon: VadLexicon::parse(LEXICON, "lexicon").unwrap(),
        tuples: TupleStore::parse(TUPLES, "tuples").unwrap(),
        embeddings: EmbeddingTable::new(4),
        excluded: ExcludedRelations::default(),
        stopwords: ["the", "i"].iter().map(|s| s.to_string()).collect(),
    }
}

pub fn vocab() -> Vocab {
    Vocab::from_tokens(WORDS)
}

pub fn labels() -> EmotionLabels {
    EmotionLabels::new(["joyful", "sad", "surprised"]).unwrap()
}

/// d=8, H=2, one layer each side, three emotions, twenty words.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_dim: 16,
        num_emotions: 3,
        vocab_size: vocab().len(),
        max_positions: 12,
        max_utterances: 3,
        ..Default::default()
    }
}

pub fn graph_config() -> GraphConfig {
    GraphConfig {
        per_token_cap: 1,
        per_dialogue_cap: 3,
        ..Default::default()
    }
}

pub fn graph_for(history: &[&str], cfg: &GraphConfig) -> EmotionalContextGraph {
    let history: Vec<String> = history.iter().map(|s| s.to_string()).collect();
    prepare_context(&history, &kb(), cfg, &vocab()).unwrap().graph
}

/// Two utterances, three concepts, nine nodes.
pub fn sample_graph() -> EmotionalContextGraph {
    graph_for(&["i won the lottery", "happy"], &graph_config())
}

pub fn params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    init_params(cfg, seed, None, None).unwrap()
}

pub fn targets(words: &[&str]) -> Vec<usize> {
    let v = vocab();
    let mut ids: Vec<usize> = words.iter().map(|w| v.id(w)).collect();
    ids.push(mkedg::corpus::EOS);
    ids
}

/// Writes a toy corpus into `dir` and returns a small configuration that
/// trains on it, validating on the training split.
pub fn toy_config(dir: &std::path::Path, n_train: usize, epochs: usize) -> mkedg::training::TrainConfig {
    use mkedg::pipeline::KnowledgePaths;
    use mkedg::training::{DataPaths, TrainConfig, TrainOptions};
    let d = 32;
    let toy = mkedg::toy::generate(7, n_train, 10, d);
    toy.write(dir).unwrap();
    let p = |n: &str| Some(dir.join(n));
    TrainConfig {
        train: TrainOptions {
            batch_size: 16,
            warmup: 100,
            max_epochs: epochs,
            patience: 1000,
            seed: 7,
            eval_every: 40,
            checkpoint: dir.join("model.bin"),
            log: Some(dir.join("log.csv")),
            ..Default::default()
        },
        data: DataPaths {
            train: p("train.jsonl"),
            valid: p("train.jsonl"),
            test: None,
            labels: Some(toy.labels.clone()),
        },
        knowledge: KnowledgePaths {
            vad: p("vad.tsv"),
            tuples: p("tuples.tsv"),
            embeddings: p("embeddings.txt"),
            stopwords: p("stopwords.txt"),
            relations: None,
        },
        graph: GraphConfig::default(),
        model: ModelConfig {
            d_model: d,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_dim: 2 * d,
            max_positions: 64,
            max_utterances: 4,
            ..Default::default()
        },
    }
}

//! Shared fixtures for the benchmarks: a trained-size toy model and its
//! prepared examples.

use mkedg::graph::GraphConfig;
use mkedg::knowledge::{EmbeddingTable, KnowledgeBase, TupleStore, VadLexicon};
use mkedg::model::{Model, ModelConfig};
use mkedg::pipeline::{build_model_vocab, prepare_examples, Example};
use mkedg::toy;

pub struct Fixture {
    pub model: Model,
    pub kb: KnowledgeBase,
    pub examples: Vec<Example>,
}

pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_dim: 64,
        max_positions: 64,
        max_utterances: 4,
        ..Default::default()
    }
}

/// The 50-dialogue toy corpus with its knowledge and a freshly initialized
/// model of the size used in the overfit run.
pub fn fixture(cfg: ModelConfig) -> Fixture {
    let data = toy::generate(7, 50, 10, cfg.d_model);
    let kb = KnowledgeBase {
        lexicon: VadLexicon::parse(&data.lexicon, "vad").expect("toy lexicon"),
        tuples: TupleStore::parse(&data.tuples, "tuples").expect("toy tuples"),
        embeddings: EmbeddingTable::parse(&data.embeddings, "embeddings").expect("toy vectors"),
        excluded: Default::default(),
        stopwords: toy::STOPWORDS.iter().map(|s| s.to_string()).collect(),
    };
    let graph = GraphConfig::default();
    let vocab = build_model_vocab(&data.train, &kb, &graph, 1, None).expect("vocab");
    let labels = mkedg::corpus::EmotionLabels::new(data.labels.iter().cloned()).expect("labels");
    let model = Model::new(cfg, graph, vocab, labels, 7, Some(&kb.embeddings)).expect("model");
    let examples = prepare_examples(&model, &kb, &data.train).expect("examples");
    Fixture { model, kb, examples }
}

//! From files and raw dialogues to model-ready examples.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, build_vocab, DialogueSample, EmotionLabels, Vocab};
use crate::error::{Error, Result};
use crate::graph::{enrich, truncated_tokens, GraphConfig, PreparedContext};
use crate::knowledge::{EmbeddingTable, ExcludedRelations, KnowledgeBase, TupleStore, VadLexicon};
use crate::model::Model;

/// Knowledge file locations; a missing entry means an empty resource.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnowledgePaths {
    pub vad: Option<PathBuf>,
    pub tuples: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// Excluded relation names; the built-in list when absent.
    pub relations: Option<PathBuf>,
}

impl KnowledgePaths {
    pub fn load(&self) -> Result<KnowledgeBase> {
        let mut kb = KnowledgeBase::empty();
        if let Some(p) = &self.vad {
            kb.lexicon = VadLexicon::load(p)?;
            if kb.lexicon.duplicates() > 0 {
                log::warn!(
                    "{} duplicate lexicon entries in {}",
                    kb.lexicon.duplicates(),
                    p.display()
                );
            }
        }
        if let Some(p) = &self.tuples {
            kb.tuples = TupleStore::load(p)?;
        }
        if let Some(p) = &self.embeddings {
            kb.embeddings = EmbeddingTable::load(p)?;
        }
        if let Some(p) = &self.stopwords {
            kb.stopwords = corpus::load_stopwords(p)?;
        }
        kb.excluded = match &self.relations {
            Some(p) => ExcludedRelations::load(p)?,
            None => ExcludedRelations::default(),
        };
        Ok(kb)
    }
}

/// Vocabulary over training histories, responses and every concept the
/// enrichment step can attach to them.
pub fn build_model_vocab(
    samples: &[DialogueSample],
    kb: &KnowledgeBase,
    graph: &GraphConfig,
    min_count: usize,
    max_size: Option<usize>,
) -> Result<Vocab> {
    let mut concepts = Vec::new();
    for s in samples {
        let tokens = truncated_tokens(&s.history, graph);
        for list in enrich(&tokens, kb, graph, None).into_values() {
            concepts.extend(list.into_iter().map(|c| c.concept));
        }
    }
    build_vocab(samples, concepts.iter().map(String::as_str), min_count, max_size)
}

/// A dialogue with its graph, gold emotion id and target ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sample: DialogueSample,
    pub context: PreparedContext,
    pub emotion: usize,
    pub targets: Vec<usize>,
}

pub fn prepare_example(model: &Model, kb: &KnowledgeBase, sample: &DialogueSample) -> Result<Example> {
    let emotion = emotion_id(&model.labels, &sample.emotion)?;
    let context = model.prepare(&sample.history, kb)?;
    let targets = model.targets(&corpus::tokenize(&sample.response));
    Ok(Example {
        sample: sample.clone(),
        context,
        emotion,
        targets,
    })
}

pub fn prepare_examples(model: &Model, kb: &KnowledgeBase, samples: &[DialogueSample]) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            prepare_example(model, kb, s).map_err(|e| match e {
                Error::Domain(m) => Error::Domain(format!("sample {}: {m}", s.id)),
                other => other,
            })
        })
        .collect()
}

fn emotion_id(labels: &EmotionLabels, name: &str) -> Result<usize> {
    labels
        .id(name)
        .ok_or_else(|| Error::Domain(format!("unknown emotion label {name:?}")))
}

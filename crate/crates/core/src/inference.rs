//! One-shot response generation with the data the chat service displays.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::argmax;
use crate::knowledge::KnowledgeBase;
use crate::model::Model;

pub const MAX_UTTERANCE_CHARS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub history: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptInfo {
    pub token: String,
    pub concept: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopiedToken {
    pub position: usize,
    pub surface: String,
    pub copy_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub response: String,
    pub emotion: String,
    pub emotion_distribution: BTreeMap<String, f64>,
    pub concepts: Vec<ConceptInfo>,
    /// Every response token with the probability mass it received from
    /// copying.
    pub copied_tokens: Vec<CopiedToken>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HistoryError {
    Empty,
    TooLong { index: usize, chars: usize },
}

impl std::fmt::Display for HistoryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HistoryError::Empty => write!(f, "history must contain at least one non-blank utterance"),
            HistoryError::TooLong { index, chars } => write!(
                f,
                "utterance {index} has {chars} characters, the limit is {MAX_UTTERANCE_CHARS}"
            ),
        }
    }
}

impl std::error::Error for HistoryError {}

pub fn validate_history(history: &[String]) -> std::result::Result<(), HistoryError> {
    if let Some((index, u)) = history
        .iter()
        .enumerate()
        .find(|(_, u)| u.chars().count() > MAX_UTTERANCE_CHARS)
    {
        return Err(HistoryError::TooLong {
            index,
            chars: u.chars().count(),
        });
    }
    if history.iter().all(|u| crate::corpus::tokenize(u).is_empty()) {
        return Err(HistoryError::Empty);
    }
    Ok(())
}

/// Builds the graph for `history`, predicts its emotion and greedily decodes
/// a response.
pub fn respond(model: &Model, kb: &KnowledgeBase, history: &[String], max_steps: usize) -> Result<ChatResponse> {
    let prepared = model.prepare(history, kb)?;
    let decoded = model.decode(&prepared.graph, max_steps)?;
    let words = model.vocab.decode(&decoded.tokens);
    let emotion = model.labels.name(argmax(&decoded.emotion_probs)).to_string();
    let emotion_distribution = model
        .labels
        .as_slice()
        .iter()
        .cloned()
        .zip(decoded.emotion_probs.iter().copied())
        .collect();
    let surface_at: BTreeMap<usize, &str> = prepared
        .tokens
        .iter()
        .map(|t| (t.position, t.surface.as_str()))
        .collect();
    let concepts = prepared
        .concepts
        .iter()
        .flat_map(|(pos, list)| {
            let token = surface_at.get(pos).copied().unwrap_or_default().to_string();
            list.iter().map(move |c| ConceptInfo {
                token: token.clone(),
                concept: c.concept.clone(),
                score: c.score,
            })
        })
        .collect();
    let copied_tokens = words
        .iter()
        .zip(&decoded.copy_weights)
        .enumerate()
        .map(|(position, (surface, &copy_weight))| CopiedToken {
            position,
            surface: surface.clone(),
            copy_weight,
        })
        .collect();
    Ok(ChatResponse {
        response: words.join(" "),
        emotion,
        emotion_distribution,
        concepts,
        copied_tokens,
    })
}

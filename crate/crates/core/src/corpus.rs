//! Dialogue records, tokenization, vocabulary and stopwords.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const CLS: usize = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<cls>"];

/// Emotion labels of the public empathetic-dialogue corpus.
pub const DEFAULT_EMOTIONS: [&str; 32] = [
    "afraid",
    "angry",
    "annoyed",
    "anticipating",
    "anxious",
    "apprehensive",
    "ashamed",
    "caring",
    "confident",
    "content",
    "devastated",
    "disappointed",
    "disgusted",
    "embarrassed",
    "excited",
    "faithful",
    "furious",
    "grateful",
    "guilty",
    "hopeful",
    "impressed",
    "jealous",
    "joyful",
    "lonely",
    "nostalgic",
    "prepared",
    "proud",
    "sad",
    "sentimental",
    "surprised",
    "terrified",
    "trusting",
];

const PUNCTUATION: [char; 6] = ['.', ',', '!', '?', '\'', '"'];

/// Lowercases, isolates the marks `.,!?'"` as tokens and splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if PUNCTUATION.contains(&ch) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Ordered emotion label set; a label's id is its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionLabels {
    labels: Vec<String>,
}

impl Default for EmotionLabels {
    fn default() -> Self {
        Self::new(DEFAULT_EMOTIONS).expect("default labels are unique")
    }
}

impl EmotionLabels {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let unique: HashSet<&String> = labels.iter().collect();
        if labels.is_empty() || unique.len() != labels.len() {
            return Err(Error::Config("emotion labels must be non-empty and unique".into()));
        }
        Ok(EmotionLabels { labels })
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub id: String,
    pub history: Vec<String>,
    pub emotion: String,
    pub response: String,
}

impl DialogueSample {
    pub fn validate(&self, labels: &EmotionLabels) -> std::result::Result<(), String> {
        if self.history.is_empty() {
            return Err("history is empty".into());
        }
        if self.response.trim().is_empty() {
            return Err("response is empty".into());
        }
        if labels.id(&self.emotion).is_none() {
            return Err(format!("unknown emotion label {:?}", self.emotion));
        }
        Ok(())
    }
}

/// Parses one JSON record per line, checking every sample against `labels`.
pub fn parse_corpus(text: &str, source: &str, labels: &EmotionLabels) -> Result<Vec<DialogueSample>> {
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: DialogueSample =
            serde_json::from_str(line).map_err(|e| Error::parse(source, line_no, e.to_string()))?;
        sample.validate(labels).map_err(|m| Error::parse(source, line_no, m))?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_corpus(path: impl AsRef<Path>, labels: &EmotionLabels) -> Result<Vec<DialogueSample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string(), labels)
}

pub fn write_corpus(path: impl AsRef<Path>, samples: &[DialogueSample]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).map_err(|e| Error::Internal(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One lowercase word per line.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Token/id mapping with the five reserved ids first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocab {
    /// Builds a vocabulary from non-reserved tokens in id order. Duplicates
    /// and reserved names are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for r in RESERVED {
            vocab.push(r.to_string());
        }
        for t in tokens {
            let t = t.into();
            if !vocab.ids.contains_key(&t) {
                vocab.push(t);
            }
        }
        vocab
    }

    fn push(&mut self, token: String) {
        self.ids.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
    }

    /// Id of `token`, or `UNK`.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    /// All tokens in id order, reserved ones included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Surface tokens for `ids`, stopping at the first EOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }
}

/// Counts tokens of histories, responses and `extra` (typically every
/// retrieved concept), keeps those seen at least `min_count` times and
/// truncates to `max_size` non-reserved entries by descending frequency,
/// ties broken lexicographically.
pub fn build_vocab<'a, I>(
    samples: &[DialogueSample],
    extra: I,
    min_count: usize,
    max_size: Option<usize>,
) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in samples {
        for text in s.history.iter().chain(std::iter::once(&s.response)) {
            for t in tokenize(text) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    for t in extra {
        *counts.entry(t.to_string()).or_default() += 1;
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && !RESERVED.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(max) = max_size {
        kept.truncate(max);
    }
    Ok(Vocab::from_tokens(kept.into_iter().map(|(t, _)| t)))
}

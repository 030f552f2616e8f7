//! Commonsense tuples, the VAD emotion lexicon and word vectors, plus the
//! retrieval and ranking of emotion-related concepts for a query token.
//!
//! All stores are immutable once loaded and can be shared freely between
//! threads.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower and upper bound of raw tuple confidence.
pub const MIN_RAW_CONFIDENCE: f64 = 1.0;
pub const MAX_RAW_CONFIDENCE: f64 = 10.0;

/// Largest value of `‖(V − ½, A / 2)‖₂` over the unit square.
pub const MAX_INTENSITY_NORM: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Valence/arousal assumed for words missing from the lexicon.
pub const NEUTRAL_VAD: f64 = 0.5;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadEntry {
    pub valence: f64,
    pub arousal: f64,
    pub dominance: f64,
}

#[derive(Debug, Clone, Default)]
pub struct VadLexicon {
    entries: HashMap<String, VadEntry>,
    duplicates: usize,
}

impl VadLexicon {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_to_string(path)?, &file_label(path))
    }

    /// Parses `word<TAB>valence<TAB>arousal<TAB>dominance` lines. A repeated
    /// word keeps its last occurrence.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lexicon = VadLexicon::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected 4 tab-separated columns, found {}", cols.len()),
                ));
            }
            let word = cols[0].trim().to_lowercase();
            if word.is_empty() {
                return Err(Error::parse(source, line_no, "empty word"));
            }
            let mut vals = [0.0; 3];
            for (slot, (name, col)) in vals
                .iter_mut()
                .zip(["valence", "arousal", "dominance"].iter().zip(&cols[1..]))
            {
                let v: f64 = col
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(source, line_no, format!("{name} is not a number")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::parse(source, line_no, format!("{name} out of range")));
                }
                *slot = v;
            }
            let entry = VadEntry {
                valence: vals[0],
                arousal: vals[1],
                dominance: vals[2],
            };
            if lexicon.entries.insert(word, entry).is_some() {
                lexicon.duplicates += 1;
            }
        }
        if lexicon.duplicates > 0 {
            log::warn!("{source}: {} duplicate words, last occurrence kept", lexicon.duplicates);
        }
        Ok(lexicon)
    }

    pub fn get(&self, word: &str) -> Option<&VadEntry> {
        self.entries.get(word)
    }

    pub fn insert(&mut self, word: impl Into<String>, entry: VadEntry) {
        self.entries.insert(word.into(), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of lines overwritten by a later entry for the same word.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }
}

/// Min-max scales a raw tuple confidence from `[1, 10]` onto `[0, 1]`.
pub fn normalize_confidence(raw: f64) -> Result<f64> {
    if !(MIN_RAW_CONFIDENCE..=MAX_RAW_CONFIDENCE).contains(&raw) {
        return Err(Error::Domain(format!(
            "raw confidence {raw} outside [{MIN_RAW_CONFIDENCE}, {MAX_RAW_CONFIDENCE}]"
        )));
    }
    Ok((raw - MIN_RAW_CONFIDENCE) / (MAX_RAW_CONFIDENCE - MIN_RAW_CONFIDENCE))
}

/// Emotion intensity from valence and arousal, scaled by the analytic
/// extremes of the norm so the result always lies in `[0, 1]`.
pub fn intensity_from_vad(valence: f64, arousal: f64) -> f64 {
    let dv = valence - 0.5;
    let da = arousal / 2.0;
    ((dv * dv + da * da).sqrt() / MAX_INTENSITY_NORM).clamp(0.0, 1.0)
}

pub fn emotion_intensity(word: &str, lexicon: &VadLexicon) -> f64 {
    match lexicon.get(word) {
        Some(e) => intensity_from_vad(e.valence, e.arousal),
        None => intensity_from_vad(NEUTRAL_VAD, NEUTRAL_VAD),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeTuple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub raw_confidence: f64,
    pub confidence: f64,
}

impl KnowledgeTuple {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
        raw_confidence: f64,
    ) -> Result<Self> {
        let head = head.into();
        let tail = tail.into();
        if head.is_empty() || tail.is_empty() {
            return Err(Error::Domain("tuple head and tail must be non-empty".into()));
        }
        Ok(KnowledgeTuple {
            head,
            relation: relation.into(),
            tail,
            raw_confidence,
            confidence: normalize_confidence(raw_confidence)?,
        })
    }
}

/// Commonsense tuples indexed by lowercase head word.
#[derive(Debug, Clone, Default)]
pub struct TupleStore {
    by_head: HashMap<String, Vec<KnowledgeTuple>>,
    len: usize,
}

impl TupleStore {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_to_string(path)?, &file_label(path))
    }

    /// Parses `head<TAB>relation<TAB>tail<TAB>raw_weight` lines; `#` lines
    /// are comments.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut store = TupleStore::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected 4 tab-separated columns, found {}", cols.len()),
                ));
            }
            let weight: f64 = cols[3]
                .trim()
                .parse()
                .map_err(|_| Error::parse(source, line_no, "weight is not a number"))?;
            if !(MIN_RAW_CONFIDENCE..=MAX_RAW_CONFIDENCE).contains(&weight) {
                return Err(Error::parse(source, line_no, "weight out of range"));
            }
            let tuple = KnowledgeTuple::new(
                cols[0].trim().to_lowercase(),
                cols[1].trim(),
                cols[2].trim().to_lowercase(),
                weight,
            )
            .map_err(|e| Error::parse(source, line_no, e.to_string()))?;
            store.push(tuple);
        }
        Ok(store)
    }

    pub fn from_tuples(tuples: impl IntoIterator<Item = KnowledgeTuple>) -> Self {
        let mut store = TupleStore::default();
        for t in tuples {
            store.push(t);
        }
        store
    }

    fn push(&mut self, tuple: KnowledgeTuple) {
        self.by_head.entry(tuple.head.clone()).or_default().push(tuple);
        self.len += 1;
    }

    /// Tuples with the given head, in input order.
    pub fn lookup(&self, head: &str) -> &[KnowledgeTuple] {
        self.by_head.get(head).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Pretrained word vectors in GloVe text layout.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        EmbeddingTable {
            dimension,
            vectors: HashMap::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_to_string(path)?, &file_label(path))
    }

    /// Parses `word v1 ... vd` lines. The first vector fixes the dimension.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut dimension = 0;
        let mut vectors = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let vec = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(source, line_no, "vector component is not a number"))?;
            if vec.is_empty() {
                return Err(Error::parse(source, line_no, "word without vector"));
            }
            if dimension == 0 {
                dimension = vec.len();
            } else if vec.len() != dimension {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("vector length {} differs from {dimension}", vec.len()),
                ));
            }
            vectors.insert(word.to_lowercase(), vec);
        }
        Ok(EmbeddingTable { dimension, vectors })
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if self.dimension == 0 && self.vectors.is_empty() {
            self.dimension = vector.len();
        }
        if vector.len() != self.dimension {
            return Err(Error::Dimension {
                op: "embedding_insert",
                detail: format!("expected {}, got {}", self.dimension, vector.len()),
            });
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Cosine similarity of two words; 0 when either lacks a vector or has
    /// zero norm.
    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        match (self.get(a), self.get(b)) {
            (Some(x), Some(y)) => cosine(x, y),
            _ => 0.0,
        }
    }
}

pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        (dot / (nx * ny)).clamp(-1.0, 1.0)
    }
}

/// Relations whose tuples are never used. An entry ending in `*` matches by
/// prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExcludedRelations {
    exact: HashSet<String>,
    prefixes: Vec<String>,
}

impl Default for ExcludedRelations {
    fn default() -> Self {
        Self::from_names(["Not*", "Antonym", "ExternalURL", "DistinctFrom"])
    }
}

impl ExcludedRelations {
    pub fn none() -> Self {
        ExcludedRelations {
            exact: HashSet::new(),
            prefixes: Vec::new(),
        }
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Self::none();
        for name in names {
            let name = name.as_ref().trim();
            if name.is_empty() || name.starts_with('#') {
                continue;
            }
            match name.strip_suffix('*') {
                Some(prefix) => out.prefixes.push(prefix.to_string()),
                None => {
                    out.exact.insert(name.to_string());
                }
            }
        }
        out
    }

    /// One relation name per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self::from_names(read_to_string(path)?.lines()))
    }

    pub fn contains(&self, relation: &str) -> bool {
        self.exact.contains(relation) || self.prefixes.iter().any(|p| relation.starts_with(p))
    }
}

/// Tuples for `token` that survive relation filtering and whose normalized
/// confidence is strictly above `alpha`. `limit` caps how many are returned
/// (in input order).
pub fn retrieve_candidates(
    token: &str,
    store: &TupleStore,
    excluded: &ExcludedRelations,
    alpha: f64,
    limit: Option<usize>,
) -> Vec<KnowledgeTuple> {
    store
        .lookup(token)
        .iter()
        .filter(|t| !excluded.contains(&t.relation) && t.confidence > alpha)
        .take(limit.unwrap_or(usize::MAX))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub concept: String,
    pub relation: String,
    pub score: f64,
    pub intensity: f64,
    pub confidence: f64,
    pub cosine: f64,
}

/// Descending score, then higher confidence, then lexicographic concept and
/// relation.
pub fn concept_order(a: &RankedConcept, b: &RankedConcept) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.confidence.total_cmp(&a.confidence))
        .then_with(|| a.concept.cmp(&b.concept))
        .then_with(|| a.relation.cmp(&b.relation))
}

/// Scores each candidate by emotion intensity of the tail, cosine between
/// token and tail, and confidence, then keeps the best `k_prime`.
pub fn rank_concepts(
    token: &str,
    candidates: &[KnowledgeTuple],
    lexicon: &VadLexicon,
    embeddings: &EmbeddingTable,
    k_prime: usize,
) -> Vec<RankedConcept> {
    let mut ranked: Vec<RankedConcept> = candidates
        .iter()
        .map(|t| {
            let intensity = emotion_intensity(&t.tail, lexicon);
            let cos = embeddings.cosine(token, &t.tail);
            RankedConcept {
                concept: t.tail.clone(),
                relation: t.relation.clone(),
                score: intensity + cos + t.confidence,
                intensity,
                confidence: t.confidence,
                cosine: cos,
            }
        })
        .collect();
    ranked.sort_by(concept_order);
    ranked.truncate(k_prime);
    ranked
}

/// Everything needed to enrich a dialogue with knowledge.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub lexicon: VadLexicon,
    pub tuples: TupleStore,
    pub embeddings: EmbeddingTable,
    pub excluded: ExcludedRelations,
    pub stopwords: HashSet<String>,
}

impl KnowledgeBase {
    /// A knowledge base with no entries, useful for knowledge-free runs.
    pub fn empty() -> Self {
        KnowledgeBase {
            lexicon: VadLexicon::default(),
            tuples: TupleStore::default(),
            embeddings: EmbeddingTable::new(0),
            excluded: ExcludedRelations::default(),
            stopwords: HashSet::new(),
        }
    }

    pub fn intensity(&self, word: &str) -> f64 {
        emotion_intensity(word, &self.lexicon)
    }

    /// Ranked concepts for one token.
    pub fn concepts_for(
        &self,
        token: &str,
        alpha: f64,
        candidate_limit: Option<usize>,
        k_prime: usize,
    ) -> Vec<RankedConcept> {
        let candidates = retrieve_candidates(token, &self.tuples, &self.excluded, alpha, candidate_limit);
        rank_concepts(token, &candidates, &self.lexicon, &self.embeddings, k_prime)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(head: &str, rel: &str, tail: &str, raw: f64) -> KnowledgeTuple {
        KnowledgeTuple::new(head, rel, tail, raw).unwrap()
    }

    #[test]
    fn vad_line_parses() {
        let lex = VadLexicon::parse("nice\t0.93\t0.442\t0.65\n", "vad.tsv").unwrap();
        let e = lex.get("nice").unwrap();
        assert_eq!((e.valence, e.arousal, e.dominance), (0.93, 0.442, 0.65));
    }

    #[test]
    fn vad_empty_file() {
        assert!(VadLexicon::parse("", "vad.tsv").unwrap().is_empty());
    }

    #[test]
    fn vad_out_of_range_names_line() {
        let err = VadLexicon::parse("bad\t1.2\t0.5\t0.5", "vad.tsv").unwrap_err();
        assert!(err.to_string().contains("valence out of range, line 1"), "{err}");
    }

    #[test]
    fn vad_wrong_arity_and_non_numeric() {
        let err = VadLexicon::parse("ok\t0.1\t0.1\t0.1\nbad\t0.1\t0.2", "vad.tsv").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = VadLexicon::parse("bad\tx\t0.1\t0.1", "vad.tsv").unwrap_err();
        assert!(err.to_string().contains("valence is not a number"), "{err}");
    }

    #[test]
    fn vad_duplicates_last_wins() {
        let lex = VadLexicon::parse("a\t0.1\t0.1\t0.1\na\t0.9\t0.2\t0.3\n", "vad.tsv").unwrap();
        assert_eq!(lex.len(), 1);
        assert_eq!(lex.duplicates(), 1);
        assert_eq!(lex.get("a").unwrap().valence, 0.9);
    }

    #[test]
    fn confidence_normalization() {
        assert!((normalize_confidence(2.69).unwrap() - 0.19).abs() < 0.005);
        assert_eq!(normalize_confidence(1.0).unwrap(), 0.0);
        assert_eq!(normalize_confidence(10.0).unwrap(), 1.0);
        assert!(normalize_confidence(0.99).is_err());
        assert!(normalize_confidence(10.01).is_err());
    }

    #[test]
    fn conceptnet_parse_and_lookup() {
        let text = "# comment\nbirthday\tRelatedTo\thappy\t2.69\nbirthday\tUsedFor\tparty\t3.0\n";
        let store = TupleStore::parse(text, "tuples.tsv").unwrap();
        let found = store.lookup("birthday");
        assert_eq!(found.len(), 2);
        assert!((found[0].confidence - 0.19).abs() < 0.005);
        assert_eq!(found[0].tail, "happy");
        assert_eq!(found[1].tail, "party");
        assert!(store.lookup("absent").is_empty());
    }

    #[test]
    fn conceptnet_bad_weight() {
        let err = TupleStore::parse("a\tR\tb\t11\n", "t").unwrap_err();
        assert!(err.to_string().contains("line 1"));
        let err = TupleStore::parse("a\tR\tb\tzz\n", "t").unwrap_err();
        assert!(err.to_string().contains("not a number"));
    }

    #[test]
    fn intensity_examples() {
        let mut lex = VadLexicon::default();
        let e = |v, a| VadEntry {
            valence: v,
            arousal: a,
            dominance: 0.5,
        };
        lex.insert("calm", e(0.5, 0.0));
        lex.insert("max", e(1.0, 1.0));
        assert_eq!(emotion_intensity("calm", &lex), 0.0);
        assert!((emotion_intensity("max", &lex) - 1.0).abs() < 1e-12);
        // Hand evaluation: sqrt(0 + 0.25^2) / (sqrt(2)/2) = 0.25 * sqrt(2).
        assert!((emotion_intensity("oov", &lex) - 0.35355).abs() < 1e-4);
    }

    #[test]
    fn relation_filter_and_threshold() {
        let store = TupleStore::from_tuples(vec![
            tuple("cat", "NotHasProperty", "dog", 9.0),
            tuple("cake", "RelatedTo", "happy", 2.69),
            KnowledgeTuple {
                confidence: 0.1,
                ..tuple("cake", "RelatedTo", "exact", 1.9)
            },
        ]);
        let ex = ExcludedRelations::default();
        assert!(retrieve_candidates("cat", &store, &ex, 0.1, None).is_empty());
        let kept = retrieve_candidates("cake", &store, &ex, 0.1, None);
        // Confidence equal to alpha fails the strict threshold.
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].tail, "happy");
    }

    #[test]
    fn excluded_relations_defaults() {
        let ex = ExcludedRelations::default();
        for r in ["NotDesires", "NotHasProperty", "Antonym", "ExternalURL", "DistinctFrom"] {
            assert!(ex.contains(r), "{r}");
        }
        assert!(!ex.contains("RelatedTo"));
        let custom = ExcludedRelations::from_names(["Synonym", "", "# c"]);
        assert!(custom.contains("Synonym"));
        assert!(!custom.contains("NotDesires"));
    }

    #[test]
    fn rank_identical_embedding_scores_one() {
        let mut emb = EmbeddingTable::new(3);
        emb.insert("x", vec![1.0, 2.0, 3.0]).unwrap();
        emb.insert("c", vec![1.0, 2.0, 3.0]).unwrap();
        let mut lex = VadLexicon::default();
        lex.insert(
            "c",
            VadEntry {
                valence: 0.5,
                arousal: 0.0,
                dominance: 0.0,
            },
        );
        let ranked = rank_concepts("x", &[tuple("x", "R", "c", 1.0)], &lex, &emb, 5);
        assert_eq!(ranked.len(), 1);
        assert!((ranked[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_truncates_in_score_order() {
        // Zero intensity and zero cosine leave confidence as the score.
        let mut lex = VadLexicon::default();
        for w in ["a", "b", "c"] {
            lex.insert(
                w,
                VadEntry {
                    valence: 0.5,
                    arousal: 0.0,
                    dominance: 0.0,
                },
            );
        }
        let emb = EmbeddingTable::new(2);
        let cands = vec![
            tuple("t", "R", "a", 1.0 + 9.0 * 0.3),
            tuple("t", "R", "b", 1.0 + 9.0 * 0.7),
            tuple("t", "R", "c", 1.0 + 9.0 * 0.9),
        ];
        let ranked = rank_concepts("t", &cands, &lex, &emb, 2);
        let tails: Vec<_> = ranked.iter().map(|r| r.concept.as_str()).collect();
        assert_eq!(tails, ["c", "b"]);
        assert!(rank_concepts("t", &[], &lex, &emb, 2).is_empty());
    }

    #[test]
    fn embeddings_parse() {
        let emb = EmbeddingTable::parse("a 1 0\nb 0 1\n", "e").unwrap();
        assert_eq!(emb.dimension(), 2);
        assert_eq!(emb.cosine("a", "b"), 0.0);
        assert_eq!(emb.cosine("a", "a"), 1.0);
        assert_eq!(emb.cosine("a", "zzz"), 0.0);
        assert!(EmbeddingTable::parse("a 1 0\nb 1\n", "e").is_err());
    }
}

//! Deterministic synthetic corpus and knowledge files for desk-scale runs.
//!
//! Each dialogue is one or two speaker turns built from a topic noun, an
//! emotion cue and filler phrases; the response is an emotion-specific
//! template mentioning the topic noun, so it can be copied from the context.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_corpus, DialogueSample};
use crate::error::{Error, Result};

struct EmotionSpec {
    label: &'static str,
    /// Centre of the cue words' valence and arousal.
    vad: (f64, f64),
    cues: [&'static str; 5],
    concepts: [&'static str; 4],
    responses: [&'static str; 3],
}

const EMOTIONS: [EmotionSpec; 8] = [
    EmotionSpec {
        label: "joyful",
        vad: (0.92, 0.7),
        cues: ["happy", "thrilled", "delighted", "cheerful", "overjoyed"],
        concepts: ["joy", "smile", "celebration", "laughter"],
        responses: [
            "that is wonderful news about the {} !",
            "how lovely , enjoy the {} .",
            "i am so happy for you and the {} !",
        ],
    },
    EmotionSpec {
        label: "sad",
        vad: (0.1, 0.35),
        cues: ["sad", "heartbroken", "miserable", "gloomy", "tearful"],
        concepts: ["sorrow", "tears", "grief", "loss"],
        responses: [
            "i am sorry about the {} .",
            "that must hurt , losing the {} is hard .",
            "sending hugs , the {} meant a lot .",
        ],
    },
    EmotionSpec {
        label: "angry",
        vad: (0.15, 0.85),
        cues: ["furious", "angry", "annoyed", "outraged", "irritated"],
        concepts: ["rage", "fury", "conflict", "shouting"],
        responses: [
            "that is unfair , the {} should not happen .",
            "i would be mad about the {} too .",
            "what a mess with the {} , calm down first .",
        ],
    },
    EmotionSpec {
        label: "afraid",
        vad: (0.12, 0.9),
        cues: ["scared", "terrified", "nervous", "frightened", "anxious"],
        concepts: ["fear", "danger", "panic", "threat"],
        responses: [
            "stay safe , the {} sounds scary .",
            "that is frightening , is the {} okay now ?",
            "take a breath , the {} will pass .",
        ],
    },
    EmotionSpec {
        label: "surprised",
        vad: (0.7, 0.88),
        cues: ["shocked", "amazed", "stunned", "astonished", "surprised"],
        concepts: ["wonder", "shock", "twist", "suddenness"],
        responses: [
            "wow , i did not expect the {} !",
            "no way , the {} ? really ?",
            "what a twist with the {} !",
        ],
    },
    EmotionSpec {
        label: "proud",
        vad: (0.85, 0.6),
        cues: ["proud", "accomplished", "honored", "confident", "triumphant"],
        concepts: ["pride", "achievement", "success", "honor"],
        responses: [
            "you earned it , great work on the {} .",
            "congratulations on the {} , well done .",
            "you should be proud of the {} !",
        ],
    },
    EmotionSpec {
        label: "lonely",
        vad: (0.2, 0.2),
        cues: ["lonely", "isolated", "alone", "abandoned", "forgotten"],
        concepts: ["solitude", "isolation", "emptiness", "silence"],
        responses: [
            "you are not alone , tell me about the {} .",
            "i am here for you , even without the {} .",
            "maybe call a friend about the {} .",
        ],
    },
    EmotionSpec {
        label: "grateful",
        vad: (0.88, 0.45),
        cues: ["grateful", "thankful", "blessed", "appreciative", "touched"],
        concepts: ["gratitude", "kindness", "gift", "thanks"],
        responses: [
            "that is so kind , cherish the {} .",
            "what a thoughtful {} , lucky you .",
            "it is nice when people share a {} .",
        ],
    },
];

const TOPICS: [&str; 40] = [
    "dog",
    "cat",
    "job",
    "exam",
    "house",
    "car",
    "sister",
    "brother",
    "garden",
    "bike",
    "phone",
    "trip",
    "concert",
    "wedding",
    "promotion",
    "laptop",
    "neighbor",
    "friend",
    "party",
    "puppy",
    "boss",
    "grandma",
    "movie",
    "game",
    "apartment",
    "kitten",
    "guitar",
    "painting",
    "marathon",
    "interview",
    "vacation",
    "scholarship",
    "package",
    "letter",
    "recipe",
    "camera",
    "watch",
    "team",
    "teacher",
    "bakery",
];

const TIMES: [&str; 8] = [
    "yesterday",
    "today",
    "last night",
    "this morning",
    "last week",
    "on sunday",
    "after work",
    "at lunch",
];

const SUBJECTS: [&str; 6] = ["my", "our", "the", "my old", "my new", "our little"];

const EVENTS: [&str; 12] = [
    "changed",
    "showed up",
    "was gone",
    "came back",
    "broke down",
    "surprised everyone",
    "got picked",
    "went missing",
    "was ready",
    "arrived early",
    "fell apart",
    "won first place",
];

const FEELINGS: [&str; 6] = [
    "i feel so {}",
    "honestly i am {}",
    "it left me {}",
    "i was {} all day",
    "now i am {}",
    "i still feel {}",
];

const EXTRA: [&str; 8] = [
    "what do you think ?",
    "can you believe it ?",
    "i keep thinking about it .",
    "it happened so fast .",
    "nobody saw it coming .",
    "i told my family .",
    "i need some advice .",
    "it was a long day .",
];

const TOPIC_CONCEPTS: [&str; 24] = [
    "home",
    "pet",
    "work",
    "school",
    "family",
    "money",
    "music",
    "travel",
    "health",
    "sport",
    "art",
    "food",
    "animal",
    "office",
    "city",
    "memory",
    "weekend",
    "hobby",
    "study",
    "machine",
    "holiday",
    "neighborhood",
    "letters",
    "team spirit",
];

pub const STOPWORDS: [&str; 22] = [
    "the", "a", "an", "i", "my", "our", "is", "it", "to", "of", "and", "so", "was", "am", "are", "you", "that", "on",
    "at", "about", "me", ".",
];

/// A generated toy data set.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub train: Vec<DialogueSample>,
    pub heldout: Vec<DialogueSample>,
    pub labels: Vec<String>,
    pub lexicon: String,
    pub tuples: String,
    pub embeddings: String,
    pub stopwords: String,
}

fn dialogue(rng: &mut ChaCha8Rng, id: String, emotion: usize) -> DialogueSample {
    let e = &EMOTIONS[emotion];
    let topic = *TOPICS.choose(rng).expect("non-empty");
    let first = format!(
        "{} {} {} {} .",
        TIMES.choose(rng).expect("non-empty"),
        SUBJECTS.choose(rng).expect("non-empty"),
        topic,
        EVENTS.choose(rng).expect("non-empty"),
    );
    let feeling = FEELINGS
        .choose(rng)
        .expect("non-empty")
        .replace("{}", e.cues.choose(rng).expect("non-empty"));
    let mut history = vec![format!("{first} {feeling} .")];
    if rng.random_bool(0.5) {
        history.push("oh really ? what happened next ?".into());
        history.push(EXTRA.choose(rng).expect("non-empty").to_string());
    }
    let response = e.responses.choose(rng).expect("non-empty").replace("{}", topic);
    DialogueSample {
        id,
        history,
        emotion: e.label.to_string(),
        response,
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Builds `n_train` training and `n_heldout` held-out dialogues, cycling
/// through the eight emotions, plus matching knowledge files whose word
/// vectors have `dim` components.
pub fn generate(seed: u64, n_train: usize, n_heldout: usize, dim: usize) -> ToyData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(n_train);
    for i in 0..n_train {
        train.push(dialogue(&mut rng, format!("toy-{i:03}"), i % EMOTIONS.len()));
    }
    let mut heldout = Vec::with_capacity(n_heldout);
    for i in 0..n_heldout {
        heldout.push(dialogue(&mut rng, format!("heldout-{i:03}"), (i * 3) % EMOTIONS.len()));
    }

    let mut lexicon = String::new();
    let mut tuples = String::from("# head\trelation\ttail\tweight\n");
    for e in &EMOTIONS {
        for w in e.cues.iter().chain(&e.concepts) {
            let v = (e.vad.0 + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
            let a = (e.vad.1 + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
            let _ = writeln!(lexicon, "{w}\t{:.3}\t{:.3}\t{:.3}", v, a, rng.random_range(0.2..0.8));
        }
        for cue in &e.cues {
            for (k, c) in e.concepts.iter().enumerate() {
                let rel = ["RelatedTo", "Causes", "HasSubevent", "Synonym"][k];
                let _ = writeln!(tuples, "{cue}\t{rel}\t{c}\t{:.2}", rng.random_range(1.5..9.5));
            }
        }
        // Noise the filter must drop.
        let _ = writeln!(tuples, "{}\tAntonym\t{}\t8.0", e.cues[0], e.concepts[0]);
    }
    for (i, t) in TOPICS.iter().enumerate() {
        let _ = writeln!(
            lexicon,
            "{t}\t{:.3}\t{:.3}\t{:.3}",
            rng.random_range(0.3..0.8),
            rng.random_range(0.2..0.6),
            rng.random_range(0.3..0.7)
        );
        for k in 0..2 {
            let c = TOPIC_CONCEPTS[(i * 2 + k) % TOPIC_CONCEPTS.len()];
            let _ = writeln!(tuples, "{t}\tRelatedTo\t{c}\t{:.2}", rng.random_range(1.0..8.0));
        }
        let _ = writeln!(tuples, "{t}\tNotDesires\tnothing\t5.0");
        let _ = writeln!(tuples, "{t}\tRelatedTo\tweakly related\t1.5");
    }

    let mut words: Vec<String> = Vec::new();
    for s in train.iter().chain(&heldout) {
        for text in s.history.iter().chain(std::iter::once(&s.response)) {
            words.extend(crate::corpus::tokenize(text));
        }
    }
    for e in &EMOTIONS {
        words.extend(e.concepts.iter().map(|s| s.to_string()));
    }
    words.extend(TOPIC_CONCEPTS.iter().map(|s| s.to_string()));
    words.sort();
    words.dedup();
    // Vectors cluster around one random direction per emotion.
    let centres: Vec<Vec<f64>> = (0..EMOTIONS.len())
        .map(|_| (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect();
    let mut embeddings = String::new();
    let zero = vec![0.0; dim];
    for w in words.iter().filter(|w| !w.contains(' ')) {
        let owner = EMOTIONS
            .iter()
            .position(|e| e.cues.contains(&w.as_str()) || e.concepts.contains(&w.as_str()));
        let _ = write!(embeddings, "{w}");
        let centre = owner.map_or(&zero, |o| &centres[o]);
        for base in centre {
            let _ = write!(embeddings, " {}", round4(base + rng.random_range(-0.1..0.1)));
        }
        embeddings.push('\n');
    }

    ToyData {
        train,
        heldout,
        labels: EMOTIONS.iter().map(|e| e.label.to_string()).collect(),
        lexicon,
        tuples,
        embeddings,
        stopwords: STOPWORDS.join("\n") + "\n",
    }
}

impl ToyData {
    /// Writes `train.jsonl`, `heldout.jsonl`, `labels.txt`, `vad.tsv`,
    /// `tuples.tsv`, `embeddings.txt` and `stopwords.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_corpus(dir.join("train.jsonl"), &self.train)?;
        write_corpus(dir.join("heldout.jsonl"), &self.heldout)?;
        for (name, text) in [
            ("labels.txt", self.labels.join("\n") + "\n"),
            ("vad.tsv", self.lexicon.clone()),
            ("tuples.tsv", self.tuples.clone()),
            ("embeddings.txt", self.embeddings.clone()),
            ("stopwords.txt", self.stopwords.clone()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

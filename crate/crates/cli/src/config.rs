//! Run settings: built-in defaults, then a TOML file, then command-line flags.
//!
//! Relative paths in a file are taken relative to the file's directory, so a
//! config can travel together with its data.

use std::path::{Path, PathBuf};

use mkedg::graph::GraphConfig;
use mkedg::model::{ModelConfig, DEFAULT_MAX_DECODE_STEPS};
use mkedg::pipeline::KnowledgePaths;
use mkedg::training::{DataPaths, TrainConfig, TrainOptions};
use mkedg::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub max_steps: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_steps: DEFAULT_MAX_DECODE_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub caps: Vec<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            caps: vec![0, 2, 4, 6, 8, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeOptions {
    pub host: String,
    pub port: u16,
    /// Directory with the built chat UI, served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            host: "127.0.0.1".into(),
            port: 8080,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub train: TrainOptions,
    pub data: DataPaths,
    pub knowledge: KnowledgePaths,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub eval: EvalOptions,
    pub sweep: SweepOptions,
    pub serve: ServeOptions,
}

/// Values given on the command line. `None` leaves the setting alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub checkpoint: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub vad: Option<PathBuf>,
    pub tuples: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub port: Option<u16>,
    pub caps_dialogue: Option<usize>,
    pub caps_token: Option<usize>,
    pub alpha: Option<f64>,
}

/// Which split `--corpus` replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusRole {
    Train,
    Eval,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl Settings {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().replace('\n', " ");
            let line = e.span().map(|s| text[..s.start].lines().count().max(1));
            match line {
                Some(l) => Error::Config(format!("{source}:{l}: {msg}")),
                None => Error::Config(format!("{source}: {msg}")),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        s.rebase_paths(base);
        Ok(s)
    }

    fn rebase_paths(&mut self, base: &Path) {
        for p in [
            &mut self.data.train,
            &mut self.data.valid,
            &mut self.data.test,
            &mut self.knowledge.vad,
            &mut self.knowledge.tuples,
            &mut self.knowledge.embeddings,
            &mut self.knowledge.stopwords,
            &mut self.knowledge.relations,
            &mut self.train.log,
            &mut self.serve.static_dir,
        ] {
            rebase(base, p);
        }
        if self.train.checkpoint.is_relative() {
            self.train.checkpoint = base.join(&self.train.checkpoint);
        }
    }

    /// Defaults, overlaid with `config` when given, overlaid with `flags`.
    pub fn resolve(config: Option<&Path>, flags: &Overrides, role: CorpusRole) -> Result<Self> {
        let mut s = match config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        s.apply(flags, role);
        Ok(s)
    }

    pub fn apply(&mut self, f: &Overrides, role: CorpusRole) {
        if let Some(v) = f.seed {
            self.train.seed = v;
        }
        if let Some(v) = &f.checkpoint {
            self.train.checkpoint = v.clone();
        }
        if let Some(v) = &f.corpus {
            match role {
                CorpusRole::Train => self.data.train = Some(v.clone()),
                CorpusRole::Eval => self.data.test = Some(v.clone()),
            }
        }
        for (flag, slot) in [
            (&f.vad, &mut self.knowledge.vad),
            (&f.tuples, &mut self.knowledge.tuples),
            (&f.embeddings, &mut self.knowledge.embeddings),
            (&f.stopwords, &mut self.knowledge.stopwords),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if let Some(v) = f.port {
            self.serve.port = v;
        }
        if let Some(v) = f.caps_dialogue {
            self.graph.per_dialogue_cap = v;
        }
        if let Some(v) = f.caps_token {
            self.graph.per_token_cap = v;
        }
        if let Some(v) = f.alpha {
            self.graph.alpha = v;
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            train: self.train.clone(),
            data: self.data.clone(),
            knowledge: self.knowledge.clone(),
            graph: self.graph.clone(),
            model: self.model.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = r#"
[train]
seed = 11
checkpoint = "ck/model.bin"
batch_size = 4

[data]
train = "train.jsonl"
test = "test.jsonl"

[knowledge]
vad = "vad.tsv"
tuples = "/abs/tuples.tsv"
embeddings = "emb.txt"
stopwords = "stop.txt"

[graph]
per_dialogue_cap = 7
per_token_cap = 3
alpha = 0.25

[serve]
port = 9000
"#;

    fn file_settings() -> Settings {
        let mut s = Settings::parse(FILE, "t.toml").unwrap();
        s.rebase_paths(Path::new("/cfg"));
        s
    }

    #[test]
    fn defaults_follow_the_published_setup() {
        let s = Settings::default();
        assert_eq!((s.graph.per_dialogue_cap, s.graph.per_token_cap), (10, 5));
        assert_eq!(s.graph.alpha, 0.1);
        assert_eq!(s.train.batch_size, 16);
        assert_eq!(s.train.warmup, 8000);
        assert_eq!(s.eval.max_steps, 30);
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let s = file_settings();
        assert_eq!(s.data.train.as_deref(), Some(Path::new("/cfg/train.jsonl")));
        assert_eq!(s.knowledge.tuples.as_deref(), Some(Path::new("/abs/tuples.tsv")));
        assert_eq!(s.train.checkpoint, Path::new("/cfg/ck/model.bin"));
        assert_eq!(s.train.batch_size, 4);
    }

    /// Every flag-backed field: default without file or flag, file value with
    /// a file, flag value with both.
    #[test]
    fn precedence_per_field() {
        let flags = Overrides {
            seed: Some(99),
            checkpoint: Some("flag.bin".into()),
            corpus: Some("flag.jsonl".into()),
            vad: Some("flag-vad.tsv".into()),
            tuples: Some("flag-tuples.tsv".into()),
            embeddings: Some("flag-emb.txt".into()),
            stopwords: Some("flag-stop.txt".into()),
            port: Some(7000),
            caps_dialogue: Some(2),
            caps_token: Some(1),
            alpha: Some(0.5),
        };
        type Get = fn(&Settings) -> String;
        let fields: [(&str, Get, &str, &str, &str); 11] = [
            ("seed", |s| s.train.seed.to_string(), "0", "11", "99"),
            (
                "checkpoint",
                |s| s.train.checkpoint.display().to_string(),
                "model.bin",
                "/cfg/ck/model.bin",
                "flag.bin",
            ),
            (
                "corpus",
                |s| format!("{:?}", s.data.train),
                "None",
                "Some(\"/cfg/train.jsonl\")",
                "Some(\"flag.jsonl\")",
            ),
            (
                "vad",
                |s| format!("{:?}", s.knowledge.vad),
                "None",
                "Some(\"/cfg/vad.tsv\")",
                "Some(\"flag-vad.tsv\")",
            ),
            (
                "tuples",
                |s| format!("{:?}", s.knowledge.tuples),
                "None",
                "Some(\"/abs/tuples.tsv\")",
                "Some(\"flag-tuples.tsv\")",
            ),
            (
                "embeddings",
                |s| format!("{:?}", s.knowledge.embeddings),
                "None",
                "Some(\"/cfg/emb.txt\")",
                "Some(\"flag-emb.txt\")",
            ),
            (
                "stopwords",
                |s| format!("{:?}", s.knowledge.stopwords),
                "None",
                "Some(\"/cfg/stop.txt\")",
                "Some(\"flag-stop.txt\")",
            ),
            ("port", |s| s.serve.port.to_string(), "8080", "9000", "7000"),
            (
                "caps_dialogue",
                |s| s.graph.per_dialogue_cap.to_string(),
                "10",
                "7",
                "2",
            ),
            ("caps_token", |s| s.graph.per_token_cap.to_string(), "5", "3", "1"),
            ("alpha", |s| s.graph.alpha.to_string(), "0.1", "0.25", "0.5"),
        ];
        let mut flagged = file_settings();
        flagged.apply(&flags, CorpusRole::Train);
        let mut unflagged = file_settings();
        unflagged.apply(&Overrides::default(), CorpusRole::Train);
        for (name, get, default, file, flag) in fields {
            assert_eq!(get(&Settings::default()), default, "{name} default");
            assert_eq!(get(&unflagged), file, "{name} from file");
            assert_eq!(get(&flagged), flag, "{name} from flag");
        }
    }

    #[test]
    fn corpus_flag_targets_the_role() {
        let flags = Overrides {
            corpus: Some("x.jsonl".into()),
            ..Default::default()
        };
        let mut s = file_settings();
        s.apply(&flags, CorpusRole::Eval);
        assert_eq!(s.data.test.as_deref(), Some(Path::new("x.jsonl")));
        assert_eq!(s.data.train.as_deref(), Some(Path::new("/cfg/train.jsonl")));
    }

    #[test]
    fn bad_files_name_the_line() {
        let err = Settings::parse("[train]\nbatch_size = \"x\"\n", "bad.toml").unwrap_err();
        assert!(err.to_string().contains("bad.toml:2"), "{err}");
        let err = Settings::parse("[grpah]\n", "typo.toml").unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn toml_round_trip() {
        let s = file_settings();
        assert_eq!(Settings::parse(&s.to_toml().unwrap(), "x").unwrap(), s);
    }
}

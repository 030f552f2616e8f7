//! One function per subcommand. Results go to the given writer, or to the
//! `--out` file when one is named.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use mkedg::checkpoint::load_checkpoint;
use mkedg::corpus::{load_corpus, tokenize, Vocab};
use mkedg::eval::{ablation_run, concept_sweep, eval_samples, evaluate, sweep_csv, EvalReport, Variant};
use mkedg::graph::{enrich, prepare_context, truncated_tokens};
use mkedg::inference::{respond, validate_history, ChatResponse};
use mkedg::knowledge::{KnowledgeBase, RankedConcept};
use mkedg::model::Model;
use mkedg::training::{train as run_training, TrainOutcome};
use mkedg::{Error, Result};
use serde::Serialize;

use crate::config::Settings;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Writes `text` to `out_path` if given, else to `out`.
pub fn emit(text: &str, out_path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match out_path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            std::fs::write(p, text).map_err(io_err(p))
        }
        None => out.write_all(text.as_bytes()).map_err(stdout_err),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Internal(e.to_string()))
}

/// The checkpoint plus knowledge for inference. Graph flags given on the
/// command line replace the values stored with the model.
pub fn load_for_inference(s: &Settings, graph_flags: &GraphFlags) -> Result<(Model, KnowledgeBase)> {
    let mut model = load_checkpoint(&s.train.checkpoint)?;
    graph_flags.apply(&mut model);
    let kb = s.knowledge.load()?;
    if kb.tuples.is_empty() {
        log::warn!("no knowledge tuples loaded; responses use the dialogue alone");
    }
    Ok((model, kb))
}

/// Graph settings given as flags, kept apart so they can be laid over a
/// checkpoint's own values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GraphFlags {
    pub caps_dialogue: Option<usize>,
    pub caps_token: Option<usize>,
    pub alpha: Option<f64>,
}

impl GraphFlags {
    fn apply(&self, model: &mut Model) {
        let g = &mut model.graph_config;
        if let Some(v) = self.caps_dialogue {
            g.per_dialogue_cap = v;
        }
        if let Some(v) = self.caps_token {
            g.per_token_cap = v;
        }
        if let Some(v) = self.alpha {
            g.alpha = v;
        }
    }
}

#[derive(Debug, Serialize)]
struct CacheLine<'a> {
    token: &'a str,
    concepts: Vec<RankedConcept>,
}

/// Ranked concepts for every distinct non-stopword token in the corpus
/// histories, one JSON object per line. Returns the number of tokens.
pub fn build_knowledge(s: &Settings, out_path: Option<&Path>, out: &mut dyn Write) -> Result<usize> {
    let cfg = s.train_config();
    let labels = cfg.data.labels()?;
    let samples = load_corpus(cfg.train_split()?, &labels)?;
    let kb = s.knowledge.load()?;
    let tokens: BTreeSet<String> = samples
        .iter()
        .flat_map(|d| d.history.iter().flat_map(|u| tokenize(u)))
        .filter(|t| !kb.stopwords.contains(t))
        .collect();
    let mut text = String::new();
    for token in &tokens {
        let concepts = kb.concepts_for(token, s.graph.alpha, s.graph.candidate_limit, s.graph.per_token_cap);
        let line = serde_json::to_string(&CacheLine { token, concepts }).map_err(|e| Error::Internal(e.to_string()))?;
        text.push_str(&line);
        text.push('\n');
    }
    emit(&text, out_path, out)?;
    Ok(tokens.len())
}

/// DOT for one history: the explicit one, else sample `index` of the corpus.
/// With a checkpoint the model's vocabulary and graph settings are used.
pub fn graph_dump(
    s: &Settings,
    history: &[String],
    index: usize,
    use_checkpoint: bool,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let history: Vec<String> = if history.is_empty() {
        let cfg = s.train_config();
        let samples = load_corpus(cfg.train_split()?, &cfg.data.labels()?)?;
        let n = samples.len();
        samples
            .into_iter()
            .nth(index)
            .ok_or_else(|| Error::Index(format!("sample {index} requested but the corpus has {n}")))?
            .history
    } else {
        history.to_vec()
    };
    let kb = s.knowledge.load()?;
    let graph = if use_checkpoint {
        let model = load_checkpoint(&s.train.checkpoint)?;
        model.prepare(&history, &kb)?.graph
    } else {
        let tokens = truncated_tokens(&history, &s.graph);
        let concepts = enrich(&tokens, &kb, &s.graph, None);
        let words = tokens
            .iter()
            .map(|t| t.surface.clone())
            .chain(concepts.values().flatten().map(|c| c.concept.clone()));
        let vocab = Vocab::from_tokens(words);
        prepare_context(&history, &kb, &s.graph, &vocab)?.graph
    };
    emit(&graph.to_dot(), out_path, out)
}

pub fn train(s: &Settings, out: &mut dyn Write) -> Result<TrainOutcome> {
    let outcome = run_training(&s.train_config())?;
    writeln!(
        out,
        "trained {} steps over {} epochs{}; best validation loss {:.6}; checkpoint {}",
        outcome.steps,
        outcome.epochs,
        if outcome.stopped_early { " (stopped early)" } else { "" },
        outcome.best_val_loss,
        s.train.checkpoint.display()
    )
    .map_err(stdout_err)?;
    Ok(outcome)
}

pub fn evaluate_checkpoint(
    s: &Settings,
    graph_flags: &GraphFlags,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<EvalReport> {
    let (model, kb) = load_for_inference(s, graph_flags)?;
    let samples = eval_samples(&s.train_config(), &model)?;
    let report = evaluate(&model, &kb, &samples, s.eval.max_steps)?;
    emit(&to_json(&report)?, out_path, out)?;
    Ok(report)
}

pub fn sweep(s: &Settings, out_path: Option<&Path>, out: &mut dyn Write) -> Result<Vec<(usize, f64)>> {
    let rows = concept_sweep(&s.train_config(), &s.sweep.caps)?;
    emit(&sweep_csv(&rows), out_path, out)?;
    Ok(rows)
}

pub fn ablate(
    s: &Settings,
    variants: &[Variant],
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<BTreeMap<String, EvalReport>> {
    let cfg = s.train_config();
    let mut reports = BTreeMap::new();
    for &v in variants {
        log::info!("ablation variant {}", v.name());
        let mut r = ablation_run(&cfg, v, s.eval.max_steps)?;
        r.samples.clear();
        reports.insert(v.name().to_string(), r);
    }
    emit(&to_json(&reports)?, out_path, out)?;
    Ok(reports)
}

pub fn generate(model: &Model, kb: &KnowledgeBase, history: &[String], max_steps: usize) -> Result<ChatResponse> {
    validate_history(history).map_err(|e| Error::Domain(e.to_string()))?;
    respond(model, kb, history, max_steps)
}

/// `response` on one line and `emotion: <label>` on the next, or the full
/// response object as compact JSON.
pub fn render_generation(r: &ChatResponse, json: bool) -> Result<String> {
    if json {
        serde_json::to_string(r)
            .map(|s| s + "\n")
            .map_err(|e| Error::Internal(e.to_string()))
    } else {
        Ok(format!("{}\nemotion: {}\n", r.response, r.emotion))
    }
}

/// Line-based conversation. `/reset` clears the history, `/quit` or end of
/// input stops.
pub fn chat(
    model: &Model,
    kb: &KnowledgeBase,
    max_steps: usize,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<()> {
    let mut history: Vec<String> = Vec::new();
    let mut line = String::new();
    loop {
        write!(out, "> ").and_then(|_| out.flush()).map_err(stdout_err)?;
        line.clear();
        if input.read_line(&mut line).map_err(|e| Error::io("<stdin>", e))? == 0 {
            writeln!(out).map_err(stdout_err)?;
            return Ok(());
        }
        let text = line.trim();
        match text {
            "" => continue,
            "/quit" => return Ok(()),
            "/reset" => {
                history.clear();
                writeln!(out, "(history cleared)").map_err(stdout_err)?;
                continue;
            }
            _ => {}
        }
        history.push(text.to_string());
        match generate(model, kb, &history, max_steps) {
            Ok(r) => {
                writeln!(out, "[{}] {}", r.emotion, r.response).map_err(stdout_err)?;
                history.push(r.response);
            }
            Err(e) => {
                history.pop();
                writeln!(out, "error: {e}").map_err(stdout_err)?;
            }
        }
    }
}

/// Toy corpus, knowledge files and a `toy.toml` that trains on them.
pub fn make_toy(dir: &Path, seed: u64, n_train: usize, n_heldout: usize) -> Result<PathBuf> {
    let dim = 32;
    let toy = mkedg::toy::generate(seed, n_train, n_heldout, dim);
    toy.write(dir)?;
    let mut s = Settings::default();
    s.train.seed = seed;
    s.train.warmup = 100;
    s.train.max_epochs = 300;
    s.train.eval_every = 40;
    s.train.patience = 1000;
    s.train.checkpoint = "model.bin".into();
    s.train.log = Some("train_log.csv".into());
    s.data.train = Some("train.jsonl".into());
    s.data.valid = Some("train.jsonl".into());
    s.data.labels = Some(toy.labels.clone());
    s.knowledge.vad = Some("vad.tsv".into());
    s.knowledge.tuples = Some("tuples.tsv".into());
    s.knowledge.embeddings = Some("embeddings.txt".into());
    s.knowledge.stopwords = Some("stopwords.txt".into());
    s.model.d_model = dim;
    s.model.heads = 2;
    s.model.encoder_layers = 1;
    s.model.decoder_layers = 1;
    s.model.ffn_dim = 2 * dim;
    s.model.max_positions = 64;
    s.model.max_utterances = 4;
    let path = dir.join("toy.toml");
    let header = "# Small synthetic corpus. Validation reuses the training split so the run\n\
                  # can be checked for memorization; pass --corpus heldout.jsonl to evaluate.\n\n";
    // Label count and vocabulary size come from the data at training time.
    let body: String = s
        .to_toml()?
        .lines()
        .filter(|l| !l.starts_with("num_emotions") && !l.starts_with("vocab_size"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&path, format!("{header}{body}")).map_err(io_err(&path))?;
    Ok(path)
}

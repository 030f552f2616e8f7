//! The `mkedg` command line and HTTP service.

pub mod commands;
pub mod config;
pub mod server;

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mkedg::eval::Variant;
use mkedg::{Error, Result};

use commands::GraphFlags;
use config::{CorpusRole, Overrides, Settings};

#[derive(Debug, Parser)]
#[command(name = "mkedg", version, about = "Knowledge-enriched empathetic dialogue generation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML settings file; relative paths inside it are resolved against its directory
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Training corpus, or the evaluation corpus for `evaluate`
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub vad: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tuples: Option<PathBuf>,
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub stopwords: Option<PathBuf>,
    /// Output file (directory for `make-toy`); standard output when absent
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// Concepts kept per dialogue
    #[arg(long, global = true)]
    pub caps_dialogue: Option<usize>,
    /// Concepts kept per token
    #[arg(long, global = true)]
    pub caps_token: Option<usize>,
    /// Confidence threshold for knowledge tuples
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
}

impl Common {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            checkpoint: self.checkpoint.clone(),
            corpus: self.corpus.clone(),
            vad: self.vad.clone(),
            tuples: self.tuples.clone(),
            embeddings: self.embeddings.clone(),
            stopwords: self.stopwords.clone(),
            port: self.port,
            caps_dialogue: self.caps_dialogue,
            caps_token: self.caps_token,
            alpha: self.alpha,
        }
    }

    fn graph_flags(&self) -> GraphFlags {
        GraphFlags {
            caps_dialogue: self.caps_dialogue,
            caps_token: self.caps_token,
            alpha: self.alpha,
        }
    }

    pub fn settings(&self, role: CorpusRole) -> Result<Settings> {
        Settings::resolve(self.config.as_deref(), &self.overrides(), role)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Precompute ranked concepts for every corpus token into a JSON-lines cache
    BuildKnowledge,
    /// Print the context graph of one dialogue as DOT
    GraphDump {
        /// Utterances, oldest first; the corpus sample at --index when absent
        #[arg(long)]
        history: Vec<String>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Build the graph with the checkpoint's vocabulary and settings
        #[arg(long)]
        use_checkpoint: bool,
    },
    /// Train a model and write its best checkpoint
    Train,
    /// Score a checkpoint on the evaluation split and print a JSON report
    Evaluate,
    /// Train once per per-dialogue concept cap and print `cap,accuracy` CSV
    Sweep {
        /// Comma-separated caps
        #[arg(long, value_delimiter = ',')]
        caps: Option<Vec<usize>>,
    },
    /// Train and evaluate the full model and its ablations
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "full,no_mkce,no_ecatm")]
        variants: Vec<Variant>,
    },
    /// Respond once to a history given as repeated --history flags
    Generate {
        #[arg(long, required = true)]
        history: Vec<String>,
        /// Print the full response object as JSON
        #[arg(long)]
        json: bool,
    },
    /// Interactive conversation on standard input
    Chat,
    /// Start the HTTP chat service
    Serve {
        /// Built chat UI to serve at `/`
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Write the synthetic toy corpus, knowledge files and toy.toml
    MakeToy {
        #[arg(long, default_value_t = 50)]
        train_size: usize,
        #[arg(long, default_value_t = 10)]
        heldout_size: usize,
    },
}

/// Runs one parsed command line, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let c = &cli.common;
    let out_path = c.out.as_deref();
    match cli.command {
        Command::BuildKnowledge => {
            let n = commands::build_knowledge(&c.settings(CorpusRole::Train)?, out_path, out)?;
            log::info!("cached concepts for {n} tokens");
        }
        Command::GraphDump {
            history,
            index,
            use_checkpoint,
        } => {
            let s = c.settings(CorpusRole::Train)?;
            commands::graph_dump(&s, &history, index, use_checkpoint, out_path, out)?;
        }
        Command::Train => {
            commands::train(&c.settings(CorpusRole::Train)?, out)?;
        }
        Command::Evaluate => {
            let s = c.settings(CorpusRole::Eval)?;
            commands::evaluate_checkpoint(&s, &c.graph_flags(), out_path, out)?;
        }
        Command::Sweep { caps } => {
            let mut s = c.settings(CorpusRole::Train)?;
            if let Some(caps) = caps {
                s.sweep.caps = caps;
            }
            commands::sweep(&s, out_path, out)?;
        }
        Command::Ablate { variants } => {
            commands::ablate(&c.settings(CorpusRole::Train)?, &variants, out_path, out)?;
        }
        Command::Generate { history, json } => {
            let s = c.settings(CorpusRole::Eval)?;
            let (model, kb) = commands::load_for_inference(&s, &c.graph_flags())?;
            let r = commands::generate(&model, &kb, &history, s.eval.max_steps)?;
            commands::emit(&commands::render_generation(&r, json)?, out_path, out)?;
        }
        Command::Chat => {
            let s = c.settings(CorpusRole::Eval)?;
            let (model, kb) = commands::load_for_inference(&s, &c.graph_flags())?;
            let stdin = std::io::stdin();
            commands::chat(&model, &kb, s.eval.max_steps, &mut stdin.lock(), out)?;
        }
        Command::Serve { static_dir } => {
            let mut s = c.settings(CorpusRole::Eval)?;
            if static_dir.is_some() {
                s.serve.static_dir = static_dir;
            }
            let (model, kb) = commands::load_for_inference(&s, &c.graph_flags())?;
            let state = Arc::new(server::AppState {
                model,
                kb,
                max_steps: s.eval.max_steps,
            });
            let addr = format!("{}:{}", s.serve.host, s.serve.port);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Internal(e.to_string()))?;
            rt.block_on(server::serve(state, s.serve.static_dir.clone(), &addr))
                .map_err(|e| Error::io(addr.as_str(), e))?;
        }
        Command::MakeToy {
            train_size,
            heldout_size,
        } => {
            let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("data/toy"));
            let path = commands::make_toy(&dir, c.seed.unwrap_or(7), train_size, heldout_size)?;
            writeln!(out, "wrote {}", path.display()).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

/// The single line printed on failure.
pub fn error_line(e: &Error) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mkedg_cli::commands::make_toy;
use mkedg_cli::config::{CorpusRole, Overrides, Settings};

pub struct Toy {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Toy {
    /// Toy files with `n_train` dialogues and `epochs` training epochs.
    pub fn new(n_train: usize, epochs: usize) -> Toy {
        let dir = tempfile::tempdir().unwrap();
        let config = make_toy(dir.path(), 7, n_train, 6).unwrap();
        let text = std::fs::read_to_string(&config).unwrap();
        let text = text.replace("max_epochs = 300", &format!("max_epochs = {epochs}"));
        std::fs::write(&config, text).unwrap();
        Toy { dir, config }
    }

    /// Trained toy files.
    pub fn trained(n_train: usize, epochs: usize) -> Toy {
        let toy = Toy::new(n_train, epochs);
        mkedg_cli::commands::train(&toy.settings(), &mut Vec::new()).unwrap();
        toy
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn settings(&self) -> Settings {
        Settings::resolve(Some(&self.config), &Overrides::default(), CorpusRole::Train).unwrap()
    }

    pub fn run(&self, args: &[&str]) -> Output {
        mkedg(
            self.dir.path(),
            &[&["--config", self.config.to_str().unwrap()], args].concat(),
        )
    }
}

pub fn mkedg(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkedg"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

mod common;

use std::io::Cursor;

use common::*;
use mkedg_cli::commands;

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["train", "--no-such-flag"], &["generate"], &[]] {
        let o = mkedg(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains("Usage"), "{args:?}");
    }
}

fn single_error_line(o: &std::process::Output) -> serde_json::Value {
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with('{')).collect();
    assert_eq!(lines.len(), 1, "{err}");
    serde_json::from_str(lines[0]).unwrap()
}

#[test]
fn invalid_files_exit_one_with_a_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let v = single_error_line(&mkedg(dir.path(), &["train", "--config", "missing.toml"]));
    assert_eq!(v["error"]["kind"], "io");

    std::fs::write(dir.path().join("bad.toml"), "[train]\nbatch_size = \"many\"\n").unwrap();
    let v = single_error_line(&mkedg(dir.path(), &["train", "--config", "bad.toml"]));
    assert_eq!(v["error"]["kind"], "config");
    assert!(v["error"]["message"].as_str().unwrap().contains("bad.toml:2"));

    std::fs::write(dir.path().join("c.jsonl"), "{\"id\": 1}\n").unwrap();
    let v = single_error_line(&mkedg(dir.path(), &["train", "--corpus", "c.jsonl"]));
    assert_eq!(v["error"]["kind"], "parse");

    let v = single_error_line(&mkedg(
        dir.path(),
        &["generate", "--checkpoint", "none.bin", "--history", "hi"],
    ));
    assert_eq!(v["error"]["kind"], "io");
}

#[test]
fn training_twice_gives_identical_logs() {
    let toy = Toy::new(16, 3);
    let mut logs = Vec::new();
    for run in 0..2 {
        let log = format!("log{run}.csv");
        let o = toy.run(&["train", "--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::rename(toy.path("train_log.csv"), toy.path(&log)).unwrap();
        logs.push(std::fs::read_to_string(toy.path(&log)).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    assert!(logs[0].starts_with("step,lr,loss,loss_emo,loss_gen,val_loss\n"));
    let o = toy.run(&["train", "--seed", "8"]);
    assert!(o.status.success());
    assert_ne!(std::fs::read_to_string(toy.path("train_log.csv")).unwrap(), logs[0]);
}

#[test]
fn generate_prints_response_and_emotion() {
    let toy = Toy::trained(16, 3);
    let o = toy.run(&["generate", "--history", "i won the lottery"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    let emotion = lines[1].strip_prefix("emotion: ").unwrap();
    assert!(toy.settings().data.labels.unwrap().iter().any(|l| l == emotion));

    let o = toy.run(&["generate", "--history", "   "]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_overfit_checkpoint() {
    let toy = Toy::trained(16, 120);
    let o = toy.run(&["evaluate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert!(report["perplexity"].as_f64().unwrap() < 1.5);
    for k in ["distinct1", "distinct2", "distinct1_x100", "distinct2_x100"] {
        assert!(report[k].is_number(), "{k}");
    }
    assert_eq!(report["n_samples"], 16);

    let o = toy.run(&["evaluate", "--corpus", "heldout.jsonl", "--out", "held.json"]);
    assert!(o.status.success());
    let held: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(toy.path("held.json")).unwrap()).unwrap();
    assert_eq!(held["n_samples"], 6);
}

#[test]
fn graph_dump_and_knowledge_cache() {
    let toy = Toy::new(16, 1);
    let o = toy.run(&["graph-dump", "--index", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("digraph"));
    let o = toy.run(&[
        "graph-dump",
        "--history",
        "my dog",
        "--history",
        "oh no",
        "--caps-dialogue",
        "0",
    ]);
    assert!(!stdout(&o).contains("CONCEPT"));
    let o = toy.run(&["graph-dump", "--index", "999"]);
    assert_eq!(o.status.code(), Some(1));

    let o = toy.run(&["build-knowledge", "--out", "cache.jsonl", "--caps-token", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cache = std::fs::read_to_string(toy.path("cache.jsonl")).unwrap();
    let mut with_concepts = 0;
    for line in cache.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let n = v["concepts"].as_array().unwrap().len();
        assert!(n <= 2);
        with_concepts += (n > 0) as usize;
    }
    assert!(with_concepts > 0);
}

#[test]
fn sweep_and_ablate() {
    let toy = Toy::new(16, 2);
    let o = toy.run(&["sweep", "--caps", "0,4,8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("cap,accuracy\n0,"));

    let o = toy.run(&["ablate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for k in ["full", "no_mkce", "no_ecatm"] {
        assert!(v[k]["accuracy"].is_number(), "{k}");
    }
    let o = toy.run(&["ablate", "--variants", "full,bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn chat_session() {
    let toy = Toy::trained(16, 2);
    let s = toy.settings();
    let (model, kb) = commands::load_for_inference(&s, &Default::default()).unwrap();
    let mut input = Cursor::new("i won the lottery\n\n/reset\nthat is sad\n/quit\nignored\n");
    let mut out = Vec::new();
    commands::chat(&model, &kb, 30, &mut input, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let replies: Vec<&str> = text.lines().filter(|l| l.contains("] ")).collect();
    assert_eq!(replies.len(), 2, "{text}");
    assert!(text.contains("(history cleared)"));

    let single = commands::generate(&model, &kb, &["that is sad".into()], 30).unwrap();
    assert!(replies[1].ends_with(&single.response));
}

#[test]
fn make_toy_layout() {
    let dir = tempfile::tempdir().unwrap();
    let o = mkedg(dir.path(), &["make-toy", "--out", "t", "--train-size", "12"]);
    assert!(o.status.success());
    for f in [
        "train.jsonl",
        "heldout.jsonl",
        "labels.txt",
        "vad.tsv",
        "tuples.tsv",
        "embeddings.txt",
        "stopwords.txt",
        "toy.toml",
    ] {
        assert!(dir.path().join("t").join(f).is_file(), "{f}");
    }
    assert_eq!(
        std::fs::read_to_string(dir.path().join("t/train.jsonl"))
            .unwrap()
            .lines()
            .count(),
        12
    );
}

//! End-to-end runs of the binary on a small generated dataset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hoptrace::reasoner::TraceExport;
use hoptrace::training::{Checkpoint, LogRecord};

const SPEC: &str = "movies = 30\npeople = 40\nquestions_per_hop = 200\nseed = 5\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hoptrace"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn workspace(form: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.toml"), SPEC).unwrap();
    ok(&["gen", "--out", "data", "--spec", "spec.toml", "--form", form], dir.path());
    dir
}

const TRAIN: [&str; 8] = ["train", "--data", "data", "--epochs", "2", "--dim", "8", "--log"];

#[test]
fn gen_is_byte_identical_and_guards_existing_output() {
    let dir = workspace("text");
    let root = dir.path();
    ok(&["gen", "--out", "again", "--spec", "spec.toml", "--form", "text"], root);
    let (a, b) = (tree(&root.join("data")), tree(&root.join("again")));
    assert_eq!(a, b);
    assert!(a.contains_key(Path::new("corpus.jsonl")));
    assert!(a.contains_key(Path::new("2-hop/qa_test.hop")));

    let manifest: serde_json::Value = serde_json::from_slice(&a[Path::new("manifest.json")]).unwrap();
    for hop in ["1", "2", "3"] {
        assert!(manifest["questions"][hop]["train"].as_u64().unwrap() > 0);
    }

    let refused = run(&["gen", "--out", "data", "--spec", "spec.toml"], root);
    assert_eq!(refused.status.code(), Some(1));
    ok(&["gen", "--out", "data", "--spec", "spec.toml", "--force"], root);
    let relabelled = tree(&root.join("data"));
    assert!(!relabelled.contains_key(Path::new("corpus.jsonl")), "label form has no corpus");
    assert_eq!(relabelled[Path::new("kb.tsv")], a[Path::new("kb.tsv")]);
}

#[test]
fn train_eval_answer_round_trip() {
    let dir = workspace("label");
    let root = dir.path();
    let mut args = TRAIN.to_vec();
    args.extend(["log.jsonl", "--checkpoint", "a.ckpt"]);
    let summary: serde_json::Value = serde_json::from_str(&ok(&args, root)).unwrap();
    assert!(summary["dev"]["hits1_per_hop"]["2"].is_number());
    assert_eq!(summary["run"]["train"]["epochs"], 2);

    let log = std::fs::read_to_string(root.join("log.jsonl")).unwrap();
    let mut lines = log.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["run"]["model"]["dim"], 8);
    let records: Vec<LogRecord> = lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    assert!(records.iter().filter(|r| r.split == "dev").all(|r| r.hits1_per_hop.len() == 3));

    // Same configuration and seed: same bytes.
    let mut again = TRAIN.to_vec();
    again.extend(["log2.jsonl", "--checkpoint", "b.ckpt"]);
    ok(&again, root);
    let ckpt_a = std::fs::read(root.join("a.ckpt")).unwrap();
    let ckpt_b = std::fs::read(root.join("b.ckpt")).unwrap();
    assert_ne!(ckpt_a.len(), 0);
    let meta_a = Checkpoint::from_bytes(&ckpt_a).unwrap().meta;
    assert_eq!(meta_a.run.as_ref().unwrap()["train"]["epochs"], 2);
    // The echoed run configuration names its own checkpoint and log.
    let strip = |bytes: &[u8]| {
        let mut c = Checkpoint::from_bytes(bytes).unwrap();
        c.meta.run = None;
        c.to_bytes().unwrap()
    };
    assert_eq!(strip(&ckpt_a), strip(&ckpt_b));

    let eval = ["eval", "--checkpoint", "a.ckpt", "--split", "test", "--out", "metrics.json"];
    let first = ok(&eval, root);
    assert_eq!(first, ok(&eval, root));
    let metrics: serde_json::Value = serde_json::from_str(&first).unwrap();
    let hits = metrics["metrics"]["hits1"].as_f64().unwrap();
    assert!(metrics["metrics"]["hits1_per_hop"]["3"].is_number());
    assert_eq!(metrics["run"]["model"]["dim"], 8);
    assert_eq!(std::fs::read_to_string(root.join("metrics.json")).unwrap().trim(), first.trim());

    let require_code = run(&["eval", "--checkpoint", "a.ckpt", "--require", "1.0"], root).status.code();
    assert_eq!(require_code, Some(if hits < 1.0 { 4 } else { 0 }));
    assert_eq!(run(&["eval", "--checkpoint", "a.ckpt", "--require", "0.0"], root).status.code(), Some(0));

    let question = std::fs::read_to_string(root.join("data/2-hop/qa_test.txt")).unwrap();
    let question = question.lines().next().unwrap().split('\t').next().unwrap().to_string();
    let printed = ok(
        &["answer", "--checkpoint", "a.ckpt", &question, "--trace", "t.json", "--dot", "t.dot"],
        root,
    );
    assert!(!printed.trim().is_empty());
    let raw = std::fs::read_to_string(root.join("t.json")).unwrap();
    let trace: TraceExport = serde_json::from_str(&raw).unwrap();
    assert_eq!(trace.steps.len(), 3);
    for s in &trace.steps {
        assert!((s.word_attention.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
    let with_run: serde_json::Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(with_run["run"]["model"]["steps"], 3);

    let dot = std::fs::read_to_string(root.join("t.dot")).unwrap();
    assert!(dot.contains("digraph trace"));
    for s in &trace.steps {
        for (entity, score) in &s.entity_scores {
            if *score > 0.8 {
                assert!(dot.contains(&format!("label=\"{entity}\", color=red")), "{entity} not highlighted");
            }
        }
    }
    for topic in &trace.topic {
        assert!(dot.contains(&format!("label=\"{topic}\", color=red, style=bold")));
    }
}

#[test]
fn text_form_trains_with_mask_flags() {
    let dir = workspace("text");
    let root = dir.path();
    let out = ok(
        &[
            "train", "--data", "data", "--form", "text", "--epochs", "1", "--dim", "6", "--no-mask",
            "--no-aux", "--no-truncation", "--limit-train", "0.1", "--checkpoint", "t.ckpt",
        ],
        root,
    );
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["run"]["model"]["use_mask"], false);
    assert_eq!(summary["run"]["model"]["use_truncation"], false);
    assert_eq!(summary["run"]["train"]["use_aux_hop_loss"], false);
    assert_eq!(summary["run"]["train"]["limit_train"], 0.1);
    let meta = Checkpoint::load(&root.join("t.ckpt")).unwrap().meta;
    assert!(meta.blocks.iter().all(|b| !b.name.starts_with("mask")));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = workspace("label");
    let root = dir.path();
    std::fs::write(
        root.join("run.toml"),
        "data_dir = \"data\"\ncheckpoint = \"c.ckpt\"\n[model]\ndim = 6\nsteps = 2\n[train]\nepochs = 3\nseed = 9\n",
    )
    .unwrap();
    let out = ok(&["train", "--config", "run.toml", "--epochs", "1"], root);
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["run"]["train"]["epochs"], 1);
    assert_eq!(summary["run"]["train"]["seed"], 9);
    assert_eq!(summary["run"]["model"]["dim"], 6);
    assert!(root.join("c.ckpt").exists());
}

#[test]
fn exit_codes() {
    let dir = workspace("label");
    let root = dir.path();
    assert_eq!(run(&["frobnicate"], root).status.code(), Some(1));
    assert_eq!(run(&["train", "--epochs", "many"], root).status.code(), Some(1));
    assert_eq!(run(&["eval", "--checkpoint", "missing.ckpt"], root).status.code(), Some(2));
    assert_eq!(run(&["train", "--data", "nowhere"], root).status.code(), Some(2));
    std::fs::write(root.join("bad.toml"), "[train]\nepochs = \"x\"\n").unwrap();
    assert_eq!(run(&["train", "--config", "bad.toml"], root).status.code(), Some(1));

    std::fs::write(root.join("data/kb.tsv"), "only\ttwo\n").unwrap();
    assert_eq!(run(&["train", "--data", "data"], root).status.code(), Some(2));
    assert_eq!(run(&["--help"], root).status.code(), Some(0));
}

#[test]
fn diverging_training_exits_with_numeric_failure() {
    let dir = workspace("label");
    let out = run(
        &["train", "--data", "data", "--epochs", "1", "--dim", "4", "--lr", "1e300", "--checkpoint", "x.ckpt"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

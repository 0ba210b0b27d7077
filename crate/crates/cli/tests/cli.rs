use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cjtvae::commands::{evaluate, read_records};
use cjtvae::{EvalRecord, Status};
use cjtvae_core::chem::{parse_smiles, synthetic_property};
use cjtvae_core::corpus::generate_corpus;
use serde_json::json;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cjtvae"));
    c.env("RUST_LOG", "warn").env_remove("CJTVAE_THREADS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// A workspace with a corpus and a run configuration.
fn workspace(corpus: &[String], train: serde_json::Value) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("corpus.smi"), corpus.join("\n") + "\n").unwrap();
    let cfg = json!({
        "corpus": "corpus.smi",
        "scores": "data/scores.tsv",
        "vocabulary": "data/vocab.txt",
        "checkpoints": "ckpt",
        "output": "out",
        "properties": [{"name": "size", "oracle": "synthetic"}],
        "checkpoint_every": 4,
        "train": train,
    });
    fs::write(
        dir.path().join("run.json"),
        serde_json::to_string_pretty(&cfg).unwrap(),
    )
    .unwrap();
    dir
}

fn tiny_train() -> serde_json::Value {
    json!({"hidden": 12, "latent": 6, "extractor_steps": 12, "vae_steps": 12, "epochs": 2, "batch_size": 4,
           "eval_every": 4, "max_nodes": 15, "threads": 1})
}

fn strings(s: &[&str]) -> Vec<String> {
    s.iter().map(|x| x.to_string()).collect()
}

fn prepared(n: usize) -> TempDir {
    let dir = workspace(&generate_corpus(n, 5, 6, 20), tiny_train());
    ok(dir.path(), &["preprocess", "--config", "run.json"]);
    ok(dir.path(), &["vocab", "--config", "run.json"]);
    dir
}

#[test]
fn preprocess_writes_a_normalized_column() {
    let dir = workspace(
        &strings(&["CCO", "c1ccccc1", "CC(=O)Oc1ccccc1C(=O)O"]),
        json!({}),
    );
    ok(dir.path(), &["preprocess", "--config", "run.json"]);
    let tsv = fs::read_to_string(dir.path().join("data/scores.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "smiles\tsize");
    assert_eq!(lines.len(), 4);
    let vals: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(vals.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
    assert_eq!(vals.iter().cloned().fold(0.0, f64::max), 1.0);
}

#[test]
fn tied_column_is_all_zero_with_a_warning() {
    let dir = workspace(&strings(&["CCO", "CCN", "CCC"]), json!({}));
    let out = bin()
        .current_dir(dir.path())
        .args(["preprocess", "--config", "run.json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("degenerate"));
    let tsv = fs::read_to_string(dir.path().join("data/scores.tsv")).unwrap();
    assert!(tsv.lines().skip(1).all(|l| l.ends_with("\t0.0")), "{tsv}");
}

#[test]
fn empty_or_unusable_corpus_exits_2() {
    let dir = workspace(&strings(&["xyz", "C1CC"]), json!({}));
    assert_eq!(
        code(&run(dir.path(), &["preprocess", "--config", "run.json"])),
        2
    );
    assert_eq!(
        code(&run(dir.path(), &["vocab", "--config", "run.json"])),
        2
    );
}

#[test]
fn vocabulary_file_is_order_independent() {
    let dir = workspace(&strings(&["CC"]), json!({}));
    ok(dir.path(), &["vocab", "--config", "run.json"]);
    assert_eq!(
        fs::read_to_string(dir.path().join("data/vocab.txt")).unwrap(),
        "CC\n"
    );

    let mut corpus = generate_corpus(40, 2, 6, 20);
    corpus.push("not a molecule".into());
    let a = workspace(&corpus, json!({}));
    corpus.reverse();
    let b = workspace(&corpus, json!({}));
    let sa = ok(a.path(), &["vocab", "--config", "run.json"]);
    ok(b.path(), &["vocab", "--config", "run.json"]);
    assert!(sa.contains("1 skipped"), "{sa}");
    assert_eq!(
        fs::read(a.path().join("data/vocab.txt")).unwrap(),
        fs::read(b.path().join("data/vocab.txt")).unwrap()
    );
}

#[test]
fn invalid_configuration_exits_2() {
    let dir = workspace(&strings(&["CCO"]), json!({"batch_size": 0}));
    assert_eq!(
        code(&run(dir.path(), &["preprocess", "--config", "run.json"])),
        2
    );
    let dir = workspace(&strings(&["CCO"]), json!({"prop_dim": 2}));
    assert_eq!(
        code(&run(dir.path(), &["vocab", "--config", "run.json"])),
        2
    );
    let dir = workspace(&strings(&["CCO"]), json!({"lambda": -1.0}));
    assert_eq!(
        code(&run(dir.path(), &["train", "--config", "run.json"])),
        2
    );
    assert_eq!(
        code(&run(dir.path(), &["train", "--config", "missing.json"])),
        2
    );
}

#[test]
fn stage_flag_trains_a_single_stage() {
    let dir = prepared(30);
    ok(
        dir.path(),
        &["train", "--config", "run.json", "--stage", "extractor"],
    );
    let ckpts: Vec<_> = fs::read_dir(dir.path().join("ckpt"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(ckpts, vec!["extractor.ckpt"]);
    // the joint stage needs the VAE checkpoint
    assert_eq!(
        code(&run(
            dir.path(),
            &["train", "--config", "run.json", "--stage", "joint"]
        )),
        2
    );
}

fn logs(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["ckpt", "out"] {
        let mut entries: Vec<_> = fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            out.push((
                p.strip_prefix(dir).unwrap().to_path_buf(),
                fs::read(&p).unwrap(),
            ));
        }
    }
    out
}

#[test]
fn interrupted_training_resumes_bit_identically() {
    let full = prepared(30);
    ok(full.path(), &["train", "--config", "run.json"]);

    let parts = prepared(30);
    ok(
        parts.path(),
        &["train", "--config", "run.json", "--stage", "extractor"],
    );
    ok(
        parts.path(),
        &["train", "--config", "run.json", "--stage", "vae"],
    );
    // roll the VAE back to its step-4 checkpoint, as after a kill
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(parts.path().join("run.json")).unwrap()).unwrap();
    let mut short = cfg.clone();
    // same two-step KL ramp as the full schedule
    short["train"]["vae_steps"] = json!(4);
    short["train"]["kl_warmup"] = json!(0.5);
    let p = parts.path();
    fs::remove_file(p.join("ckpt/vae.ckpt")).unwrap();
    fs::write(p.join("short.json"), short.to_string()).unwrap();
    ok(p, &["train", "--config", "short.json", "--stage", "vae"]);
    ok(p, &["train", "--config", "run.json", "--stage", "vae"]);
    ok(p, &["train", "--config", "run.json", "--stage", "joint"]);
    // a finished run is a no-op
    ok(p, &["train", "--config", "run.json"]);
    assert_eq!(logs(full.path()), logs(parts.path()));
}

#[test]
fn checkpoint_from_another_vocabulary_is_rejected() {
    let dir = prepared(30);
    ok(dir.path(), &["train", "--config", "run.json"]);
    fs::write(dir.path().join("data/vocab.txt"), "CC\nCO\n").unwrap();
    let out = run(
        dir.path(),
        &["generate", "--config", "run.json", "--target-c", "1"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
}

#[test]
fn generate_records_and_evaluates() {
    let dir = prepared(40);
    ok(dir.path(), &["train", "--config", "run.json"]);
    let p = dir.path();
    assert_eq!(
        code(&run(
            p,
            &["generate", "--config", "run.json", "--target-c", "1,0"]
        )),
        2
    );
    assert_eq!(
        code(&run(
            p,
            &["generate", "--config", "run.json", "--target-c", "1.5"]
        )),
        2
    );

    fs::write(p.join("inputs.smi"), "CCOc1ccccc1\nc1ccncc1\nnot smiles\n").unwrap();
    let args = [
        "generate",
        "--config",
        "run.json",
        "--target-c",
        "1",
        "--input",
        "inputs.smi",
    ];
    ok(p, &args);
    let first = fs::read(p.join("out/generated.jsonl")).unwrap();
    ok(p, &args);
    assert_eq!(fs::read(p.join("out/generated.jsonl")).unwrap(), first);

    let records = read_records(&p.join("out/generated.jsonl")).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(records[2].status, Status::InvalidInput);
    for r in &records {
        assert_eq!(r.target, vec![1.0]);
        if let Some(out) = &r.output {
            let s = r.similarity.unwrap();
            assert!((0.0..=1.0).contains(&s));
            let before = synthetic_property(&parse_smiles(&r.input).unwrap());
            let after = synthetic_property(&parse_smiles(out).unwrap());
            assert_eq!(r.before[0], Some(before));
            assert_eq!(r.after[0], Some(after));
            assert_eq!(r.improvement[0], Some(after - before));
        }
    }
    let decoded = records.iter().filter(|r| r.output.is_some()).count();
    if decoded > 0 {
        let table = ok(p, &["evaluate", "--config", "run.json"]);
        assert!(
            table.starts_with("property, similarity, improvement\nsize, "),
            "{table}"
        );
        let csv = fs::read_to_string(p.join("out/scatter.csv")).unwrap();
        assert_eq!(csv.lines().count(), decoded + 1);
    }
    // default input is the held-out split
    ok(
        p,
        &["generate", "--config", "run.json", "--target-c", "0.5"],
    );
}

fn record(input: &str, output: Option<&str>, sim: f64, impr: f64) -> EvalRecord {
    EvalRecord {
        input: input.into(),
        output: output.map(String::from),
        status: if output.is_some() {
            Status::Ok
        } else {
            Status::AssemblyFailed
        },
        target: vec![1.0],
        similarity: output.map(|_| sim),
        properties: vec!["drd2".into()],
        before: vec![Some(0.1)],
        after: vec![output.map(|_| 0.1 + impr)],
        improvement: vec![output.map(|_| impr)],
        tree_nodes: 3,
    }
}

fn write_records(dir: &Path, recs: &[EvalRecord]) -> PathBuf {
    let p = dir.join("records.jsonl");
    fs::write(
        &p,
        recs.iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect::<String>(),
    )
    .unwrap();
    p
}

#[test]
fn evaluate_summaries() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("scatter.csv");
    let p = write_records(
        dir.path(),
        &[
            record("CCO", Some("CCO"), 1.0, 0.0),
            record("CCN", Some("CCN"), 1.0, 0.0),
        ],
    );
    let s = evaluate(&p, &out).unwrap();
    assert_eq!(
        s.table(),
        "property, similarity, improvement\ndrd2, 1.000, 0.000\n"
    );

    let p = write_records(dir.path(), &[record("CCO", Some("CCCO"), 0.635, 0.071)]);
    let s = evaluate(&p, &out).unwrap();
    assert_eq!(
        (s.rows[0].similarity, s.rows[0].improvement),
        (0.635, 0.071)
    );
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "similarity,improvement\n0.635,0.071\n"
    );

    let p = write_records(
        dir.path(),
        &[
            record("CCO", Some("CCCO"), 0.5, 0.2),
            record("CCN", None, 0.0, 0.0),
        ],
    );
    let s = evaluate(&p, &out).unwrap();
    assert_eq!((s.records, s.failed, s.rows[0].n), (2, 1, 1));

    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let o = bin()
        .args(["evaluate", "--records"])
        .arg(dir.path().join("empty.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn thread_count_does_not_change_results() {
    let a = prepared(30);
    let b = prepared(30);
    ok(a.path(), &["train", "--config", "run.json"]);
    let out = bin()
        .current_dir(b.path())
        .env("CJTVAE_THREADS", "3")
        .args(["train", "--config", "run.json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(logs(a.path()), logs(b.path()));
    let bad = bin()
        .current_dir(b.path())
        .env("CJTVAE_THREADS", "many")
        .args(["train", "--config", "run.json"])
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn numeric_fault_exits_3_without_a_corrupt_checkpoint() {
    let mut train = tiny_train();
    train["lr_extractor"] = json!(1e300);
    let dir = workspace(&generate_corpus(30, 5, 6, 20), train);
    let p = dir.path();
    ok(p, &["preprocess", "--config", "run.json"]);
    ok(p, &["vocab", "--config", "run.json"]);
    let out = run(
        p,
        &["train", "--config", "run.json", "--stage", "extractor"],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = p.join("ckpt/extractor.ckpt");
    if ckpt.exists() {
        assert!(cjtvae_core::nn::load_checkpoint(&ckpt)
            .unwrap()
            .all_finite());
    }
}

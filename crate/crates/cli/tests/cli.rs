use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{"k": 10, "filter_epochs": 2, "gcn_epochs": 3, "gcn_batch": 32,
  "synthetic": {"classes": 4, "per_class": 15, "dim": 12, "noise_sigma": 0.2, "seed": 1}}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cleangraph"))
        .current_dir(dir)
        .args(["--config", "cfg.json", "--threads", "1"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    dir
}

#[test]
fn stage_chain_produces_every_artifact() {
    let w = workspace();
    let d = w.path();
    ok(d, &["--out", "train", "--seed", "2", "synth"]);
    ok(d, &["--out", "train", "knn", "--features", "train/features.bin"]);
    ok(d, &["--out", "train", "rerank", "--knn", "train/knn.tsv"]);
    ok(
        d,
        &[
            "--out", "train", "train-filter", "--rankings", "train/rankings.tsv", "--features",
            "train/features.bin", "--labels", "train/labels.txt",
        ],
    );
    ok(
        d,
        &[
            "--out", "train", "discover", "--model", "train/filter.ckpt", "--rankings",
            "train/rankings.tsv", "--features", "train/features.bin",
        ],
    );
    ok(
        d,
        &["--out", "train", "build-graph", "--mode", "adaptive", "--rankings", "train/discovered.tsv"],
    );
    ok(
        d,
        &[
            "--out", "train", "train-gcn", "--graph", "train/graph.tsv", "--features",
            "train/features.bin", "--labels", "train/labels.txt",
        ],
    );
    ok(d, &["--out", "test", "synth"]);
    ok(d, &["--out", "test", "knn", "--features", "test/features.bin"]);
    ok(d, &["--out", "test", "rerank", "--knn", "test/knn.tsv"]);
    ok(
        d,
        &[
            "--out", "test", "discover", "--model", "train/filter.ckpt", "--rankings",
            "test/rankings.tsv", "--features", "test/features.bin",
        ],
    );
    ok(
        d,
        &["--out", "test", "build-graph", "--mode", "adaptive", "--rankings", "test/discovered.tsv"],
    );
    ok(
        d,
        &[
            "--out", "test", "embed", "--model", "train/gcn.ckpt", "--graph", "test/graph.tsv",
            "--features", "test/features.bin",
        ],
    );
    ok(
        d,
        &["--out", "test", "cluster", "--graph", "test/graph.tsv", "--embeddings", "test/embeddings.bin"],
    );
    let report = ok(
        d,
        &[
            "--out", "test", "eval", "--pred", "test/clusters.txt", "--truth", "test/labels.txt",
            "--graph", "test/graph.tsv", "--embeddings", "test/embeddings.bin", "--roc-pairs", "200",
            "--rankings", "test/rankings.tsv", "--k-hat", "test/k_hat.txt",
        ],
    );
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    for key in ["pairwise", "bcubed", "snr", "q_before", "q_after", "roc"] {
        assert!(!json[key].is_null(), "report lacks {key}");
    }
    for f in ["filter.ckpt", "filter_log.jsonl", "gcn.ckpt", "gcn_log.jsonl", "run_log.jsonl"] {
        assert!(d.join("train").join(f).exists(), "missing train/{f}");
    }
    for f in ["embeddings.bin", "clusters.txt", "report.json", "roc.tsv", "k_hat.txt"] {
        assert!(d.join("test").join(f).exists(), "missing test/{f}");
    }
    let log = fs::read_to_string(d.join("train/run_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 7);
    let seeds: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, vec![2, 1, 1, 1, 1, 1, 1]);
    assert!(!d.join("test/.cleangraph.lock").exists());
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let w = workspace();
    let d = w.path();
    ok(d, &["--out", "a", "--seed", "7", "synth"]);
    ok(d, &["--out", "b", "--seed", "7", "synth"]);
    ok(d, &["--out", "c", "--seed", "8", "synth"]);
    let a = fs::read(d.join("a/features.bin")).unwrap();
    assert_eq!(a, fs::read(d.join("b/features.bin")).unwrap());
    assert_ne!(a, fs::read(d.join("c/features.bin")).unwrap());
    assert_eq!(
        fs::read(d.join("a/labels.txt")).unwrap(),
        fs::read(d.join("b/labels.txt")).unwrap()
    );
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let w = workspace();
    let d = w.path();
    ok(d, &["--out", "s", "synth"]);
    let out = ok(d, &["--out", "s", "eval", "--pred", "s/labels.txt", "--truth", "s/labels.txt"]);
    let json: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(json["pairwise"]["f"], 1.0);
    assert_eq!(json["bcubed"]["f"], 1.0);
    assert_eq!(json["num_clusters"], 4);
}

#[test]
fn graph_cut_mode_needs_no_embeddings() {
    let w = workspace();
    let d = w.path();
    ok(d, &["--out", "s", "synth"]);
    ok(d, &["--out", "s", "knn", "--features", "s/features.bin"]);
    ok(d, &["--out", "s", "rerank", "--knn", "s/knn.tsv"]);
    ok(d, &["--out", "s", "build-graph", "--mode", "adaptive", "--rankings", "s/rankings.tsv"]);
    ok(
        d,
        &["--out", "s", "cluster", "--graph", "s/graph.tsv", "--graph-cut", "0.5", "--vertices", "60"],
    );
    let ids = fs::read_to_string(d.join("s/clusters.txt")).unwrap();
    assert_eq!(ids.lines().count(), 60);
}

#[test]
fn usage_errors_exit_two() {
    let w = workspace();
    assert_eq!(run(w.path(), &["bogus"]).status.code(), Some(2));
    assert_eq!(run(w.path(), &["knn"]).status.code(), Some(2));
    fs::write(w.path().join("cfg.json"), r#"{"k": 0}"#).unwrap();
    assert_eq!(run(w.path(), &["synth"]).status.code(), Some(2));
    fs::write(w.path().join("cfg.json"), r#"{"eta": 2.0}"#).unwrap();
    assert_eq!(run(w.path(), &["synth"]).status.code(), Some(2));
}

#[test]
fn missing_or_corrupt_input_exits_three() {
    let w = workspace();
    let d = w.path();
    assert_eq!(run(d, &["knn", "--features", "nope.bin"]).status.code(), Some(3));
    fs::write(d.join("junk.bin"), b"ANFTgarbage").unwrap();
    assert_eq!(run(d, &["knn", "--features", "junk.bin"]).status.code(), Some(3));
}

#[test]
fn held_lock_refuses_a_second_writer() {
    let w = workspace();
    let d = w.path();
    fs::create_dir(d.join("o")).unwrap();
    fs::write(d.join("o/.cleangraph.lock"), "").unwrap();
    let o = run(d, &["--out", "o", "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!d.join("o/features.bin").exists());
    fs::remove_file(d.join("o/.cleangraph.lock")).unwrap();
    ok(d, &["--out", "o", "synth"]);
    assert!(d.join("o/features.bin").exists());
}

#[test]
fn pipeline_subcommand_is_deterministic() {
    let w = workspace();
    let d = w.path();
    let a = ok(d, &["--out", "a", "pipeline"]);
    let b = ok(d, &["--out", "b", "pipeline"]);
    assert_eq!(a, b);
    for f in ["round1_gcn.ckpt", "round1_clusters.txt", "round1_embeddings.bin", "report.json"] {
        assert_eq!(
            fs::read(d.join("a").join(f)).unwrap(),
            fs::read(d.join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

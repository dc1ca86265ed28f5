//! End-to-end runs and the bookkeeping shared by the command-line stages.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{graph_cut_baseline, link_pairs, union_find_merge, ClusterAssignment};
use crate::config::PipelineConfig;
use crate::data::{generate_synthetic, save_features, save_labels, write_atomic, FeatureMatrix, LabelVector};
use crate::discovery::{
    build_training_sequences, discover_neighbors, quality_curves, train_filter, EpochLoss, FilterModel,
};
use crate::error::{Error, Result};
use crate::gcn::{embed, train_gcn, GcnModel};
use crate::graph::{build_graph, perturb_training_graph, snr, AdjacencyGraph};
use crate::knn::{build_knn, NeighborList};
use crate::metrics::{q_summary, roc_points, MetricsReport};
use crate::structspace::{rerank_candidates, StructureRanking};

/// Feature rows with their ground-truth identities.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: FeatureMatrix,
    pub labels: LabelVector,
}

/// Training split (seed + 1) and test split (seed) of the configured generator.
/// Different seeds give disjoint identity centers.
pub fn synthetic_splits(config: &PipelineConfig) -> Result<(Split, Split)> {
    let make = |seed: u64| -> Result<Split> {
        let mut spec = config.synthetic;
        spec.seed = seed;
        let (features, labels) = generate_synthetic(&spec)?;
        Ok(Split { features, labels })
    };
    Ok((make(config.seed.wrapping_add(1))?, make(config.seed)?))
}

/// kNN lists and the candidate rankings (structure space or plain cosine order).
pub fn candidate_rankings(
    features: &FeatureMatrix,
    config: &PipelineConfig,
) -> Result<(Vec<NeighborList>, Vec<StructureRanking>)> {
    let knn = build_knn(features, config.k)?;
    let rankings = if config.structure_space {
        rerank_candidates(&knn, config.eta, config.k)?
    } else {
        knn.iter().map(StructureRanking::from_knn).collect()
    };
    Ok((knn, rankings))
}

/// Graph of one split: discovered neighbours when `filter` is given,
/// otherwise the full candidate lists. Returns the kept lengths too.
pub fn split_graph(
    features: &FeatureMatrix,
    rankings: &[StructureRanking],
    filter: Option<&FilterModel<f32>>,
) -> Result<(AdjacencyGraph, Vec<usize>)> {
    match filter {
        Some(model) => {
            let (kept, k_hats) = discover_neighbors(model, rankings, features)?;
            Ok((build_graph(&kept)?, k_hats))
        }
        None => {
            let lens = rankings.iter().map(|r| r.len()).collect();
            Ok((build_graph(rankings)?, lens))
        }
    }
}

/// Everything one clustering round produces.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub filter: Option<FilterModel<f32>>,
    pub filter_log: Vec<EpochLoss>,
    pub gcn: GcnModel<f32>,
    pub gcn_log: Vec<EpochLoss>,
    pub train_graph: AdjacencyGraph,
    pub test_knn: Vec<NeighborList>,
    pub test_rankings: Vec<StructureRanking>,
    pub k_hats: Vec<usize>,
    pub test_graph: AdjacencyGraph,
    pub train_embeddings: FeatureMatrix,
    pub embeddings: FeatureMatrix,
    pub clusters: ClusterAssignment,
    pub report: MetricsReport,
}

/// Trains the filter and GCN on `train`, then clusters `test` linking at `theta`.
pub fn run_round(train: &Split, test: &Split, config: &PipelineConfig, theta: f64) -> Result<RoundOutput> {
    let (_, train_rankings) = candidate_rankings(&train.features, config)?;
    let (filter, filter_log) = if config.adaptive_graph {
        let (seqs, _) = build_training_sequences(&train_rankings, &train.features, &train.labels, config.beta)?;
        let (model, log) = train_filter(&seqs, config)?;
        (Some(model), log)
    } else {
        (None, Vec::new())
    };
    let (train_graph, _) = split_graph(&train.features, &train_rankings, filter.as_ref())?;
    let train_graph = perturb_training_graph(&train_graph, config.noise_rate, config.seed)?;
    let (gcn, gcn_log) = train_gcn(&train_graph, &train.features, &train.labels, config)?;
    let train_embeddings = embed(&gcn, &train_graph, &train.features)?;

    let (test_knn, test_rankings) = candidate_rankings(&test.features, config)?;
    let (test_graph, k_hats) = split_graph(&test.features, &test_rankings, filter.as_ref())?;
    let embeddings = embed(&gcn, &test_graph, &test.features)?;
    let links = link_pairs(&embeddings, &test_graph, theta)?;
    let clusters = union_find_merge(test.features.n(), &links)?;

    let mut report = MetricsReport::clustering(&clusters, &test.labels)?;
    report.snr = Some(snr(&test_graph, &test.labels)?);
    let curves = quality_curves(&test_rankings, &test.labels, config.beta)?;
    let q = q_summary(&curves, &k_hats)?;
    report.q_before = Some(q.q_before);
    report.q_after = Some(q.q_after);
    if config.roc_pairs > 0 {
        report.roc = Some(roc_points(&embeddings, &test.labels, config.roc_pairs, config.seed)?);
    }
    Ok(RoundOutput {
        filter,
        filter_log,
        gcn,
        gcn_log,
        train_graph,
        test_knn,
        test_rankings,
        k_hats,
        test_graph,
        train_embeddings,
        embeddings,
        clusters,
        report,
    })
}

/// Graph-cut clustering of a round's test graph, no GCN involved.
pub fn graph_cut_report(round: &RoundOutput, test: &Split, theta: f64) -> Result<MetricsReport> {
    let clusters = graph_cut_baseline(&round.test_graph, theta)?;
    let mut report = MetricsReport::clustering(&clusters, &test.labels)?;
    report.snr = Some(snr(&round.test_graph, &test.labels)?);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub train: Split,
    pub test: Split,
    pub rounds: Vec<RoundOutput>,
}

impl PipelineRun {
    pub fn final_report(&self) -> &MetricsReport {
        &self.rounds.last().expect("at least one round").report
    }
}

/// Runs one or two rounds on the given splits. The second round clusters the
/// first round's graph embeddings with `theta_second_round`.
pub fn run_pipeline_on(train: Split, test: Split, config: &PipelineConfig, rounds: usize) -> Result<PipelineRun> {
    config.validate()?;
    if !(1..=2).contains(&rounds) {
        return Err(Error::Config(format!("rounds must be 1 or 2, got {rounds}")));
    }
    let first = run_round(&train, &test, config, config.theta)?;
    let mut out = vec![first];
    if rounds == 2 {
        let prev = &out[0];
        let train2 = Split {
            features: prev.train_embeddings.clone(),
            labels: train.labels.clone(),
        };
        let test2 = Split {
            features: prev.embeddings.clone(),
            labels: test.labels.clone(),
        };
        out.push(run_round(&train2, &test2, config, config.theta_second_round)?);
    }
    Ok(PipelineRun {
        train,
        test,
        rounds: out,
    })
}

/// [`run_pipeline_on`] with the synthetic splits of `config`.
pub fn run_pipeline(config: &PipelineConfig, rounds: usize) -> Result<PipelineRun> {
    config.validate()?;
    let (train, test) = synthetic_splits(config)?;
    run_pipeline_on(train, test, config, rounds)
}

/// One entry of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_ms: u64,
}

pub const RUN_LOG: &str = "run_log.jsonl";
pub const LOCK_FILE: &str = ".cleangraph.lock";

/// Appends `manifest` as one JSON line to the run log in `dir`.
pub fn append_manifest(dir: &Path, manifest: &StageManifest) -> Result<()> {
    let path = dir.join(RUN_LOG);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let line = serde_json::to_string(manifest).expect("manifest serializes");
    writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Parameter(format!(
                "{} is in use by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Runs `body` as stage `name`, timing it and logging a manifest in `dir`.
pub fn run_stage<F>(
    name: &str,
    config: &PipelineConfig,
    dir: &Path,
    inputs: &[PathBuf],
    body: F,
) -> Result<StageManifest>
where
    F: FnOnce() -> Result<Vec<PathBuf>>,
{
    config.validate()?;
    for p in inputs {
        if !p.exists() {
            return Err(Error::Io {
                path: p.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing stage input"),
            });
        }
    }
    let start = Instant::now();
    let outputs = body()?;
    let manifest = StageManifest {
        stage: name.to_string(),
        inputs: inputs.to_vec(),
        outputs,
        config_hash: config.hash(),
        seed: config.seed,
        wall_time_ms: start.elapsed().as_millis() as u64,
    };
    append_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn log_to_jsonl(log: &[EpochLoss]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("loss serializes") + "\n")
        .collect()
}

/// Writes every artifact of `run` under `dir`; returns the written paths.
/// Round `r` files carry the prefix `round{r}_`.
pub fn write_run(run: &PipelineRun, config: &PipelineConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    put("config.json".into(), config.to_json().into_bytes())?;
    put("train_features.bin".into(), crate::data::encode_features(&run.train.features))?;
    put("train_labels.txt".into(), crate::data::format_ids(run.train.labels.as_slice()).into_bytes())?;
    put("test_features.bin".into(), crate::data::encode_features(&run.test.features))?;
    put("test_labels.txt".into(), crate::data::format_ids(run.test.labels.as_slice()).into_bytes())?;
    for (r, round) in run.rounds.iter().enumerate() {
        let pre = format!("round{}_", r + 1);
        if let Some(f) = &round.filter {
            put(format!("{pre}filter.ckpt"), f.to_checkpoint().encode())?;
            put(format!("{pre}filter_log.jsonl"), log_to_jsonl(&round.filter_log).into_bytes())?;
        }
        put(format!("{pre}gcn.ckpt"), round.gcn.to_checkpoint().encode())?;
        put(format!("{pre}gcn_log.jsonl"), log_to_jsonl(&round.gcn_log).into_bytes())?;
        put(format!("{pre}graph.tsv"), crate::graph::edges_to_tsv(&round.test_graph).into_bytes())?;
        put(format!("{pre}embeddings.bin"), crate::data::encode_features(&round.embeddings))?;
        put(format!("{pre}clusters.txt"), round.clusters.to_text().into_bytes())?;
        put(format!("{pre}report.json"), round.report.to_json().into_bytes())?;
    }
    put("report.json".into(), run.final_report().to_json().into_bytes())?;
    Ok(written)
}

/// Saves a split as `<stem>_features.bin` and `<stem>_labels.txt`.
pub fn save_split(split: &Split, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let f = dir.join(format!("{stem}_features.bin"));
    let l = dir.join(format!("{stem}_labels.txt"));
    save_features(&split.features, &f)?;
    save_labels(&split.labels, &l)?;
    Ok((f, l))
}

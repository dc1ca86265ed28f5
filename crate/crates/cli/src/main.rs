use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cleangraph::cluster::{graph_cut_baseline, link_pairs, union_find_merge, ClusterAssignment};
use cleangraph::data::{
    format_ids, generate_synthetic, load_features, load_labels, parse_labels, save_features, save_labels,
    write_atomic,
};
use cleangraph::discovery::{
    build_training_sequences, discover_neighbors, quality_curves, train_filter, FilterModel,
};
use cleangraph::gcn::{embed, train_gcn, GcnModel};
use cleangraph::graph::{
    build_graph, edges_from_tsv, edges_to_tsv, knn_graph, perturb_training_graph, snr, threshold_graph,
    AdjacencyGraph,
};
use cleangraph::knn::{build_knn, knn_from_tsv, knn_to_tsv, NeighborList};
use cleangraph::metrics::{q_summary, roc_points, roc_to_tsv, MetricsReport};
use cleangraph::nn::Checkpoint;
use cleangraph::pipeline::{
    log_to_jsonl, run_pipeline_on, run_stage, synthetic_splits, write_run, DirLock, Split, StageManifest,
};
use cleangraph::structspace::{rankings_from_tsv, rankings_to_tsv, rerank_candidates, StructureRanking};
use cleangraph::{Error, PipelineConfig, Result};

#[derive(Parser, Debug)]
#[command(name = "cleangraph", version, about = "Clean kNN graphs and GCN embeddings for clustering")]
struct Cli {
    /// JSON config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled synthetic feature set.
    Synth(SynthArgs),
    /// Exact cosine k-nearest neighbours.
    Knn {
        #[arg(long)]
        features: PathBuf,
    },
    /// Re-rank candidate lists by structure-space similarity.
    Rerank {
        #[arg(long)]
        knn: PathBuf,
        /// Keep the cosine order instead.
        #[arg(long)]
        original: bool,
    },
    /// Train the neighbour filter on labelled rankings.
    TrainFilter {
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Truncate every candidate list at the filter's prediction.
    Discover {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Build an undirected graph.
    BuildGraph(BuildGraphArgs),
    /// Train the GCN on a labelled graph.
    TrainGcn {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Embed every vertex of a graph.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Link graph edges and merge them into clusters.
    Cluster {
        #[arg(long)]
        graph: PathBuf,
        /// Required unless --graph-cut is given.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Linking threshold (defaults to the config's theta).
        #[arg(long)]
        theta: Option<f64>,
        /// Cut edges by stored weight at this threshold instead; no embeddings used.
        #[arg(long, requires = "vertices")]
        graph_cut: Option<f64>,
        /// Vertex count of the graph (graph-cut mode).
        #[arg(long)]
        vertices: Option<usize>,
    },
    /// Score a clustering.
    Eval(EvalArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GraphMode {
    /// Discovered neighbours (pass truncated rankings).
    Adaptive,
    /// The first k neighbours of every vertex.
    Knn,
    /// Neighbours above a cosine threshold.
    Threshold,
}

#[derive(Args, Debug)]
struct BuildGraphArgs {
    #[arg(long, value_enum, default_value = "adaptive")]
    mode: GraphMode,
    /// Rankings file (adaptive mode).
    #[arg(long)]
    rankings: Option<PathBuf>,
    /// kNN file (knn and threshold modes).
    #[arg(long)]
    knn: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Adds the graph's SNR.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// With --roc-pairs, adds ROC points of these embeddings.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    roc_pairs: usize,
    /// With --k-hat, adds Q before and after truncation.
    #[arg(long)]
    rankings: Option<PathBuf>,
    #[arg(long)]
    k_hat: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    /// Test features; synthetic splits are generated when absent.
    #[arg(long, requires_all = ["labels", "train_features", "train_labels"])]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    train_features: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn put(path: &Path, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    write_atomic(path, bytes.as_ref())?;
    Ok(path.to_path_buf())
}

fn load_rankings(path: &Path) -> Result<Vec<StructureRanking>> {
    rankings_from_tsv(&read_text(path)?)
}

fn load_knn(path: &Path) -> Result<Vec<NeighborList>> {
    knn_from_tsv(&read_text(path)?)
}

fn load_graph(path: &Path, n: usize) -> Result<AdjacencyGraph> {
    edges_from_tsv(&read_text(path)?, n)
}

fn load_k_hats(path: &Path) -> Result<Vec<usize>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("not a length: {l:?}"),
            })
        })
        .collect()
}

fn required<'a>(opt: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    opt.as_ref()
        .ok_or_else(|| Error::Parameter(format!("{flag} is required here")))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    }
    let out = cli.out.clone();
    let _lock = DirLock::acquire(&out)?;
    let printed = dispatch(cli.command, &config, &out)?;
    emit(&printed);
    Ok(())
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{text}");
}

/// Runs one command and returns what it prints: the report for `eval` and
/// `pipeline`, the stage manifest otherwise.
fn dispatch(command: Command, cfg: &PipelineConfig, out: &Path) -> Result<String> {
    let cfg = cfg.clone();
    let m = match command {
        Command::Synth(a) => {
            let mut spec = cfg.synthetic;
            spec.classes = a.classes.unwrap_or(spec.classes);
            spec.per_class = a.per_class.unwrap_or(spec.per_class);
            spec.dim = a.dim.unwrap_or(spec.dim);
            spec.noise_sigma = a.noise_sigma.unwrap_or(spec.noise_sigma);
            spec.seed = cfg.seed;
            run_stage("synth", &cfg, out, &[], || {
                let (f, l) = generate_synthetic(&spec)?;
                let (fp, lp) = (out.join("features.bin"), out.join("labels.txt"));
                save_features(&f, &fp)?;
                save_labels(&l, &lp)?;
                Ok(vec![fp, lp])
            })?
        }
        Command::Knn { features } => run_stage("knn", &cfg, out, std::slice::from_ref(&features), || {
            let f = load_features(&features)?;
            let knn = build_knn(&f, cfg.k)?;
            Ok(vec![put(&out.join("knn.tsv"), knn_to_tsv(&knn))?])
        })?,
        Command::Rerank { knn, original } => run_stage("rerank", &cfg, out, std::slice::from_ref(&knn), || {
            let lists = load_knn(&knn)?;
            let k = lists.first().map_or(0, |l| l.len());
            let rankings = if original {
                lists.iter().map(StructureRanking::from_knn).collect()
            } else {
                rerank_candidates(&lists, cfg.eta, k)?
            };
            Ok(vec![put(&out.join("rankings.tsv"), rankings_to_tsv(&rankings))?])
        })?,
        Command::TrainFilter {
            rankings,
            features,
            labels,
        } => {
            let inputs = [rankings.clone(), features.clone(), labels.clone()];
            run_stage("train-filter", &cfg, out, &inputs, || {
                let r = load_rankings(&rankings)?;
                let f = load_features(&features)?;
                let l = load_labels(&labels)?;
                let (seqs, _) = build_training_sequences(&r, &f, &l, cfg.beta)?;
                let (model, log) = train_filter(&seqs, &cfg)?;
                Ok(vec![
                    put(&out.join("filter.ckpt"), model.to_checkpoint().encode())?,
                    put(&out.join("filter_log.jsonl"), log_to_jsonl(&log))?,
                ])
            })?
        }
        Command::Discover {
            model,
            rankings,
            features,
        } => {
            let inputs = [model.clone(), rankings.clone(), features.clone()];
            run_stage("discover", &cfg, out, &inputs, || {
                let m = FilterModel::<f32>::from_checkpoint(&read_checkpoint(&model)?)?;
                let r = load_rankings(&rankings)?;
                let f = load_features(&features)?;
                let (kept, k_hats) = discover_neighbors(&m, &r, &f)?;
                let lens: Vec<u32> = k_hats.iter().map(|&k| k as u32).collect();
                Ok(vec![
                    put(&out.join("discovered.tsv"), rankings_to_tsv(&kept))?,
                    put(&out.join("k_hat.txt"), format_ids(&lens))?,
                ])
            })?
        }
        Command::BuildGraph(a) => {
            let input = match a.mode {
                GraphMode::Adaptive => required(&a.rankings, "--rankings")?.clone(),
                GraphMode::Knn | GraphMode::Threshold => required(&a.knn, "--knn")?.clone(),
            };
            run_stage("build-graph", &cfg, out, std::slice::from_ref(&input), || {
                let g = match a.mode {
                    GraphMode::Adaptive => build_graph(&load_rankings(&input)?)?,
                    GraphMode::Knn => {
                        let lists = load_knn(&input)?;
                        let k = cfg.k.min(lists.first().map_or(0, |l| l.len()));
                        knn_graph(&lists, k)?
                    }
                    GraphMode::Threshold => {
                        let tau = a
                            .tau
                            .ok_or_else(|| Error::Parameter("--tau is required in threshold mode".into()))?;
                        threshold_graph(&load_knn(&input)?, tau)?
                    }
                };
                Ok(vec![put(&out.join("graph.tsv"), edges_to_tsv(&g))?])
            })?
        }
        Command::TrainGcn {
            graph,
            features,
            labels,
        } => {
            let inputs = [graph.clone(), features.clone(), labels.clone()];
            run_stage("train-gcn", &cfg, out, &inputs, || {
                let f = load_features(&features)?;
                let l = load_labels(&labels)?;
                let g = load_graph(&graph, f.n())?;
                let g = perturb_training_graph(&g, cfg.noise_rate, cfg.seed)?;
                let (model, log) = train_gcn(&g, &f, &l, &cfg)?;
                Ok(vec![
                    put(&out.join("gcn.ckpt"), model.to_checkpoint().encode())?,
                    put(&out.join("gcn_log.jsonl"), log_to_jsonl(&log))?,
                ])
            })?
        }
        Command::Embed {
            model,
            graph,
            features,
        } => {
            let inputs = [model.clone(), graph.clone(), features.clone()];
            run_stage("embed", &cfg, out, &inputs, || {
                let m = GcnModel::<f32>::from_checkpoint(&read_checkpoint(&model)?)?;
                let f = load_features(&features)?;
                let g = load_graph(&graph, f.n())?;
                let e = embed(&m, &g, &f)?;
                let p = out.join("embeddings.bin");
                save_features(&e, &p)?;
                Ok(vec![p])
            })?
        }
        Command::Cluster {
            graph,
            embeddings,
            theta,
            graph_cut,
            vertices,
        } => {
            let mut inputs = vec![graph.clone()];
            if graph_cut.is_none() {
                inputs.push(required(&embeddings, "--embeddings")?.clone());
            }
            run_stage("cluster", &cfg, out, &inputs, || {
                let clusters = match graph_cut {
                    Some(cut) => {
                        let n = vertices.expect("clap enforces --vertices");
                        graph_cut_baseline(&load_graph(&graph, n)?, cut)?
                    }
                    None => {
                        let e = load_features(&inputs[1])?;
                        let g = load_graph(&graph, e.n())?;
                        let links = link_pairs(&e, &g, theta.unwrap_or(cfg.theta))?;
                        union_find_merge(e.n(), &links)?
                    }
                };
                Ok(vec![put(&out.join("clusters.txt"), clusters.to_text())?])
            })?
        }
        Command::Eval(a) => {
            let mut inputs = vec![a.pred.clone(), a.truth.clone()];
            inputs.extend(a.graph.iter().chain(&a.embeddings).chain(&a.rankings).chain(&a.k_hat).cloned());
            let mut report = None;
            run_stage("eval", &cfg, out, &inputs, || {
                let truth = load_labels(&a.truth)?;
                let pred = ClusterAssignment::from_labels(&parse_labels(&read_text(&a.pred)?)?);
                let mut r = MetricsReport::clustering(&pred, &truth)?;
                if let Some(g) = &a.graph {
                    r.snr = Some(snr(&load_graph(g, truth.len())?, &truth)?);
                }
                let mut written = Vec::new();
                if let (Some(e), true) = (&a.embeddings, a.roc_pairs > 0) {
                    let pts = roc_points(&load_features(e)?, &truth, a.roc_pairs, cfg.seed)?;
                    written.push(put(&out.join("roc.tsv"), roc_to_tsv(&pts))?);
                    r.roc = Some(pts);
                }
                if let (Some(rk), Some(kh)) = (&a.rankings, &a.k_hat) {
                    let curves = quality_curves(&load_rankings(rk)?, &truth, cfg.beta)?;
                    let q = q_summary(&curves, &load_k_hats(kh)?)?;
                    r.q_before = Some(q.q_before);
                    r.q_after = Some(q.q_after);
                }
                written.insert(0, put(&out.join("report.json"), r.to_json())?);
                report = Some(r);
                Ok(written)
            })?;
            return Ok(report.expect("eval produced a report").to_json());
        }
        Command::Pipeline(a) => {
            let inputs: Vec<PathBuf> = a
                .features
                .iter()
                .chain(&a.labels)
                .chain(&a.train_features)
                .chain(&a.train_labels)
                .cloned()
                .collect();
            let mut report = None;
            run_stage("pipeline", &cfg, out, &inputs, || {
                let (train, test) = match (&a.features, &a.labels, &a.train_features, &a.train_labels) {
                    (Some(f), Some(l), Some(tf), Some(tl)) => (
                        Split {
                            features: load_features(tf)?,
                            labels: load_labels(tl)?,
                        },
                        Split {
                            features: load_features(f)?,
                            labels: load_labels(l)?,
                        },
                    ),
                    _ => synthetic_splits(&cfg)?,
                };
                let run = run_pipeline_on(train, test, &cfg, a.rounds)?;
                let written = write_run(&run, &cfg, out)?;
                report = Some(run.final_report().clone());
                Ok(written)
            })?;
            return Ok(report.expect("pipeline produced a report").to_json());
        }
    };
    Ok(manifest_line(&m))
}

fn manifest_line(m: &StageManifest) -> String {
    serde_json::to_string(m).expect("manifest serializes")
}

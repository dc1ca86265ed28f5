use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};

/// Every tunable of the pipeline. JSON config files use these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Candidate list size.
    pub k: usize,
    /// Weight of cosine similarity in the structure-space mix.
    pub eta: f64,
    /// F-beta weight of the neighbour quality criterion.
    pub beta: f64,
    /// Huber threshold.
    pub delta: f64,
    /// Positive-pair margin of the hinge loss.
    pub beta1: f64,
    /// Negative-pair margin of the hinge loss.
    pub beta2: f64,
    /// Weight of the positive hinge term.
    pub lambda: f64,
    /// Linking threshold on embedding cosine similarity.
    pub theta: f64,
    /// Linking threshold used when re-clustering graph embeddings.
    pub theta_second_round: f64,
    /// Edge-weight threshold of the graph-cut baseline.
    pub graph_cut_theta: f64,
    pub filter_lr: f64,
    pub filter_epochs: usize,
    pub filter_batch: usize,
    pub filter_hidden: usize,
    pub gcn_lr: f64,
    pub gcn_epochs: usize,
    pub gcn_batch: usize,
    pub gcn_hidden: usize,
    /// Embedding dimension of the GCN head.
    pub d_out: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fraction of random edges added to the training graph.
    pub noise_rate: f64,
    /// Apply structure-space re-ranking before discovery.
    pub structure_space: bool,
    /// Build graphs from discovered neighbours; when false every vertex keeps
    /// all `k` candidates.
    pub adaptive_graph: bool,
    /// Pair sample size for ROC points in reports; 0 disables them.
    pub roc_pairs: usize,
    /// Seed of every random choice. Pipeline runs generate the test split
    /// with this seed and the training split with `seed + 1`.
    pub seed: u64,
    /// Generator settings; its own `seed` is overridden by the run seed.
    pub synthetic: SyntheticSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 80,
            eta: 0.5,
            beta: 0.5,
            delta: 1.0,
            beta1: 0.9,
            beta2: 1.0,
            lambda: 1.0,
            theta: 0.96,
            theta_second_round: 0.99,
            graph_cut_theta: 0.5,
            filter_lr: 0.01,
            filter_epochs: 10,
            filter_batch: 64,
            filter_hidden: 16,
            gcn_lr: 0.001,
            gcn_epochs: 100,
            gcn_batch: 256,
            gcn_hidden: 64,
            d_out: 64,
            momentum: 0.9,
            weight_decay: 1e-5,
            noise_rate: 0.0,
            structure_space: true,
            adaptive_graph: true,
            roc_pairs: 0,
            seed: 1,
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.k >= 1, "k ≥ 1")?;
        check((0.0..=1.0).contains(&self.eta), "0 ≤ eta ≤ 1")?;
        check(self.beta > 0.0, "beta > 0")?;
        check(self.delta > 0.0, "delta > 0")?;
        check(self.theta > 0.0 && self.theta < 1.0, "0 < theta < 1")?;
        check(
            self.theta_second_round > 0.0 && self.theta_second_round < 1.0,
            "0 < theta_second_round < 1",
        )?;
        check(self.lambda >= 0.0, "lambda ≥ 0")?;
        check(self.filter_lr > 0.0 && self.gcn_lr > 0.0, "learning rates > 0")?;
        check(self.filter_batch >= 1 && self.gcn_batch >= 2, "batch sizes too small")?;
        check(
            self.filter_hidden >= 1 && self.gcn_hidden >= 1 && self.d_out >= 1,
            "layer widths ≥ 1",
        )?;
        check((0.0..1.0).contains(&self.noise_rate), "0 ≤ noise_rate < 1")?;
        check((0.0..1.0).contains(&self.momentum), "0 ≤ momentum < 1")?;
        check(self.weight_decay >= 0.0, "weight_decay ≥ 0")?;
        self.synthetic
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

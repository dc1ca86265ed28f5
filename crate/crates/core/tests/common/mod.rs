#![allow(dead_code, clippy::needless_range_loop)]

pub mod gradient_checks;
pub mod oracle_checks;

use std::collections::BTreeSet;

use cleangraph::data::{FeatureMatrix, LabelVector};
use cleangraph::graph::AdjacencyGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian rows, normalized on ingest.
pub fn random_features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut r = rng(seed);
    let data: Vec<f32> = (0..n * d).map(|_| r.sample::<f32, _>(StandardNormal)).collect();
    FeatureMatrix::from_raw(n, d, data).unwrap()
}

pub fn random_labels(n: usize, classes: u64, seed: u64) -> LabelVector {
    let mut r = rng(seed);
    LabelVector::from_raw((0..n).map(|_| r.random_range(0..classes)))
}

/// Unordered edge set with each pair drawn independently.
pub fn random_edge_set(n: usize, edges: usize, seed: u64) -> BTreeSet<(usize, usize)> {
    let mut r = rng(seed);
    let mut out = BTreeSet::new();
    for _ in 0..edges {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a != b {
            out.insert((a.min(b), a.max(b)));
        }
    }
    out
}

pub fn random_graph(n: usize, edges: usize, seed: u64) -> AdjacencyGraph {
    let set = random_edge_set(n, edges, seed);
    AdjacencyGraph::from_edges(n, set.into_iter().map(|(a, b)| (a, b, 0.0)), false).unwrap()
}

/// Dot product accumulated in f64 and rounded to f32, as similarities are stored.
pub fn sim(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() as f32
}

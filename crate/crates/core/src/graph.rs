//! Undirected graphs over the vertex set and their quality.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::knn::NeighborList;
use crate::structspace::StructureRanking;

/// Symmetric adjacency in compressed sparse rows, without self-loops.
///
/// Weights, when present, hold the similarity that created each edge. They are
/// stored for both directions and are not used by graph convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Option<Vec<f64>>,
}

impl AdjacencyGraph {
    /// Builds from undirected edges. Self-loops are dropped; duplicates keep
    /// the largest weight.
    pub fn from_edges<I>(n: usize, edges: I, weighted: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut directed = Vec::new();
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Shape(format!("edge ({i}, {j}) outside {n} vertices")));
            }
            if i != j {
                directed.push((i, j, w));
                directed.push((j, i, w));
            }
        }
        directed.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(b.2.total_cmp(&a.2)));
        directed.dedup_by(|b, a| a.0 == b.0 && a.1 == b.1);

        let mut offsets = vec![0; n + 1];
        for &(i, _, _) in &directed {
            offsets[i + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let cols = directed.iter().map(|e| e.1).collect();
        let weights = weighted.then(|| directed.iter().map(|e| e.2).collect());
        Ok(AdjacencyGraph {
            n,
            offsets,
            cols,
            weights,
        })
    }

    pub fn empty(n: usize) -> Self {
        AdjacencyGraph {
            n,
            offsets: vec![0; n + 1],
            cols: Vec::new(),
            weights: None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.cols.len() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn neighbor_weights(&self, i: usize) -> Option<&[f64]> {
        self.weights
            .as_ref()
            .map(|w| &w[self.offsets[i]..self.offsets[i + 1]])
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn has_weights(&self) -> bool {
        self.weights.is_some()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Edges with `i < j` in lexicographic order; weight is NaN when absent.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for i in 0..self.n {
            let ws = self.neighbor_weights(i);
            for (slot, &j) in self.neighbors(i).iter().enumerate() {
                if i < j {
                    out.push((i, j, ws.map_or(f64::NAN, |w| w[slot])));
                }
            }
        }
        out
    }
}

/// Edge `{i, j}` whenever `j` is among the kept candidates of `i` or the
/// other way around. Weights are the ranking scores.
pub fn build_graph(rankings: &[StructureRanking]) -> Result<AdjacencyGraph> {
    let n = rankings.len();
    let mut edges = Vec::new();
    for (i, r) in rankings.iter().enumerate() {
        if r.probe != i {
            return Err(Error::Shape(format!("ranking {i} belongs to probe {}", r.probe)));
        }
        edges.extend(r.ids.iter().zip(&r.kappas).map(|(&j, &w)| (i, j, w)));
    }
    AdjacencyGraph::from_edges(n, edges, true)
}

/// Every vertex joined to its first `k` neighbours, weighted by cosine.
pub fn knn_graph(knn: &[NeighborList], k: usize) -> Result<AdjacencyGraph> {
    let mut edges = Vec::new();
    for (i, list) in knn.iter().enumerate() {
        if k == 0 || k > list.len() {
            return Err(Error::Parameter(format!(
                "k = {k} but vertex {i} has {} neighbours",
                list.len()
            )));
        }
        edges.extend((0..k).map(|r| (i, list.ids[r], list.sims[r] as f64)));
    }
    AdjacencyGraph::from_edges(knn.len(), edges, true)
}

/// Keeps neighbours with cosine strictly above `tau`.
pub fn threshold_graph(knn: &[NeighborList], tau: f64) -> Result<AdjacencyGraph> {
    if !(tau > -1.0 && tau < 1.0) {
        return Err(Error::Parameter(format!("tau = {tau} outside (-1, 1)")));
    }
    let edges = knn.iter().enumerate().flat_map(|(i, list)| {
        list.ids
            .iter()
            .zip(&list.sims)
            .filter(move |(_, &s)| s as f64 > tau)
            .map(move |(&j, &s)| (i, j, s as f64))
    });
    AdjacencyGraph::from_edges(knn.len(), edges, true)
}

/// Same-label and cross-label edge counts.
pub fn edge_counts(graph: &AdjacencyGraph, labels: &LabelVector) -> Result<(usize, usize)> {
    if labels.len() != graph.n() {
        return Err(Error::Shape(format!(
            "{} labels for {} vertices",
            labels.len(),
            graph.n()
        )));
    }
    let (mut correct, mut noise) = (0, 0);
    for (i, j, _) in graph.edges() {
        if labels.get(i) == labels.get(j) {
            correct += 1;
        } else {
            noise += 1;
        }
    }
    Ok((correct, noise))
}

/// Correct edges per noise edge; `f64::INFINITY` when there is no noise edge.
pub fn snr(graph: &AdjacencyGraph, labels: &LabelVector) -> Result<f64> {
    let (correct, noise) = edge_counts(graph, labels)?;
    Ok(if noise == 0 {
        f64::INFINITY
    } else {
        correct as f64 / noise as f64
    })
}

/// Adds `⌊rate · E⌋` uniformly drawn edges that were not present. New edges
/// get weight 0.
pub fn perturb_training_graph(graph: &AdjacencyGraph, rate: f64, seed: u64) -> Result<AdjacencyGraph> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("noise rate {rate} outside [0, 1)")));
    }
    let existing = graph.edges();
    let extra = (rate * existing.len() as f64).floor() as usize;
    if extra == 0 {
        return Ok(graph.clone());
    }
    let n = graph.n();
    let capacity = n * (n - 1) / 2 - existing.len();
    if extra > capacity {
        return Err(Error::Parameter(format!(
            "cannot add {extra} edges, only {capacity} vertex pairs are free"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut added = HashSet::with_capacity(extra);
    while added.len() < extra {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let key = (i.min(j), i.max(j));
        if i != j && !graph.has_edge(i, j) {
            added.insert(key);
        }
    }
    let mut new_edges: Vec<_> = added.into_iter().collect();
    new_edges.sort_unstable();
    let edges = existing
        .into_iter()
        .chain(new_edges.into_iter().map(|(i, j)| (i, j, 0.0)));
    AdjacencyGraph::from_edges(n, edges, graph.has_weights())
}

/// `i<TAB>j<TAB>weight` per edge with `i < j`; unweighted graphs write 1.
pub fn edges_to_tsv(graph: &AdjacencyGraph) -> String {
    let mut out = String::new();
    for (i, j, w) in graph.edges() {
        let w = if w.is_nan() { 1.0 } else { w };
        out.push_str(&format!("{i}\t{j}\t{w:e}\n"));
    }
    out
}

pub fn edges_from_tsv(text: &str, n: usize) -> Result<AdjacencyGraph> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: lineno + 1,
            message: m.to_string(),
        };
        let mut fields = line.split('\t');
        let mut next = || fields.next().ok_or_else(|| bad("expected 3 fields"));
        let i: usize = next()?.trim().parse().map_err(|_| bad("bad vertex id"))?;
        let j: usize = next()?.trim().parse().map_err(|_| bad("bad vertex id"))?;
        let w: f64 = next()?.trim().parse().map_err(|_| bad("bad weight"))?;
        edges.push((i, j, w));
    }
    AdjacencyGraph::from_edges(n, edges, true)
}

//! Threshold linking and transitive merging.

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::knn::dot;

/// Disjoint sets with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Returns false when `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Dense cluster ids, numbered in order of each cluster's smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<u32>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Reads ids back from a label vector (ids are densified by first occurrence).
    pub fn from_labels(labels: &crate::data::LabelVector) -> Self {
        ClusterAssignment {
            labels: labels.as_slice().to_vec(),
            num_clusters: labels.num_classes(),
        }
    }

    /// One id per line.
    pub fn to_text(&self) -> String {
        crate::data::format_ids(&self.labels)
    }
}

/// Graph edges whose embedding cosine is strictly above `theta`.
pub fn link_pairs(embeddings: &FeatureMatrix, graph: &AdjacencyGraph, theta: f64) -> Result<Vec<(usize, usize)>> {
    if embeddings.n() != graph.n() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} vertices",
            embeddings.n(),
            graph.n()
        )));
    }
    let mut out = Vec::new();
    for i in 0..graph.n() {
        for &j in graph.neighbors(i) {
            if i < j && dot(embeddings.row(i), embeddings.row(j)) as f64 > theta {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

/// Connected components of the given edges.
pub fn union_find_merge(n: usize, edges: &[(usize, usize)]) -> Result<ClusterAssignment> {
    let mut uf = UnionFind::new(n);
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::Shape(format!("edge ({a}, {b}) outside {n} vertices")));
        }
        uf.union(a, b);
    }
    let mut ids = vec![u32::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut next = 0u32;
    for v in 0..n {
        let root = uf.find(v);
        if ids[root] == u32::MAX {
            ids[root] = next;
            next += 1;
        }
        labels.push(ids[root]);
    }
    Ok(ClusterAssignment {
        labels,
        num_clusters: next as usize,
    })
}

/// Components after dropping edges whose stored weight is at most `theta`.
pub fn graph_cut_baseline(graph: &AdjacencyGraph, theta: f64) -> Result<ClusterAssignment> {
    if !graph.has_weights() {
        return Err(Error::Parameter("graph cut needs edge weights".into()));
    }
    let kept: Vec<(usize, usize)> = graph
        .edges()
        .into_iter()
        .filter(|&(_, _, w)| w > theta)
        .map(|(i, j, _)| (i, j))
        .collect();
    union_find_merge(graph.n(), &kept)
}

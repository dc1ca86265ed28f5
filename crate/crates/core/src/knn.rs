//! Exact cosine k-nearest-neighbour search.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

/// Ranked candidates of one probe vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub probe: usize,
    /// Neighbour ids, most similar first.
    pub ids: Vec<usize>,
    /// Cosine similarities aligned with `ids`.
    pub sims: Vec<f32>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum::<f64>() as f32
}

/// Cosine similarity of two unit-norm rows, i.e. their dot product.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dot(a, b))
}

/// Descending similarity, ties by ascending id.
#[inline]
pub(crate) fn rank_order(a: (usize, f32), b: (usize, f32)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// The `k` most similar other vertices of every probe.
pub fn build_knn(features: &FeatureMatrix, k: usize) -> Result<Vec<NeighborList>> {
    let n = features.n();
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!("k must be in 1..{n}, got {k}")));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|probe| {
            let p = features.row(probe);
            let mut scored: Vec<(usize, f32)> = (0..n)
                .filter(|&j| j != probe)
                .map(|j| (j, dot(p, features.row(j))))
                .collect();
            if k < scored.len() {
                scored.select_nth_unstable_by(k - 1, |&a, &b| rank_order(a, b));
                scored.truncate(k);
            }
            scored.sort_unstable_by(|&a, &b| rank_order(a, b));
            NeighborList {
                probe,
                ids: scored.iter().map(|s| s.0).collect(),
                sims: scored.iter().map(|s| s.1).collect(),
            }
        })
        .collect())
}

/// One `probe<TAB>rank<TAB>id<TAB>sim` line per candidate, ranks 1-based.
pub fn knn_to_tsv(lists: &[NeighborList]) -> String {
    let mut out = String::new();
    for l in lists {
        for (r, (&id, &s)) in l.ids.iter().zip(&l.sims).enumerate() {
            writeln!(out, "{}\t{}\t{}\t{:e}", l.probe, r + 1, id, s).unwrap();
        }
    }
    out
}

/// Parses the output of [`knn_to_tsv`]. Lists must be complete and in probe order.
pub fn knn_from_tsv(text: &str) -> Result<Vec<NeighborList>> {
    let mut lists: Vec<NeighborList> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 4 {
            return Err(parse_err("expected probe, rank, id, sim"));
        }
        let probe: usize = f[0].parse().map_err(|_| parse_err("bad probe"))?;
        let rank: usize = f[1].parse().map_err(|_| parse_err("bad rank"))?;
        let id: usize = f[2].parse().map_err(|_| parse_err("bad id"))?;
        let sim: f32 = f[3].parse().map_err(|_| parse_err("bad similarity"))?;
        if rank == 1 {
            if probe != lists.len() {
                return Err(parse_err("probes must appear in order starting at 0"));
            }
            lists.push(NeighborList {
                probe,
                ids: Vec::new(),
                sims: Vec::new(),
            });
        }
        let cur = lists
            .last_mut()
            .filter(|l| l.probe == probe && l.ids.len() + 1 == rank)
            .ok_or_else(|| parse_err("ranks must be consecutive from 1"))?;
        cur.ids.push(id);
        cur.sims.push(sim);
    }
    Ok(lists)
}

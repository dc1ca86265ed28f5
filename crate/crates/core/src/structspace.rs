//! Structure-space similarity.
//!
//! A vertex is described by its expanded k-reciprocal neighbour set `R*`.
//! Two vertices are similar in structure space when their sets overlap
//! (Jaccard) and their features agree (cosine):
//!
//! ```text
//! kappa(i, j) = (1 - eta) * jaccard(R*(i), R*(j)) + eta * cos(i, j)
//! ```
//!
//! `R(v, k)` keeps the candidates `r` of `v` that also rank `v` among their
//! own `k` nearest. `R*(v, k)` extends `R(v, k)` with `R(r, k/2)` for each
//! member `r` whose half-size set lies at least two thirds inside `R(v, k)`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knn::NeighborList;

/// Sorted set of vertex ids attached to `vertex`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReciprocalSet {
    pub vertex: usize,
    pub members: Vec<usize>,
}

impl ReciprocalSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.members.binary_search(&v).is_ok()
    }
}

/// Candidate list of one probe re-ordered by structure-space similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureRanking {
    pub probe: usize,
    pub ids: Vec<usize>,
    pub kappas: Vec<f64>,
    pub original_sims: Vec<f32>,
}

impl StructureRanking {
    /// Keeps the cosine order; `kappas` are the cosine similarities.
    pub fn from_knn(list: &NeighborList) -> Self {
        StructureRanking {
            probe: list.probe,
            ids: list.ids.clone(),
            kappas: list.sims.iter().map(|&s| s as f64).collect(),
            original_sims: list.sims.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn check_k(knn: &[NeighborList], k: usize) -> Result<()> {
    match knn.iter().map(|l| l.ids.len()).min() {
        Some(stored) if k > stored => Err(Error::Parameter(format!(
            "k = {k} exceeds the stored candidate size {stored}"
        ))),
        _ => Ok(()),
    }
}

fn mutual(knn: &[NeighborList], v: usize, k: usize) -> Vec<usize> {
    let mut members: Vec<usize> = knn[v].ids[..k]
        .iter()
        .copied()
        .filter(|&r| knn[r].ids[..k].contains(&v))
        .collect();
    members.sort_unstable();
    members
}

/// `R(v, k)`: members of `v`'s first `k` candidates that rank `v` in their own first `k`.
pub fn reciprocal_set(knn: &[NeighborList], v: usize, k: usize) -> Result<ReciprocalSet> {
    check_k(knn, k)?;
    Ok(ReciprocalSet {
        vertex: v,
        members: mutual(knn, v, k),
    })
}

fn intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn expand(v: usize, full: &[usize], half_sets: &[Vec<usize>]) -> Vec<usize> {
    let mut out = full.to_vec();
    for &r in full {
        let half = &half_sets[r];
        if 3 * intersection_len(full, half) >= 2 * half.len() {
            out.extend_from_slice(half);
        }
    }
    out.sort_unstable();
    out.dedup();
    out.retain(|&m| m != v);
    out
}

/// `R*(v, k)`, the expanded reciprocal set. The half size is `⌊k/2⌋`.
pub fn expanded_reciprocal_set(knn: &[NeighborList], v: usize, k: usize) -> Result<ReciprocalSet> {
    check_k(knn, k)?;
    if k == 0 {
        return Err(Error::Parameter("k must be ≥ 1".into()));
    }
    let full = mutual(knn, v, k);
    let half_sets: Vec<Vec<usize>> = (0..knn.len())
        .map(|r| {
            if full.binary_search(&r).is_ok() {
                mutual(knn, r, k / 2)
            } else {
                Vec::new()
            }
        })
        .collect();
    Ok(ReciprocalSet {
        vertex: v,
        members: expand(v, &full, &half_sets),
    })
}

/// `|a ∩ b| / |a ∪ b|`, defined as 0 when both sets are empty.
pub fn jaccard_similarity(a: &ReciprocalSet, b: &ReciprocalSet) -> f64 {
    let inter = intersection_len(&a.members, &b.members);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `(1 - eta) * jaccard + eta * cosine`.
pub fn structure_similarity(cosine: f32, a: &ReciprocalSet, b: &ReciprocalSet, eta: f64) -> f64 {
    (1.0 - eta) * jaccard_similarity(a, b) + eta * cosine as f64
}

/// Expanded reciprocal sets of every vertex, computed once at a fixed `k`.
#[derive(Debug, Clone)]
pub struct ReciprocalCache {
    k: usize,
    sets: Vec<ReciprocalSet>,
}

impl ReciprocalCache {
    pub fn build(knn: &[NeighborList], k: usize) -> Result<Self> {
        check_k(knn, k)?;
        if k == 0 {
            return Err(Error::Parameter("k must be ≥ 1".into()));
        }
        let n = knn.len();
        let full: Vec<Vec<usize>> = (0..n).into_par_iter().map(|v| mutual(knn, v, k)).collect();
        let half: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|v| mutual(knn, v, k / 2))
            .collect();
        let sets = (0..n)
            .into_par_iter()
            .map(|v| ReciprocalSet {
                vertex: v,
                members: expand(v, &full[v], &half),
            })
            .collect();
        Ok(ReciprocalCache { k, sets })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, v: usize) -> &ReciprocalSet {
        &self.sets[v]
    }

    pub fn kappa(&self, i: usize, j: usize, cosine: f32, eta: f64) -> f64 {
        structure_similarity(cosine, &self.sets[i], &self.sets[j], eta)
    }
}

/// Stable re-sort of every probe's first `k` candidates by descending kappa.
pub fn rerank_candidates(knn: &[NeighborList], eta: f64, k: usize) -> Result<Vec<StructureRanking>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Parameter(format!("eta must lie in [0, 1], got {eta}")));
    }
    let cache = ReciprocalCache::build(knn, k)?;
    Ok(rerank_with_cache(knn, &cache, eta))
}

pub fn rerank_with_cache(
    knn: &[NeighborList],
    cache: &ReciprocalCache,
    eta: f64,
) -> Vec<StructureRanking> {
    let k = cache.k();
    knn.par_iter()
        .map(|list| {
            let mut scored: Vec<(usize, f64, f32)> = list.ids[..k]
                .iter()
                .zip(&list.sims[..k])
                .map(|(&j, &s)| (j, cache.kappa(list.probe, j, s, eta), s))
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
            StructureRanking {
                probe: list.probe,
                ids: scored.iter().map(|s| s.0).collect(),
                kappas: scored.iter().map(|s| s.1).collect(),
                original_sims: scored.iter().map(|s| s.2).collect(),
            }
        })
        .collect()
}

/// One `probe<TAB>rank<TAB>id<TAB>kappa<TAB>cosine` line per candidate.
pub fn rankings_to_tsv(rankings: &[StructureRanking]) -> String {
    let mut out = String::new();
    for r in rankings {
        for (i, ((&id, &kap), &cos)) in r.ids.iter().zip(&r.kappas).zip(&r.original_sims).enumerate() {
            writeln!(out, "{}\t{}\t{}\t{:e}\t{:e}", r.probe, i + 1, id, kap, cos).unwrap();
        }
    }
    out
}

pub fn rankings_from_tsv(text: &str) -> Result<Vec<StructureRanking>> {
    let mut out: Vec<StructureRanking> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let perr = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 5 {
            return Err(perr("expected probe, rank, id, kappa, cosine"));
        }
        let probe: usize = f[0].parse().map_err(|_| perr("bad probe"))?;
        let rank: usize = f[1].parse().map_err(|_| perr("bad rank"))?;
        let id: usize = f[2].parse().map_err(|_| perr("bad id"))?;
        let kap: f64 = f[3].parse().map_err(|_| perr("bad kappa"))?;
        let cos: f32 = f[4].parse().map_err(|_| perr("bad cosine"))?;
        if rank == 1 {
            if probe != out.len() {
                return Err(perr("probes must appear in order starting at 0"));
            }
            out.push(StructureRanking {
                probe,
                ids: vec![],
                kappas: vec![],
                original_sims: vec![],
            });
        }
        let cur = out
            .last_mut()
            .filter(|r| r.probe == probe && r.ids.len() + 1 == rank)
            .ok_or_else(|| perr("ranks must be consecutive from 1"))?;
        cur.ids.push(id);
        cur.kappas.push(kap);
        cur.original_sims.push(cos);
    }
    Ok(out)
}

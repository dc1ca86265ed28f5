//! Adaptive neighbour discovery.
//!
//! Every probe's ranked candidate list is scored by an F-beta quality curve
//! against the probe's class. The best truncation point `k_off` of that
//! curve is the regression target of the [`FilterModel`], which at inference
//! time decides how many candidates each probe keeps.

mod filter;
mod lstm;

pub use filter::{predict_koff, train_filter, EpochLoss, FilterModel, FILTER_TAG};
pub use lstm::{BiLstm, LstmDirection};

use rayon::prelude::*;

use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::structspace::StructureRanking;

/// Precision and recall of a candidate prefix with respect to the probe's class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// The probe is the only member of its class, so recall is undefined (reported as 0).
    pub degenerate: bool,
}

/// Quality of every prefix length `j = 1..=k` of one probe's candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityCurve {
    pub probe: usize,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub q: Vec<f64>,
    /// 1-based prefix length with the highest quality (smallest on ties).
    pub koff: usize,
    pub degenerate: bool,
}

impl QualityCurve {
    pub fn k(&self) -> usize {
        self.q.len()
    }

    /// `Q(j)` for a 1-based prefix length.
    pub fn at(&self, j: usize) -> f64 {
        self.q[j - 1]
    }
}

/// F-beta of a precision/recall pair; 0 when both are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

fn same_class_total(ranking: &StructureRanking, labels: &LabelVector) -> usize {
    let c = labels.get(ranking.probe);
    labels.as_slice().iter().filter(|&&l| l == c).count() - 1
}

/// Precision and recall of the first `j` candidates of `ranking`.
pub fn precision_recall_at(
    ranking: &StructureRanking,
    labels: &LabelVector,
    j: usize,
) -> Result<PrecisionRecall> {
    if j == 0 || j > ranking.len() {
        return Err(Error::Parameter(format!(
            "prefix length {j} outside 1..={}",
            ranking.len()
        )));
    }
    let c = labels.get(ranking.probe);
    let hits = ranking.ids[..j].iter().filter(|&&id| labels.get(id) == c).count();
    let total = same_class_total(ranking, labels);
    Ok(PrecisionRecall {
        precision: hits as f64 / j as f64,
        recall: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        degenerate: total == 0,
    })
}

fn curve_with_total(ranking: &StructureRanking, labels: &LabelVector, total: usize, beta: f64) -> QualityCurve {
    let c = labels.get(ranking.probe);
    let k = ranking.len();
    let (mut precision, mut recall, mut q) = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
    let mut hits = 0usize;
    for (j, &id) in ranking.ids.iter().enumerate() {
        if labels.get(id) == c {
            hits += 1;
        }
        let pr = hits as f64 / (j + 1) as f64;
        let rc = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        precision.push(pr);
        recall.push(rc);
        q.push(f_beta(pr, rc, beta));
    }
    let koff = argmax_first(&q);
    QualityCurve {
        probe: ranking.probe,
        precision,
        recall,
        q,
        koff,
        degenerate: total == 0,
    }
}

/// 1-based index of the first maximum.
fn argmax_first(q: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = j;
        }
    }
    best + 1
}

/// Quality curve of one probe's candidate list.
pub fn quality_curve(ranking: &StructureRanking, labels: &LabelVector, beta: f64) -> Result<QualityCurve> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Parameter(format!("beta must be > 0, got {beta}")));
    }
    if ranking.is_empty() {
        return Err(Error::Parameter("empty candidate list".into()));
    }
    Ok(curve_with_total(ranking, labels, same_class_total(ranking, labels), beta))
}

/// Quality curves of all probes, sharing one pass over the labels.
pub fn quality_curves(
    rankings: &[StructureRanking],
    labels: &LabelVector,
    beta: f64,
) -> Result<Vec<QualityCurve>> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Parameter(format!("beta must be > 0, got {beta}")));
    }
    if rankings.iter().any(|r| r.is_empty()) {
        return Err(Error::Parameter("empty candidate list".into()));
    }
    let sizes = labels.class_sizes();
    Ok(rankings
        .par_iter()
        .map(|r| curve_with_total(r, labels, sizes[labels.get(r.probe) as usize] - 1, beta))
        .collect())
}

/// Smallest prefix length attaining the curve's maximum.
pub fn oracle_koff(curve: &QualityCurve) -> usize {
    argmax_first(&curve.q)
}

/// Huber loss on the relative error `|k_hat - k_off| / k_off`.
pub fn huber_loss(k_hat: f64, k_off: f64, delta: f64) -> Result<f64> {
    if k_off.is_nan() || k_off < 1.0 {
        return Err(Error::Domain(format!("k_off must be ≥ 1, got {k_off}")));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::Domain(format!("delta must be > 0, got {delta}")));
    }
    let xi = (k_hat - k_off).abs() / k_off;
    Ok(huber(xi, delta))
}

#[inline]
pub(crate) fn huber(xi: f64, delta: f64) -> f64 {
    if xi < delta {
        0.5 * xi * xi
    } else {
        delta * xi - 0.5 * delta * delta
    }
}

/// Probe feature row followed by its ranked candidates' rows, with the target `k_off`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub probe: usize,
    pub rows: Tensor<f32>,
    pub target: usize,
}

/// `(k + 1) × D` input of the filter for one probe.
pub fn sequence_rows(ranking: &StructureRanking, features: &FeatureMatrix) -> Tensor<f32> {
    let d = features.d();
    let mut data = Vec::with_capacity((ranking.len() + 1) * d);
    data.extend_from_slice(features.row(ranking.probe));
    for &id in &ranking.ids {
        data.extend_from_slice(features.row(id));
    }
    Tensor {
        rows: ranking.len() + 1,
        cols: d,
        data,
    }
}

/// Training sequences with oracle targets, plus the number of probes skipped
/// because they are alone in their class.
pub fn build_training_sequences(
    rankings: &[StructureRanking],
    features: &FeatureMatrix,
    labels: &LabelVector,
    beta: f64,
) -> Result<(Vec<TrainingSequence>, usize)> {
    if labels.len() != features.n() {
        return Err(Error::Shape(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.n()
        )));
    }
    let curves = quality_curves(rankings, labels, beta)?;
    let mut skipped = 0;
    let mut out = Vec::with_capacity(rankings.len());
    for (r, c) in rankings.iter().zip(&curves) {
        if c.degenerate {
            skipped += 1;
            continue;
        }
        out.push(TrainingSequence {
            probe: r.probe,
            rows: sequence_rows(r, features),
            target: c.koff,
        });
    }
    Ok((out, skipped))
}

/// The first `k_hat` candidates.
pub fn truncate_candidates(ranking: &StructureRanking, k_hat: usize) -> Result<StructureRanking> {
    if k_hat == 0 || k_hat > ranking.len() {
        return Err(Error::Parameter(format!(
            "k_hat {k_hat} outside 1..={}",
            ranking.len()
        )));
    }
    Ok(StructureRanking {
        probe: ranking.probe,
        ids: ranking.ids[..k_hat].to_vec(),
        kappas: ranking.kappas[..k_hat].to_vec(),
        original_sims: ranking.original_sims[..k_hat].to_vec(),
    })
}

/// Runs the filter on every probe and truncates its list. Returns the kept
/// lists and the predicted lengths.
pub fn discover_neighbors(
    model: &FilterModel<f32>,
    rankings: &[StructureRanking],
    features: &FeatureMatrix,
) -> Result<(Vec<StructureRanking>, Vec<usize>)> {
    let k_hats = rankings
        .par_iter()
        .map(|r| predict_koff(model, &sequence_rows(r, features)))
        .collect::<Result<Vec<_>>>()?;
    let kept = rankings
        .iter()
        .zip(&k_hats)
        .map(|(r, &k)| truncate_candidates(r, k))
        .collect::<Result<Vec<_>>>()?;
    Ok((kept, k_hats))
}

//! Clustering scores and graph/embedding quality summaries.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cluster::ClusterAssignment;
use crate::data::{FeatureMatrix, LabelVector};
use crate::discovery::QualityCurve;
use crate::error::{Error, Result};
use crate::knn::dot;

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    /// A ratio had a zero denominator and was set by convention.
    #[serde(default)]
    pub degenerate: bool,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

struct Contingency {
    cells: HashMap<(u32, u32), usize>,
    clusters: HashMap<u32, usize>,
    classes: HashMap<u32, usize>,
}

fn contingency(pred: &ClusterAssignment, truth: &LabelVector) -> Result<Contingency> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = Contingency {
        cells: HashMap::new(),
        clusters: HashMap::new(),
        classes: HashMap::new(),
    };
    for (&p, &t) in pred.labels.iter().zip(truth.as_slice()) {
        *c.cells.entry((p, t)).or_default() += 1;
        *c.clusters.entry(p).or_default() += 1;
        *c.classes.entry(t).or_default() += 1;
    }
    Ok(c)
}

fn pairs(n: usize) -> u64 {
    (n as u64) * (n as u64).saturating_sub(1) / 2
}

/// Sum in ascending order, so the result depends only on the multiset of terms.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Scores over unordered same-cluster pairs.
///
/// With no predicted pairs, precision is 1 when there are no true pairs
/// either and 0 otherwise; recall with no true pairs is 1. Both cases set
/// `degenerate`.
pub fn pairwise_f(pred: &ClusterAssignment, truth: &LabelVector) -> Result<FScore> {
    let c = contingency(pred, truth)?;
    let tp = c.cells.values().map(|&n| pairs(n)).sum::<u64>() as f64;
    let predicted = c.clusters.values().map(|&n| pairs(n)).sum::<u64>() as f64;
    let actual = c.classes.values().map(|&n| pairs(n)).sum::<u64>() as f64;
    let mut degenerate = false;
    let precision = if predicted == 0.0 {
        degenerate = true;
        if actual == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp / predicted
    };
    let recall = if actual == 0.0 {
        degenerate = true;
        1.0
    } else {
        tp / actual
    };
    Ok(FScore {
        precision,
        recall,
        f: harmonic(precision, recall),
        degenerate,
    })
}

/// Item-averaged scores; each item counts itself in its cluster and class.
pub fn bcubed_f(pred: &ClusterAssignment, truth: &LabelVector) -> Result<FScore> {
    let c = contingency(pred, truth)?;
    let n = truth.len();
    if n == 0 {
        return Ok(FScore {
            precision: 1.0,
            recall: 1.0,
            f: 1.0,
            degenerate: true,
        });
    }
    let (mut p, mut r) = (Vec::with_capacity(c.cells.len()), Vec::with_capacity(c.cells.len()));
    for (&(cl, cs), &m) in &c.cells {
        let m2 = (m * m) as f64;
        p.push(m2 / c.clusters[&cl] as f64);
        r.push(m2 / c.classes[&cs] as f64);
    }
    let (precision, recall) = (sorted_sum(p) / n as f64, sorted_sum(r) / n as f64);
    Ok(FScore {
        precision,
        recall,
        f: harmonic(precision, recall),
        degenerate: false,
    })
}

/// Mean Q over probes at the full list and at the kept length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSummary {
    pub q_before: f64,
    pub q_after: f64,
    /// Probes included (those with at least one same-class vertex).
    pub probes: usize,
}

/// Averages over non-degenerate probes; `kept[i]` is the kept length of probe `i`.
pub fn q_summary(curves: &[QualityCurve], kept: &[usize]) -> Result<QSummary> {
    if curves.len() != kept.len() {
        return Err(Error::Shape(format!(
            "{} curves for {} lengths",
            curves.len(),
            kept.len()
        )));
    }
    let (mut before, mut after, mut probes) = (0.0, 0.0, 0usize);
    for (c, &j) in curves.iter().zip(kept) {
        if c.degenerate {
            continue;
        }
        if j == 0 || j > c.k() {
            return Err(Error::Parameter(format!(
                "kept length {j} outside 1..={} for probe {}",
                c.k(),
                c.probe
            )));
        }
        before += c.at(c.k());
        after += c.at(j);
        probes += 1;
    }
    let denom = probes.max(1) as f64;
    Ok(QSummary {
        q_before: before / denom,
        q_after: after / denom,
        probes,
    })
}

/// ROC of cosine similarity as a same-class detector on `sample_pairs`
/// uniformly drawn vertex pairs. Points run from (0, 0) to (1, 1).
pub fn roc_points(
    embeddings: &FeatureMatrix,
    labels: &LabelVector,
    sample_pairs: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if sample_pairs == 0 {
        return Err(Error::Parameter("sample_pairs must be at least 1".into()));
    }
    if labels.len() != embeddings.n() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            embeddings.n()
        )));
    }
    if labels.num_classes() < 2 || labels.class_sizes().iter().all(|&s| s < 2) {
        return Err(Error::Data("ROC needs both same-class and cross-class pairs".into()));
    }
    let n = embeddings.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scored = Vec::with_capacity(sample_pairs);
    while scored.len() < sample_pairs {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let s = dot(embeddings.row(i), embeddings.row(j));
        scored.push((s, labels.get(i) == labels.get(j)));
    }
    let positives = scored.iter().filter(|p| p.1).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data(format!(
            "pair sample has {positives} positive and {negatives} negative pairs"
        )));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (idx, &(s, same)) in scored.iter().enumerate() {
        if same {
            tp += 1;
        } else {
            fp += 1;
        }
        let boundary = scored.get(idx + 1).is_none_or(|next| next.0 != s);
        if boundary {
            points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
        }
    }
    Ok(points)
}

/// Trapezoidal area under ROC points sorted by false-positive rate.
pub fn auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn roc_to_tsv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr\ttpr\n");
    for (f, t) in points {
        out.push_str(&format!("{f}\t{t}\n"));
    }
    out
}

/// SNR value; serialized as the string `"inf"` when unbounded.
mod snr_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() => s.serialize_some("inf"),
            Some(x) => s.serialize_some(x),
            None => s.serialize_none(),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        match Option::<Raw>::deserialize(d)? {
            None => Ok(None),
            Some(Raw::Num(x)) => Ok(Some(x)),
            Some(Raw::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Raw::Text(t)) => Err(serde::de::Error::custom(format!("bad snr value {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pairwise: FScore,
    pub bcubed: FScore,
    pub num_clusters: usize,
    #[serde(default, with = "snr_serde")]
    pub snr: Option<f64>,
    #[serde(default)]
    pub q_before: Option<f64>,
    #[serde(default)]
    pub q_after: Option<f64>,
    #[serde(default)]
    pub roc: Option<Vec<(f64, f64)>>,
}

impl MetricsReport {
    pub fn clustering(pred: &ClusterAssignment, truth: &LabelVector) -> Result<Self> {
        Ok(MetricsReport {
            pairwise: pairwise_f(pred, truth)?,
            bcubed: bcubed_f(pred, truth)?,
            num_clusters: pred.num_clusters,
            snr: None,
            q_before: None,
            q_after: None,
            roc: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("metrics report: {e}")))
    }
}

//! Feature matrices, label vectors, synthetic data and their on-disk formats.
//!
//! Feature files are little-endian binary:
//!
//! | bytes | content                         |
//! |-------|---------------------------------|
//! | 4     | magic `ANFT`                    |
//! | 4     | `u32` version (= 1)             |
//! | 8     | `u64` row count `n`             |
//! | 8     | `u64` dimension `d`             |
//! | 4·n·d | `f32` values, row-major         |
//!
//! Label files are UTF-8 text with one integer class id per line.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"ANFT";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 24;

/// Rows whose norm is already this close to one are left untouched, which
/// keeps normalization idempotent and file round trips bit-exact.
const UNIT_NORM_SLACK: f64 = 1e-6;

/// `n × d` row-major matrix of unit-norm feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    /// Builds a matrix from raw row-major values, L2-normalizing every row.
    pub fn from_raw(n: usize, d: usize, mut data: Vec<f32>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Data("n ≥ 1 violated".into()));
        }
        if d == 0 {
            return Err(Error::Data("d ≥ 1 violated".into()));
        }
        if data.len() != n * d {
            return Err(Error::Shape(format!(
                "{} values for a {n}×{d} matrix",
                data.len()
            )));
        }
        for (i, row) in data.chunks_exact_mut(d).enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("row {i} contains NaN or Inf")));
            }
            normalize_row(row).map_err(|_| Error::Data(format!("row {i} has zero norm")))?;
        }
        Ok(FeatureMatrix { n, d, data })
    }

    /// Builds a matrix from a list of equally long rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != d {
                return Err(Error::Shape(format!("row {i} has length {}", r.as_ref().len())));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::from_raw(rows.len(), d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Rows `ids` gathered into a new matrix, in the given order.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Self::from_raw(ids.len(), self.d, data)
    }
}

/// Scales `row` to unit L2 norm. Accumulates in `f64`.
pub(crate) fn normalize_row(row: &mut [f32]) -> std::result::Result<(), ()> {
    let norm = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(());
    }
    if (norm - 1.0).abs() > UNIT_NORM_SLACK {
        let inv = 1.0 / norm;
        for x in row.iter_mut() {
            *x = ((*x as f64) * inv) as f32;
        }
    }
    Ok(())
}

/// Dense class ids `0..num_classes`, one per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<u32>,
    num_classes: usize,
}

impl LabelVector {
    /// Densifies raw ids to `0..C` in order of first occurrence.
    pub fn from_raw<I: IntoIterator<Item = u64>>(raw: I) -> Self {
        let mut map: HashMap<u64, u32> = HashMap::new();
        let labels = raw
            .into_iter()
            .map(|id| {
                let next = map.len() as u32;
                *map.entry(id).or_insert(next)
            })
            .collect();
        LabelVector {
            labels,
            num_classes: map.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    /// Number of samples carrying each class id.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_classes];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    pub fn select(&self, ids: &[usize]) -> Self {
        Self::from_raw(ids.iter().map(|&i| self.labels[i] as u64))
    }
}

/// Parameters of the hypersphere blob generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 20,
            per_class: 50,
            dim: 64,
            noise_sigma: 0.35,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.per_class == 0 || self.dim == 0 {
            return Err(Error::Parameter(
                "synthetic spec needs classes, per_class and dim ≥ 1".into(),
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Parameter("noise_sigma must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Expected norm of the noise vector, in units of `noise_sigma`.
pub const NOISE_NORM_SCALE: f64 = 5.0;

/// Draws `classes` random unit centers and `per_class` noisy samples around each.
///
/// Samples are laid out class by class. Each is `center + g`, with `g`
/// isotropic Gaussian of per-coordinate deviation
/// `noise_sigma * NOISE_NORM_SCALE / sqrt(dim)`, then re-normalized.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(FeatureMatrix, LabelVector)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let mut centers = vec![0f32; spec.classes * d];
    for c in centers.chunks_exact_mut(d) {
        loop {
            for x in c.iter_mut() {
                *x = StandardNormal.sample(&mut rng);
            }
            if normalize_row(c).is_ok() {
                break;
            }
        }
    }
    let scale = spec.noise_sigma * NOISE_NORM_SCALE / (d as f64).sqrt();
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut raw_labels = Vec::with_capacity(n);
    for (class, center) in centers.chunks_exact(d).enumerate() {
        for _ in 0..spec.per_class {
            for &c in center {
                let g: f64 = StandardNormal.sample(&mut rng);
                data.push((c as f64 + scale * g) as f32);
            }
            raw_labels.push(class as u64);
        }
    }
    Ok((FeatureMatrix::from_raw(n, d, data)?, LabelVector::from_raw(raw_labels)))
}

pub fn encode_features(m: &FeatureMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * m.data.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.n as u64).to_le_bytes());
    buf.extend_from_slice(&(m.d as u64).to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(Error::Truncation {
            expected: FEATURE_HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::Format("bad magic, expected ANFT".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(FEATURE_HEADER_LEN as u64))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncation {
            expected,
            found: bytes.len() as u64,
        });
    }
    let data = bytes[FEATURE_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::from_raw(n as usize, d as usize, data)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

pub fn save_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_features(m))
}

pub fn parse_labels(text: &str) -> Result<LabelVector> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tok = line.trim();
        let id: u64 = tok.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("expected a non-negative integer, found {tok:?}"),
        })?;
        raw.push(id);
    }
    if raw.is_empty() {
        return Err(Error::Data("label file is empty".into()));
    }
    Ok(LabelVector::from_raw(raw))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

pub fn format_ids(ids: &[u32]) -> String {
    let mut s = String::with_capacity(ids.len() * 3);
    for id in ids {
        s.push_str(&id.to_string());
        s.push('\n');
    }
    s
}

pub fn save_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, format_ids(&labels.labels).as_bytes())
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

//! Dataset and batch model plus the two on-disk feature formats.
//!
//! CSV: UTF-8, header `id,label,f0,f1,...`, one sample per row.
//!
//! Binary (`SMCF`): a 16-byte header of magic `SMCF`, `u32` LE sample count,
//! `u32` LE feature dimension and 4 reserved zero bytes, followed by
//! `n × d` little-endian `f32` values row-major and then `n` little-endian
//! `i32` labels.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SMCF_MAGIC: &[u8; 4] = b"SMCF";
pub const SMCF_HEADER_LEN: usize = 16;

/// Per-sample feature vectors with labels and stable identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Vec<f64>,
    labels: Vec<usize>,
    ids: Vec<String>,
    d_feat: usize,
    n_classes: usize,
}

impl FeatureSet {
    /// Builds a feature set from row-major features.
    ///
    /// `n_classes` is inferred as `max(label) + 1` when `None`.
    pub fn new(
        features: Vec<f64>,
        d_feat: usize,
        labels: Vec<usize>,
        ids: Vec<String>,
        n_classes: Option<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidInput("feature set needs at least one sample".into()));
        }
        if d_feat == 0 {
            return Err(Error::InvalidInput("feature dimension must be at least 1".into()));
        }
        if features.len() != n * d_feat {
            return Err(Error::DimensionMismatch {
                context: "feature matrix",
                expected: n * d_feat,
                got: features.len(),
            });
        }
        if ids.len() != n {
            return Err(Error::DimensionMismatch { context: "sample ids", expected: n, got: ids.len() });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        let inferred = labels.iter().copied().max().unwrap_or(0) + 1;
        let n_classes = n_classes.unwrap_or(inferred);
        if inferred > n_classes {
            return Err(Error::InvalidInput(format!(
                "label {} outside [0, {n_classes})",
                inferred - 1
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate sample id {id:?}")));
            }
        }
        Ok(Self { features, labels, ids, d_feat, n_classes })
    }

    /// Convenience constructor with ids `0..n`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("ragged feature rows".into()));
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(rows.concat(), d, labels, ids, None)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_feat..(i + 1) * self.d_feat]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// The listed rows, in the listed order, keeping the class count.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(idx.len() * self.d_feat);
        let mut labels = Vec::with_capacity(idx.len());
        let mut ids = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::IndexOutOfBounds { index: i, size: self.len() });
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            ids.push(self.ids[i].clone());
        }
        Self::new(features, self.d_feat, labels, ids, Some(self.n_classes))
    }

    /// Widens the class count, e.g. so train and validation splits agree.
    pub fn with_n_classes(mut self, n_classes: usize) -> Result<Self> {
        if n_classes < self.n_classes {
            return Err(Error::InvalidInput(format!(
                "cannot shrink class count from {} to {n_classes}",
                self.n_classes
            )));
        }
        self.n_classes = n_classes;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchKind {
    Train,
    Validation,
}

/// A set of sample indices into a parent [`FeatureSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    indices: Vec<usize>,
    kind: BatchKind,
}

impl Batch {
    pub fn new(indices: Vec<usize>, kind: BatchKind, parent: &FeatureSet) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("batch must be non-empty".into()));
        }
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in &indices {
            if i >= parent.len() {
                return Err(Error::IndexOutOfBounds { index: i, size: parent.len() });
            }
            if !seen.insert(i) {
                return Err(Error::InvalidInput(format!("duplicate index {i} in batch")));
            }
        }
        Ok(Self { indices, kind })
    }

    /// The whole feature set, in order.
    pub fn full(parent: &FeatureSet, kind: BatchKind) -> Self {
        Self { indices: (0..parent.len()).collect(), kind }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn kind(&self) -> BatchKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn read_csv(path: &Path) -> Result<FeatureSet> {
    let file = std::fs::File::open(path)?;
    parse_csv(file)
}

pub fn parse_csv<R: Read>(reader: R) -> Result<FeatureSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(Error::Parse("expected header `id,label,f0,f1,...`".into()));
    }
    for (k, h) in headers.iter().skip(2).enumerate() {
        if h != format!("f{k}") {
            return Err(Error::Parse(format!("expected column f{k}, found {h:?}")));
        }
    }
    let d = headers.len() - 2;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.len() != d + 2 {
            return Err(Error::Parse(format!("row {} has {} fields, expected {}", line + 1, rec.len(), d + 2)));
        }
        ids.push(rec[0].to_string());
        let label: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: bad label {:?}", line + 1, &rec[1])))?;
        if label < 0 {
            return Err(Error::Parse(format!("row {}: negative label {label}", line + 1)));
        }
        labels.push(label as usize);
        for f in rec.iter().skip(2) {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad feature {f:?}", line + 1)))?;
            features.push(v);
        }
    }
    FeatureSet::new(features, d, labels, ids, None)
}

pub fn write_csv<W: Write>(set: &FeatureSet, mut out: W) -> Result<()> {
    let mut header = String::from("id,label");
    for k in 0..set.d_feat() {
        header.push_str(&format!(",f{k}"));
    }
    writeln!(out, "{header}")?;
    for i in 0..set.len() {
        let mut line = format!("{},{}", set.id(i), set.label(i));
        for v in set.row(i) {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<FeatureSet> {
    let bytes = std::fs::read(path)?;
    parse_binary(&bytes)
}

pub fn parse_binary(bytes: &[u8]) -> Result<FeatureSet> {
    if bytes.len() < SMCF_HEADER_LEN || &bytes[..4] != SMCF_MAGIC {
        return Err(Error::Parse("missing SMCF header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = SMCF_HEADER_LEN + 4 * n * d + 4 * n;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "SMCF payload is {} bytes, expected {expected} for n={n}, d={d}",
            bytes.len()
        )));
    }
    let body = &bytes[SMCF_HEADER_LEN..];
    let features: Vec<f64> = body[..4 * n * d]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut labels = Vec::with_capacity(n);
    for c in body[4 * n * d..].chunks_exact(4) {
        let l = i32::from_le_bytes(c.try_into().unwrap());
        if l < 0 {
            return Err(Error::Parse(format!("negative label {l}")));
        }
        labels.push(l as usize);
    }
    let ids = (0..n).map(|i| i.to_string()).collect();
    FeatureSet::new(features, d, labels, ids, None)
}

/// Encodes a feature set as SMCF. Features are narrowed to `f32`.
pub fn encode_binary(set: &FeatureSet) -> Vec<u8> {
    let n = set.len();
    let d = set.d_feat();
    let mut out = Vec::with_capacity(SMCF_HEADER_LEN + 4 * n * (d + 1));
    out.extend_from_slice(SMCF_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for i in 0..n {
        for &v in set.row(i) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for &l in set.labels() {
        out.extend_from_slice(&(l as i32).to_le_bytes());
    }
    out
}

/// Two isotropic unit-variance Gaussian classes whose means sit
/// `separation` standard deviations apart along the all-ones direction.
pub fn gaussian_blobs(n: usize, d: usize, separation: f64, seed: u64) -> Result<FeatureSet> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput("gaussian_blobs needs n ≥ 1 and d ≥ 1".into()));
    }
    let mut rng = Pcg64::seed_from_u64(seed);
    let offset = 0.5 * separation / (d as f64).sqrt();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 0 { -1.0 } else { 1.0 };
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(sign * offset + z);
        }
        labels.push(label);
    }
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    FeatureSet::new(features, d, labels, ids, Some(2))
}

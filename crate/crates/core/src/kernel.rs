//! Pairwise similarity kernels over a batch.
//!
//! Every kernel is dense, symmetric and bounded to `[0, 1]`. Cosine similarity
//! is shifted from `[-1, 1]` to `[0, 1]` so that `1 - s_ij` is a valid distance
//! for the disparity objectives.

use serde::{Deserialize, Serialize};

use crate::data::{Batch, FeatureSet};
use crate::error::{Error, Result};
use crate::reward::GradientMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMetric {
    CosineShifted,
    Rbf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    entries: Vec<f64>,
    n: usize,
    metric: KernelMetric,
}

impl SimilarityMatrix {
    /// Wraps a dense row-major matrix after checking symmetry and range.
    pub fn from_dense(entries: Vec<f64>, n: usize, metric: KernelMetric) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("kernel ground set must be non-empty".into()));
        }
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch { context: "kernel entries", expected: n * n, got: entries.len() });
        }
        for i in 0..n {
            for j in 0..n {
                let v = entries[i * n + j];
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!("kernel entry ({i},{j}) = {v} outside [0,1]")));
                }
                if v != entries[j * n + i] {
                    return Err(Error::InvalidInput(format!("kernel not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { entries, n, metric })
    }

    pub fn from_rows(rows: &[Vec<f64>], metric: KernelMetric) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("kernel rows must form a square matrix".into()));
        }
        Self::from_dense(rows.concat(), n, metric)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn ground_size(&self) -> usize {
        self.n
    }

    pub fn metric(&self) -> KernelMetric {
        self.metric
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Principal submatrix over `idx`, in the given order.
    pub fn principal(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * idx.len());
        for &i in idx {
            for &j in idx {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

/// Builds the kernel over `subset` in subset order.
///
/// `bandwidth` is only read for [`KernelMetric::Rbf`]; see
/// [`median_bandwidth`] for the default choice.
pub fn build_kernel(
    features: &FeatureSet,
    subset: &Batch,
    metric: KernelMetric,
    bandwidth: f64,
) -> Result<SimilarityMatrix> {
    let idx = subset.indices();
    if idx.is_empty() {
        return Err(Error::InvalidInput("kernel subset must be non-empty".into()));
    }
    let rows: Vec<&[f64]> = idx.iter().map(|&i| features.row(i)).collect();
    match metric {
        KernelMetric::CosineShifted => {
            let ids: Vec<&str> = idx.iter().map(|&i| features.id(i)).collect();
            cosine_shifted(&rows, |k| ids[k].to_string())
        }
        KernelMetric::Rbf => {
            if !(bandwidth > 0.0 && bandwidth.is_finite()) {
                return Err(Error::InvalidInput(format!("rbf bandwidth must be positive, got {bandwidth}")));
            }
            Ok(rbf(&rows, bandwidth))
        }
    }
}

/// Cosine-shifted kernel over the columns of a per-sample gradient matrix.
pub fn gradient_features(grads: &GradientMatrix) -> Result<SimilarityMatrix> {
    let cols: Vec<&[f64]> = (0..grads.m()).map(|j| grads.column(j)).collect();
    cosine_shifted(&cols, |k| format!("gradient column {k}"))
}

/// Cosine-shifted kernel over gradient columns where a zero column is
/// treated as orthogonal to everything (similarity 0.5) instead of failing.
///
/// Saturated samples produce exactly-zero gradients mid-training; the strict
/// [`gradient_features`] rejects them.
pub fn gradient_kernel(columns: &[&[f64]]) -> Result<SimilarityMatrix> {
    let n = columns.len();
    if n == 0 {
        return Err(Error::InvalidInput("kernel ground set must be non-empty".into()));
    }
    let mut norms = Vec::with_capacity(n);
    for v in columns {
        let norm = dot(v, v).sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient column norm"));
        }
        norms.push(norm);
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n + i] = 1.0;
        for j in i + 1..n {
            let c = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                (dot(columns[i], columns[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            let s = 0.5 * (c + 1.0);
            entries[i * n + j] = s;
            entries[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix { entries, n, metric: KernelMetric::CosineShifted })
}

/// Median pairwise Euclidean distance within the subset.
///
/// Falls back to 1.0 when every pair coincides.
pub fn median_bandwidth(features: &FeatureSet, subset: &Batch) -> f64 {
    let idx = subset.indices();
    let mut dists = Vec::with_capacity(idx.len() * idx.len().saturating_sub(1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            dists.push(sq_dist(features.row(i), features.row(j)).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let med = if dists.len() % 2 == 0 { 0.5 * (dists[mid - 1] + dists[mid]) } else { dists[mid] };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

pub(crate) fn cosine_shifted(vectors: &[&[f64]], name: impl Fn(usize) -> String) -> Result<SimilarityMatrix> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::InvalidInput("kernel ground set must be non-empty".into()));
    }
    let mut norms = Vec::with_capacity(n);
    for (k, v) in vectors.iter().enumerate() {
        let norm = dot(v, v).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm { id: name(k) });
        }
        norms.push(norm);
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n + i] = 1.0;
        for j in i + 1..n {
            let c = (dot(vectors[i], vectors[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            let s = 0.5 * (c + 1.0);
            entries[i * n + j] = s;
            entries[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix { entries, n, metric: KernelMetric::CosineShifted })
}

fn rbf(vectors: &[&[f64]], bandwidth: f64) -> SimilarityMatrix {
    let n = vectors.len();
    let denom = 2.0 * bandwidth * bandwidth;
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n + i] = 1.0;
        for j in i + 1..n {
            let s = (-sq_dist(vectors[i], vectors[j]) / denom).exp();
            entries[i * n + j] = s;
            entries[j * n + i] = s;
        }
    }
    SimilarityMatrix { entries, n, metric: KernelMetric::Rbf }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

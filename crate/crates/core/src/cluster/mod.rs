//! KNN graphs, graph-degree-linkage agglomeration, k-means and NMI.

mod agglo;
mod kmeans;
mod knn;
mod nmi;

pub use agglo::{agglomerate, agglomerate_graph, gdl_affinity};
pub use kmeans::{kmeans, KMeans, DEFAULT_MAX_ITERS};
pub use knn::{build_knn_graph, KnnGraph, DEFAULT_KS, DEFAULT_SCALE};
pub use nmi::nmi;

use thiserror::Error;

use crate::net3d::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("feature matrix is empty")]
    Empty,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{len} values do not fill a {rows}x{cols} matrix")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("target cluster count {target} is not reachable from {current} clusters")]
    BadTarget { target: usize, current: usize },
    #[error("clusters {0} and {1} share members")]
    OverlappingClusters(usize, usize),
    #[error("label sequences have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("invalid partition: {0}")]
    BadPartition(String),
}

/// `n x d` real matrix; row `i` is the representation of sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self, ClusterError> {
        if n == 0 || d == 0 {
            return Err(ClusterError::Empty);
        }
        if data.len() != n * d {
            return Err(ClusterError::ShapeMismatch { rows: n, cols: d, len: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite { row: i / d, col: i % d });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_matrix(m: &Matrix<f32>) -> Result<Self, ClusterError> {
        Self::new(m.rows(), m.cols(), m.data().iter().map(|&v| f64::from(v)).collect())
    }

    /// One-dimensional samples.
    pub fn from_scalars(values: &[f64]) -> Result<Self, ClusterError> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Assignment of `n` samples to `m` clusters with labels `0..m`.
///
/// Labels are compact and numbered in order of each cluster's smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterPartition {
    pub fn singletons(n: usize) -> Self {
        Self { labels: (0..n).collect(), members: (0..n).map(|i| vec![i]).collect() }
    }

    /// Canonicalizes arbitrary labels: clusters are renumbered by smallest member.
    pub fn from_labels(raw: &[usize]) -> Result<Self, ClusterError> {
        if raw.is_empty() {
            return Err(ClusterError::Empty);
        }
        let mut map = std::collections::HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut labels = Vec::with_capacity(raw.len());
        for (i, &r) in raw.iter().enumerate() {
            let next = members.len();
            let id = *map.entry(r).or_insert(next);
            if id == next {
                members.push(Vec::new());
            }
            members[id].push(i);
            labels.push(id);
        }
        Ok(Self { labels, members })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of clusters.
    pub fn clusters(&self) -> usize {
        self.members.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    /// Checks the partition invariants: labels below the cluster count,
    /// nonempty clusters, member lists consistent with the labels.
    pub fn validate(&self) -> Result<(), ClusterError> {
        let m = self.members.len();
        if let Some(&l) = self.labels.iter().find(|&&l| l >= m) {
            return Err(ClusterError::BadPartition(format!("label {l} >= {m} clusters")));
        }
        for (c, mem) in self.members.iter().enumerate() {
            if mem.is_empty() {
                return Err(ClusterError::BadPartition(format!("cluster {c} is empty")));
            }
            if mem.iter().any(|&i| self.labels.get(i) != Some(&c)) {
                return Err(ClusterError::BadPartition(format!("member list of cluster {c} disagrees with labels")));
            }
        }
        let total: usize = self.members.iter().map(Vec::len).sum();
        if total != self.labels.len() {
            return Err(ClusterError::BadPartition(format!("{total} members for {} samples", self.labels.len())));
        }
        Ok(())
    }
}

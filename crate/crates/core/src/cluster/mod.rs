//! Clustering engines and model selection.
//!
//! Three fitters share one [`ClusterModel`] output: Lloyd's k-means with
//! k-means++ seeding, Ward-linkage agglomerative clustering, and flat-kernel
//! mean-shift. Labels are always canonical: clusters are numbered by the
//! first row that belongs to them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureKind, FeatureMatrix};

mod agglomerative;
mod kmeans;
mod meanshift;
mod select;
mod silhouette;

pub use agglomerative::{agglomerative, Dendrogram, Merge};
pub use kmeans::kmeans;
pub use meanshift::{estimate_bandwidth, meanshift, Bandwidth};
pub use select::{choose_k, select_k, KStrategy, SilhouetteReport};
pub use silhouette::{silhouette, silhouette_with_metric, FULL_SILHOUETTE_LIMIT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("cannot form {k} clusters from {rows} rows")]
    TooFewRows { rows: usize, k: usize },
    #[error("invalid clustering config: {0}")]
    InvalidConfig(String),
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("silhouette needs at least 2 clusters")]
    SingleCluster,
    #[error("{labels} labels for {rows} rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("empty or invalid k range [{k_min}, {k_max}]")]
    EmptyRange { k_min: usize, k_max: usize },
    #[error("vector has dimension {actual}, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{0:?} does not take a cluster count")]
    MethodHasNoK(Method),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KMeans,
    Agglomerative,
    MeanShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::Euclidean => sq_euclidean(a, b).sqrt(),
            Metric::Cosine => cosine_distance(a, b),
        }
    }

    pub fn distance_f64(self, a: &[f32], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).powi(2)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (&x, &y) in a.iter().zip(b) {
                    let x = x as f64;
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                cosine_from_parts(dot, na, nb)
            }
        }
    }
}

pub(crate) fn sq_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    cosine_from_parts(dot, na, nb)
}

fn cosine_from_parts(dot: f64, na: f64, nb: f64) -> f64 {
    if na == 0.0 && nb == 0.0 {
        0.0
    } else if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub method: Method,
    /// Cluster count; ignored by mean-shift.
    pub k: usize,
    pub metric: Metric,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest-inertia run wins.
    pub n_init: usize,
    /// Mean-shift kernel radius; `None` estimates it from the data.
    pub bandwidth: Option<f64>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            method: Method::KMeans,
            k: 4,
            metric: Metric::Euclidean,
            seed: 0,
            max_iter: 300,
            tol: 1e-6,
            n_init: 4,
            bandwidth: None,
        }
    }
}

impl ClusteringConfig {
    pub fn new(method: Method, k: usize) -> Self {
        Self { method, k, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.k == 0 {
            return Err(ClusterError::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(ClusterError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(ClusterError::InvalidConfig("tol must be positive".into()));
        }
        if self.n_init == 0 {
            return Err(ClusterError::InvalidConfig("n_init must be at least 1".into()));
        }
        if let Some(bw) = self.bandwidth {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(ClusterError::InvalidBandwidth(bw));
            }
        }
        Ok(())
    }
}

/// A fitted clustering. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub method: Method,
    pub metric: Metric,
    pub seed: u64,
    pub k_effective: usize,
    pub dim: usize,
    /// One row per cluster.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<u32>,
    pub inertia: f64,
    pub bandwidth: Option<f64>,
}

/// JSON side of the persisted model; centroids and assignments live in
/// binary files next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub method: Method,
    pub k: usize,
    pub metric: Metric,
    pub seed: u64,
    pub inertia: f64,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureKind>,
}

impl ClusterModel {
    pub fn manifest(&self, features: Option<FeatureKind>) -> ModelManifest {
        ModelManifest {
            method: self.method,
            k: self.k_effective,
            metric: self.metric,
            seed: self.seed,
            inertia: self.inertia,
            dim: self.dim,
            bandwidth: self.bandwidth,
            features,
        }
    }

    /// Centroids as an `f32` matrix of the given kind.
    pub fn centroid_matrix(&self, kind: FeatureKind) -> FeatureMatrix {
        if self.centroids.is_empty() {
            return FeatureMatrix::empty(kind, self.dim);
        }
        FeatureMatrix::from_rows(kind, &self.centroids)
    }

    pub fn from_parts(
        manifest: &ModelManifest,
        centroids: &FeatureMatrix,
        assignments: Vec<u32>,
    ) -> Result<Self, ClusterError> {
        if centroids.rows() != manifest.k || centroids.cols() != manifest.dim {
            return Err(ClusterError::InvalidConfig(format!(
                "centroid matrix is {}x{}, manifest says {}x{}",
                centroids.rows(),
                centroids.cols(),
                manifest.k,
                manifest.dim
            )));
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a as usize >= manifest.k) {
            return Err(ClusterError::InvalidConfig(format!("assignment {bad} out of range")));
        }
        Ok(Self {
            method: manifest.method,
            metric: manifest.metric,
            seed: manifest.seed,
            k_effective: manifest.k,
            dim: manifest.dim,
            centroids: (0..centroids.rows()).map(|i| centroids.row_f64(i)).collect(),
            assignments,
            inertia: manifest.inertia,
            bandwidth: manifest.bandwidth,
        })
    }

    /// Members of each cluster, in row order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k_effective];
        for (i, &a) in self.assignments.iter().enumerate() {
            out[a as usize].push(i);
        }
        out
    }

    /// Nearest-centroid label for a new vector; ties go to the smaller label.
    pub fn assign(&self, v: &[f32]) -> Result<u32, ClusterError> {
        if v.len() != self.dim {
            return Err(ClusterError::DimensionMismatch { expected: self.dim, actual: v.len() });
        }
        Ok(nearest_f64(self.metric, v, &self.centroids).0 as u32)
    }
}

/// Free-function form of [`ClusterModel::assign`].
pub fn assign(model: &ClusterModel, v: &[f32]) -> Result<u32, ClusterError> {
    model.assign(v)
}

/// Fits whichever method `cfg` names.
pub fn fit(m: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<ClusterModel, ClusterError> {
    match cfg.method {
        Method::KMeans => kmeans(m, cfg),
        Method::Agglomerative => agglomerative(m, cfg),
        Method::MeanShift => {
            let bw = match cfg.bandwidth {
                Some(b) => Bandwidth::Fixed(b),
                None => Bandwidth::Auto,
            };
            meanshift::meanshift_with(m, bw, cfg.metric, cfg.max_iter, cfg.tol)
        }
    }
}

/// Index and distance of the nearest centre; ties go to the lower index.
pub(crate) fn nearest_f64(metric: Metric, v: &[f32], centres: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centres.iter().enumerate() {
        let d = metric.distance_f64(v, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Renumbers labels by first occurrence and returns the old-label order.
pub(crate) fn canonical_relabel(labels: &mut [u32]) -> Vec<u32> {
    let mut order: Vec<u32> = Vec::new();
    let mut map = std::collections::HashMap::new();
    for l in labels.iter_mut() {
        let next = map.len() as u32;
        let new = *map.entry(*l).or_insert_with(|| {
            order.push(*l);
            next
        });
        *l = new;
    }
    order
}

/// Per-cluster means of the assigned rows, in `f64`.
pub(crate) fn member_means(m: &FeatureMatrix, labels: &[u32], k: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; m.cols()]; k];
    let mut counts = vec![0usize; k];
    for (row, &l) in m.iter_rows().zip(labels) {
        counts[l as usize] += 1;
        for (s, &x) in sums[l as usize].iter_mut().zip(row) {
            *s += x as f64;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    sums
}

/// Sum of squared Euclidean distances (or plain cosine distances) to the
/// assigned centre.
pub(crate) fn inertia(m: &FeatureMatrix, labels: &[u32], centres: &[Vec<f64>], metric: Metric) -> f64 {
    m.iter_rows()
        .zip(labels)
        .map(|(row, &l)| {
            let d = metric.distance_f64(row, &centres[l as usize]);
            match metric {
                Metric::Euclidean => d * d,
                Metric::Cosine => d,
            }
        })
        .sum()
}

/// Builds a model from raw labels, applying canonical relabelling and
/// reordering `centres` to match.
pub(crate) fn finish_model(
    m: &FeatureMatrix,
    mut labels: Vec<u32>,
    centres: Vec<Vec<f64>>,
    method: Method,
    metric: Metric,
    seed: u64,
    bandwidth: Option<f64>,
) -> ClusterModel {
    let order = canonical_relabel(&mut labels);
    let centroids: Vec<Vec<f64>> = order.iter().map(|&old| centres[old as usize].clone()).collect();
    let inertia = inertia(m, &labels, &centroids, metric);
    ClusterModel {
        method,
        metric,
        seed,
        k_effective: centroids.len(),
        dim: m.cols(),
        centroids,
        assignments: labels,
        inertia,
        bandwidth,
    }
}

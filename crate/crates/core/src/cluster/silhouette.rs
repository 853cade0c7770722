use std::collections::HashMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ClusterError, Metric};
use crate::features::FeatureMatrix;

/// Above this many rows the score is computed on a uniform subsample of
/// this size.
pub const FULL_SILHOUETTE_LIMIT: usize = 10_000;

const SUBSAMPLE_SEED: u64 = 0x5EED;

/// Mean silhouette under the Euclidean metric.
pub fn silhouette(m: &FeatureMatrix, labels: &[u32]) -> Result<f64, ClusterError> {
    silhouette_with_metric(m, labels, Metric::Euclidean)
}

/// Mean of `(b − a) / max(a, b)` over all rows, where `a` is the mean
/// distance to the row's own cluster and `b` the smallest mean distance to
/// another cluster. Rows in singleton clusters score 0.
pub fn silhouette_with_metric(m: &FeatureMatrix, labels: &[u32], metric: Metric) -> Result<f64, ClusterError> {
    if labels.len() != m.rows() {
        return Err(ClusterError::LabelCount { labels: labels.len(), rows: m.rows() });
    }
    if m.rows() > FULL_SILHOUETTE_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(SUBSAMPLE_SEED);
        let mut pick = index::sample(&mut rng, m.rows(), FULL_SILHOUETTE_LIMIT).into_vec();
        pick.sort_unstable();
        let sub = m.select_rows(&pick);
        let sub_labels: Vec<u32> = pick.iter().map(|&i| labels[i]).collect();
        return score(&sub, &sub_labels, metric);
    }
    score(m, labels, metric)
}

fn score(m: &FeatureMatrix, labels: &[u32], metric: Metric) -> Result<f64, ClusterError> {
    let mut dense: HashMap<u32, usize> = HashMap::new();
    let compact: Vec<usize> = labels
        .iter()
        .map(|l| {
            let next = dense.len();
            *dense.entry(*l).or_insert(next)
        })
        .collect();
    let k = dense.len();
    if k < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let mut counts = vec![0usize; k];
    compact.iter().for_each(|&c| counts[c] += 1);

    let n = m.rows();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = compact[i];
            if counts[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0f64; k];
            let ri = m.row(i);
            for j in 0..n {
                if j != i {
                    sums[compact[j]] += metric.distance(ri, m.row(j));
                }
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (0..k).filter(|&c| c != own).map(|c| sums[c] / counts[c] as f64).fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / n as f64)
}

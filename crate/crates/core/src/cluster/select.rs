use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{kmeans, silhouette_with_metric, ClusterError, ClusteringConfig, Dendrogram, Method};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KStrategy {
    /// The k just before the largest relative score drop.
    #[default]
    PreDrop,
    /// The k with the highest score.
    MaxScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteReport {
    pub per_k: BTreeMap<usize, f64>,
    pub chosen_k: usize,
    pub strategy: KStrategy,
}

/// Picks k from a score table. Depends only on the scores; ties resolve to
/// the smaller k.
pub fn choose_k(per_k: &BTreeMap<usize, f64>, strategy: KStrategy) -> Option<usize> {
    let (&first, _) = per_k.iter().next()?;
    match strategy {
        KStrategy::MaxScore => {
            let mut best = (first, f64::NEG_INFINITY);
            for (&k, &s) in per_k {
                if s > best.1 {
                    best = (k, s);
                }
            }
            Some(best.0)
        }
        KStrategy::PreDrop => {
            let scores: Vec<(usize, f64)> = per_k.iter().map(|(&k, &s)| (k, s)).collect();
            let mut best = (first, f64::NEG_INFINITY);
            for w in scores.windows(2) {
                let (k, s) = w[0];
                let drop = (s - w[1].1) / s.abs().max(1e-12);
                if drop > best.1 {
                    best = (k, drop);
                }
            }
            Some(best.0)
        }
    }
}

/// Fits every k in `[k_min, k_max]` with `base.method`, scores each with
/// the mean silhouette under `base.metric`, and picks k by `strategy`.
/// Agglomerative runs build the dendrogram once and cut it per k.
pub fn select_k(
    m: &FeatureMatrix,
    base: &ClusteringConfig,
    k_min: usize,
    k_max: usize,
    strategy: KStrategy,
) -> Result<SilhouetteReport, ClusterError> {
    if k_min < 2 || k_max < k_min + 1 {
        return Err(ClusterError::EmptyRange { k_min, k_max });
    }
    if m.rows() < k_max {
        return Err(ClusterError::TooFewRows { rows: m.rows(), k: k_max });
    }
    let mut per_k = BTreeMap::new();
    match base.method {
        Method::MeanShift => return Err(ClusterError::MethodHasNoK(Method::MeanShift)),
        Method::KMeans => {
            for k in k_min..=k_max {
                let model = kmeans(m, &ClusteringConfig { k, ..base.clone() })?;
                per_k.insert(k, silhouette_with_metric(m, &model.assignments, base.metric)?);
            }
        }
        Method::Agglomerative => {
            base.validate()?;
            let tree = Dendrogram::ward(m, base.metric);
            for k in k_min..=k_max {
                per_k.insert(k, silhouette_with_metric(m, &tree.cut(k), base.metric)?);
            }
        }
    }
    let chosen_k = choose_k(&per_k, strategy).expect("range is non-empty");
    Ok(SilhouetteReport { per_k, chosen_k, strategy })
}

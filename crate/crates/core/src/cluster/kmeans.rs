use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    finish_model, inertia, member_means, nearest_f64, ClusterError, ClusterModel, ClusteringConfig, Method, Metric,
};
use crate::features::FeatureMatrix;

/// Lloyd's k-means from k-means++ seeding, best of `cfg.n_init` restarts.
pub fn kmeans(m: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<ClusterModel, ClusterError> {
    cfg.validate()?;
    if m.rows() < cfg.k || m.rows() == 0 {
        return Err(ClusterError::TooFewRows { rows: m.rows(), k: cfg.k });
    }
    let mut best: Option<(f64, Vec<u32>, Vec<Vec<f64>>)> = None;
    for run in 0..cfg.n_init {
        let seed = cfg.seed.wrapping_add((run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let run = lloyd(m, cfg, seed);
        if best.as_ref().is_none_or(|b| run.inertia < b.0) {
            best = Some((run.inertia, run.labels, run.centres));
        }
    }
    let (_, labels, centres) = best.expect("n_init >= 1");
    Ok(finish_model(m, labels, centres, Method::KMeans, cfg.metric, cfg.seed, None))
}

pub(crate) struct LloydRun {
    pub labels: Vec<u32>,
    pub centres: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    #[cfg_attr(not(test), allow(dead_code))]
    pub history: Vec<f64>,
}

pub(crate) fn lloyd(m: &FeatureMatrix, cfg: &ClusteringConfig, seed: u64) -> LloydRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.k;
    let mut centres = plus_plus(m, k, cfg.metric, &mut rng);
    let mut labels = vec![u32::MAX; m.rows()];
    let mut history = Vec::new();

    for _ in 0..cfg.max_iter {
        let changed = assign_all(m, &centres, cfg.metric, &mut labels);
        repair_empty(m, &centres, cfg.metric, &mut labels, k);
        history.push(inertia(m, &labels, &centres, cfg.metric));
        if !changed {
            break;
        }
        let updated = member_means(m, &labels, k);
        let shift = centres
            .iter()
            .zip(&updated)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        centres = updated;
        if shift < cfg.tol {
            assign_all(m, &centres, cfg.metric, &mut labels);
            repair_empty(m, &centres, cfg.metric, &mut labels, k);
            centres = member_means(m, &labels, k);
            break;
        }
    }
    let inertia = inertia(m, &labels, &centres, cfg.metric);
    LloydRun { labels, centres, inertia, history }
}

/// Returns whether any label changed.
fn assign_all(m: &FeatureMatrix, centres: &[Vec<f64>], metric: Metric, labels: &mut [u32]) -> bool {
    let mut changed = false;
    for (row, l) in m.iter_rows().zip(labels.iter_mut()) {
        let c = nearest_f64(metric, row, centres).0 as u32;
        if *l != c {
            *l = c;
            changed = true;
        }
    }
    changed
}

/// Gives every empty cluster the point farthest from its current centre,
/// taken from a cluster that can spare it.
fn repair_empty(m: &FeatureMatrix, centres: &[Vec<f64>], metric: Metric, labels: &mut [u32], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l as usize] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let donor = (0..m.rows())
            .filter(|&i| counts[labels[i] as usize] > 1)
            .map(|i| (i, metric.distance_f64(m.row(i), &centres[labels[i] as usize])))
            .fold(None::<(usize, f64)>, |acc, (i, d)| match acc {
                Some((_, bd)) if bd >= d => acc,
                _ => Some((i, d)),
            });
        match donor {
            Some((i, _)) => labels[i] = empty as u32,
            None => return,
        }
    }
}

fn plus_plus(m: &FeatureMatrix, k: usize, metric: Metric, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = m.rows();
    let mut centres = vec![m.row_f64(rng.random_range(0..n))];
    let mut d2: Vec<f64> = m.iter_rows().map(|r| metric.distance_f64(r, &centres[0]).powi(2)).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = m.row_f64(idx);
        for (slot, r) in d2.iter_mut().zip(m.iter_rows()) {
            *slot = slot.min(metric.distance_f64(r, &c).powi(2));
        }
        centres.push(c);
    }
    centres
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    fn matrix(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(FeatureKind::Latent, rows)
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let m = matrix(&[&[0.0, 0.0], &[2.0, 2.0]]);
        let model = kmeans(&m, &ClusteringConfig::new(Method::KMeans, 1)).unwrap();
        assert_eq!(model.centroids, vec![vec![1.0, 1.0]]);
        assert!((model.inertia - 4.0).abs() < 1e-12);
    }

    #[test]
    fn separated_points_split_cleanly() {
        let m = matrix(&[&[0.0], &[0.1], &[10.0], &[10.1]]);
        let model = kmeans(&m, &ClusteringConfig::new(Method::KMeans, 2)).unwrap();
        assert_eq!(model.assignments, vec![0, 0, 1, 1]);
    }

    #[test]
    fn too_few_rows() {
        let m = matrix(&[&[0.0], &[1.0]]);
        assert_eq!(
            kmeans(&m, &ClusteringConfig::new(Method::KMeans, 3)),
            Err(ClusterError::TooFewRows { rows: 2, k: 3 })
        );
    }

    #[test]
    fn duplicate_points_still_fill_all_clusters() {
        let m = matrix(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        let model = kmeans(&m, &ClusteringConfig::new(Method::KMeans, 3)).unwrap();
        assert_eq!(model.k_effective, 3);
        let mut counts = [0; 3];
        model.assignments.iter().for_each(|&a| counts[a as usize] += 1);
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn inertia_never_increases_and_ends_at_fixed_point() {
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let t = i as f64;
                vec![(t * 1.3).sin() * 5.0 + (i % 3) as f64 * 4.0, (t * 0.7).cos() * 3.0]
            })
            .collect();
        let m = FeatureMatrix::from_rows(FeatureKind::Latent, &rows);
        let cfg = ClusteringConfig::new(Method::KMeans, 4);
        for seed in 0..10 {
            let run = lloyd(&m, &cfg, seed);
            for w in run.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", run.history);
            }
            let mut labels = run.labels.clone();
            assert!(!assign_all(&m, &run.centres, Metric::Euclidean, &mut labels));
            assert_eq!(member_means(&m, &labels, 4), run.centres);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64).sqrt()]).collect();
        let m = FeatureMatrix::from_rows(FeatureKind::Latent, &rows);
        let cfg = ClusteringConfig::new(Method::KMeans, 3).with_seed(11);
        assert_eq!(kmeans(&m, &cfg).unwrap(), kmeans(&m, &cfg).unwrap());
    }
}

use serde::{Deserialize, Serialize};

use super::{finish_model, member_means, ClusterError, ClusterModel, ClusteringConfig, Method, Metric};
use crate::features::FeatureMatrix;

/// One dendrogram merge. `a` and `b` are representative rows of the two
/// clusters joined; `height` is the Ward distance
/// `sqrt(2·|A||B|/(|A|+|B|)) · ‖c_A − c_B‖`, which equals the plain
/// Euclidean distance when both sides are singletons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

/// Ward-linkage merge tree, merges sorted by non-decreasing height.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Builds the tree with the nearest-neighbour-chain algorithm and
    /// Lance–Williams updates: O(n²) time, O(n²) memory.
    ///
    /// Cosine clustering normalises rows to unit length first, where squared
    /// Euclidean distance is proportional to cosine distance.
    pub fn ward(m: &FeatureMatrix, metric: Metric) -> Self {
        let n = m.rows();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let r = m.row_f64(i);
                match metric {
                    Metric::Euclidean => r,
                    Metric::Cosine => {
                        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > 0.0 {
                            r.iter().map(|x| x / norm).collect()
                        } else {
                            r
                        }
                    }
                }
            })
            .collect();
        if n < 2 {
            return Self { n, merges: Vec::new() };
        }

        let idx = |i: usize, j: usize| {
            let (i, j) = if i < j { (i, j) } else { (j, i) };
            i * n - i * (i + 1) / 2 + (j - i - 1)
        };
        // squared distances, updated in place as clusters merge
        let mut d2 = vec![0.0f64; n * (n - 1) / 2];
        for i in 0..n {
            for j in i + 1..n {
                d2[idx(i, j)] = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum();
            }
        }

        let mut active = vec![true; n];
        let mut size = vec![1usize; n];
        let mut merges = Vec::with_capacity(n - 1);
        let mut chain: Vec<usize> = Vec::with_capacity(n);

        while merges.len() < n - 1 {
            if chain.is_empty() {
                chain.push(active.iter().position(|&a| a).unwrap());
            }
            let (a, b) = loop {
                let a = *chain.last().unwrap();
                let prev = chain.len().checked_sub(2).map(|p| chain[p]);
                let mut best = prev.map(|p| (p, d2[idx(a, p)]));
                for c in 0..n {
                    if c == a || !active[c] {
                        continue;
                    }
                    let d = d2[idx(a, c)];
                    match best {
                        Some((bc, bd)) if d > bd || (d == bd && (Some(bc) == prev || bc < c)) => {}
                        _ => best = Some((c, d)),
                    }
                }
                let (b, _) = best.unwrap();
                if Some(b) == prev {
                    chain.pop();
                    chain.pop();
                    break (a, b);
                }
                chain.push(b);
            };

            let dab = d2[idx(a, b)];
            let (keep, gone) = if a < b { (a, b) } else { (b, a) };
            let (na, nb) = (size[keep] as f64, size[gone] as f64);
            for c in 0..n {
                if !active[c] || c == keep || c == gone {
                    continue;
                }
                let nc = size[c] as f64;
                let updated = ((nc + na) * d2[idx(c, keep)] + (nc + nb) * d2[idx(c, gone)] - nc * dab) / (nc + na + nb);
                d2[idx(c, keep)] = updated.max(0.0);
            }
            active[gone] = false;
            size[keep] += size[gone];
            merges.push(Merge { a: keep, b: gone, height: dab.max(0.0).sqrt(), size: size[keep] });
        }

        // slot ids double as representative rows, so sorting keeps merges meaningful
        merges.sort_by(|x, y| x.height.total_cmp(&y.height));
        Self { n, merges }
    }

    /// Flat labels after applying the first `n − k` merges.
    pub fn cut(&self, k: usize) -> Vec<u32> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for m in self.merges.iter().take(self.n.saturating_sub(k)) {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let roots: Vec<u32> = (0..self.n).map(|i| find(&mut parent, i) as u32).collect();
        let mut labels = roots;
        super::canonical_relabel(&mut labels);
        labels
    }

    /// Cuts the tree at `k` and wraps the partition as a model.
    pub fn model(&self, m: &FeatureMatrix, k: usize, metric: Metric, seed: u64) -> ClusterModel {
        let labels = self.cut(k);
        let k_eff = labels.iter().max().map_or(0, |&x| x as usize + 1);
        let centres = member_means(m, &labels, k_eff);
        finish_model(m, labels, centres, Method::Agglomerative, metric, seed, None)
    }
}

/// Bottom-up Ward clustering cut at `cfg.k` clusters.
pub fn agglomerative(m: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<ClusterModel, ClusterError> {
    cfg.validate()?;
    if m.rows() < cfg.k || m.rows() == 0 {
        return Err(ClusterError::TooFewRows { rows: m.rows(), k: cfg.k });
    }
    Ok(Dendrogram::ward(m, cfg.metric).model(m, cfg.k, cfg.metric, cfg.seed))
}

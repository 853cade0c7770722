use rayon::prelude::*;

use super::{finish_model, nearest_f64, ClusterError, ClusterModel, Method, Metric};
use crate::features::FeatureMatrix;

/// Rows used when estimating the bandwidth from pairwise distances.
pub const BANDWIDTH_SAMPLE: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median pairwise distance over at most [`BANDWIDTH_SAMPLE`] rows.
    Auto,
    Fixed(f64),
}

/// Median pairwise distance over an evenly strided subsample of rows.
/// Returns 0 when fewer than two rows exist or all rows coincide.
pub fn estimate_bandwidth(m: &FeatureMatrix, metric: Metric) -> f64 {
    let n = m.rows();
    let idx: Vec<usize> = if n > BANDWIDTH_SAMPLE {
        (0..BANDWIDTH_SAMPLE).map(|i| i * n / BANDWIDTH_SAMPLE).collect()
    } else {
        (0..n).collect()
    };
    let mut d: Vec<f64> = idx
        .par_iter()
        .enumerate()
        .flat_map_iter(|(p, &i)| idx[p + 1..].iter().map(move |&j| metric.distance(m.row(i), m.row(j))))
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, &mut upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if d.len() % 2 == 1 {
        upper
    } else {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Flat-kernel mean-shift with default iteration limits.
pub fn meanshift(m: &FeatureMatrix, bandwidth: Bandwidth) -> Result<ClusterModel, ClusterError> {
    meanshift_with(m, bandwidth, Metric::Euclidean, 300, 1e-6)
}

/// Every row seeds a hill climb; each step moves to the mean of the rows
/// within `bandwidth`. Converged modes closer than `bandwidth / 2` to a
/// better-supported mode are dropped, and rows take the nearest surviving mode.
pub(crate) fn meanshift_with(
    m: &FeatureMatrix,
    bandwidth: Bandwidth,
    metric: Metric,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel, ClusterError> {
    if m.rows() == 0 {
        return Err(ClusterError::TooFewRows { rows: 0, k: 1 });
    }
    let bw = match bandwidth {
        Bandwidth::Fixed(b) if !(b.is_finite() && b > 0.0) => return Err(ClusterError::InvalidBandwidth(b)),
        Bandwidth::Fixed(b) => b,
        Bandwidth::Auto => estimate_bandwidth(m, metric),
    };
    if bw <= 0.0 {
        // no spread at all: a single mode
        let centre = m.row_f64(0);
        return Ok(finish_model(m, vec![0; m.rows()], vec![centre], Method::MeanShift, metric, 0, Some(bw)));
    }

    let climbs: Vec<(Vec<f64>, usize)> =
        (0..m.rows()).into_par_iter().map(|i| climb(m, m.row_f64(i), bw, metric, max_iter, tol)).collect();

    let mut order: Vec<usize> = (0..climbs.len()).collect();
    order.sort_by(|&a, &b| climbs[b].1.cmp(&climbs[a].1).then(a.cmp(&b)));
    let mut modes: Vec<Vec<f64>> = Vec::new();
    for i in order {
        let cand = &climbs[i].0;
        let near = modes.iter().any(|kept| {
            let kept32: Vec<f32> = kept.iter().map(|&x| x as f32).collect();
            metric.distance_f64(&kept32, cand) < bw / 2.0
        });
        if !near {
            modes.push(cand.clone());
        }
    }

    let labels: Vec<u32> = m.iter_rows().map(|r| nearest_f64(metric, r, &modes).0 as u32).collect();
    // finish_model keeps only modes that own at least one row
    Ok(finish_model(m, labels, modes, Method::MeanShift, metric, 0, Some(bw)))
}

fn climb(m: &FeatureMatrix, mut x: Vec<f64>, bw: f64, metric: Metric, max_iter: usize, tol: f64) -> (Vec<f64>, usize) {
    let mut support = 0;
    for _ in 0..max_iter {
        let mut sum = vec![0.0; m.cols()];
        let mut count = 0usize;
        for r in m.iter_rows() {
            if metric.distance_f64(r, &x) <= bw {
                count += 1;
                for (s, &v) in sum.iter_mut().zip(r) {
                    *s += v as f64;
                }
            }
        }
        support = count;
        if count == 0 {
            break;
        }
        sum.iter_mut().for_each(|s| *s /= count as f64);
        let shift: f64 = sum.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        x = sum;
        if shift < tol * bw {
            break;
        }
    }
    (x, support)
}

//! Seeded inputs shared by the benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use streetpattern_core::routeviz::TrajectorySample;
use streetpattern_core::{FeatureKind, FeatureMatrix, GeoPoint, Polyline};

pub const ORIGIN: GeoPoint = GeoPoint { lat: 41.15, lon: -81.36 };

/// Random walk of `vertices` points, each step up to roughly 400 m.
pub fn random_route(vertices: usize, seed: u64) -> Polyline {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut pts = vec![ORIGIN];
    while pts.len() < vertices {
        let last = pts[pts.len() - 1];
        pts.push(GeoPoint {
            lat: last.lat + rng.random_range(-0.003..0.003),
            lon: last.lon + rng.random_range(-0.003..0.003),
        });
    }
    Polyline::from_points_dedup(pts).expect("random walk has length")
}

/// Gaussian-ish blobs around `k` corners of a hypercube.
pub fn blobs(n: usize, dims: usize, k: usize, seed: u64) -> FeatureMatrix {
    let mut rng = StdRng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = i % k;
            (0..dims).map(|d| if (c >> (d % 8)) & 1 == 1 { 6.0 } else { 0.0 } + rng.random_range(-1.0..1.0)).collect()
        })
        .collect();
    FeatureMatrix::from_rows(FeatureKind::Latent, &rows)
}

/// One sample every ~20 m along `length_m` with random patterns.
pub fn samples_along(length_m: f64, patterns: u32, seed: u64) -> Vec<TrajectorySample> {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = (length_m / 20.0) as usize;
    (0..n)
        .map(|i| TrajectorySample {
            sample_id: i as u32,
            distance_m: i as f64 * 20.0 + 10.0,
            pattern: rng.random_range(0..patterns),
        })
        .collect()
}

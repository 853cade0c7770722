//! Side-specific route trajectories and the summaries drawn from them:
//! majority-vote segments, pattern distributions, pairwise comparisons,
//! marker image windows and a GeoJSON export.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::{Polyline, Side, DEFAULT_CHUNK_LEN_M};
use crate::vapattern::PatternCatalog;

/// Default along-route segment length.
pub const DEFAULT_SEGMENT_LEN_M: f64 = 200.0;

/// Shortest segment length accepted: two sampling chunks.
pub const MIN_SEGMENT_LEN_M: f64 = 2.0 * DEFAULT_CHUNK_LEN_M;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteVizError {
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("segment length {0} m is below the {MIN_SEGMENT_LEN_M} m minimum")]
    SegmentTooShort(f64),
    #[error("sample {0} is not strictly further along the route than its predecessor")]
    NonMonotonic(usize),
    #[error("sample {index} at {distance_m} m lies outside the route (length {length_m} m)")]
    OutsideRoute { index: usize, distance_m: f64, length_m: f64 },
    #[error("trajectories come from different catalogs ({0} vs {1})")]
    CatalogMismatch(String, String),
    #[error("image window must hold at least one sample")]
    ZeroWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub sample_id: u32,
    /// Meters from the route origin.
    pub distance_m: f64,
    pub pattern: u32,
}

/// One side of one route, with its samples in travel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteTrajectory {
    pub route_id: String,
    pub side: Side,
    /// Identifies the pattern catalog the labels come from.
    pub catalog: String,
    pub geometry: Polyline,
    samples: Vec<TrajectorySample>,
    length_m: f64,
}

impl RouteTrajectory {
    pub fn new(
        route_id: impl Into<String>,
        side: Side,
        catalog: impl Into<String>,
        geometry: Polyline,
        samples: Vec<TrajectorySample>,
    ) -> Result<Self, RouteVizError> {
        let length_m = geometry.length_m();
        for (i, s) in samples.iter().enumerate() {
            if !(s.distance_m >= 0.0 && s.distance_m <= length_m + 1e-6) {
                return Err(RouteVizError::OutsideRoute { index: i, distance_m: s.distance_m, length_m });
            }
            if i > 0 && s.distance_m <= samples[i - 1].distance_m {
                return Err(RouteVizError::NonMonotonic(i));
            }
        }
        Ok(Self { route_id: route_id.into(), side, catalog: catalog.into(), geometry, samples, length_m })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn length_m(&self) -> f64 {
        self.length_m
    }

    /// Short display id such as `1L`.
    pub fn label(&self) -> String {
        format!("{}{}", self.route_id, self.side.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSegment {
    pub index: usize,
    pub start_m: f64,
    pub end_m: f64,
    /// `[lat, lon]` vertices of the route between `start_m` and `end_m`.
    pub geometry: Vec<[f64; 2]>,
    /// Majority pattern among the segment's samples; `None` if it has none.
    pub dominant_pattern: Option<u32>,
    pub counts: BTreeMap<u32, usize>,
}

/// Mode of the counts; ties go to the smaller pattern id.
pub fn dominant(counts: &BTreeMap<u32, usize>) -> Option<u32> {
    let mut best: Option<(u32, usize)> = None;
    for (&p, &c) in counts {
        if c > 0 && best.is_none_or(|(_, bc)| c > bc) {
            best = Some((p, c));
        }
    }
    best.map(|(p, _)| p)
}

/// Segment boundaries tiling `[0, length]`: full `seg_len` pieces, with a
/// remainder shorter than half a segment folded into the one before it.
pub fn segment_bounds(length_m: f64, seg_len_m: f64) -> Vec<f64> {
    let mut bounds = vec![0.0];
    let mut i = 1usize;
    while (i as f64) * seg_len_m < length_m - 1e-9 {
        bounds.push(i as f64 * seg_len_m);
        i += 1;
    }
    bounds.push(length_m);
    let n = bounds.len();
    if n > 2 && bounds[n - 1] - bounds[n - 2] < seg_len_m / 2.0 {
        bounds.remove(n - 2);
    }
    bounds
}

/// Splits the route into [`segment_bounds`] pieces and takes the majority
/// pattern of each. Segments without samples have no dominant pattern.
pub fn segment_route(traj: &RouteTrajectory, seg_len_m: f64) -> Result<Vec<RouteSegment>, RouteVizError> {
    if !(seg_len_m.is_finite() && seg_len_m >= MIN_SEGMENT_LEN_M) {
        return Err(RouteVizError::SegmentTooShort(seg_len_m));
    }
    let bounds = segment_bounds(traj.length_m, seg_len_m);
    let interior = &bounds[1..bounds.len() - 1];
    let mut counts = vec![BTreeMap::new(); bounds.len() - 1];
    for s in &traj.samples {
        let seg = interior.partition_point(|&b| b <= s.distance_m);
        *counts[seg].entry(s.pattern).or_insert(0) += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(index, counts)| {
            let (start_m, end_m) = (bounds[index], bounds[index + 1]);
            RouteSegment {
                index,
                start_m,
                end_m,
                geometry: traj.geometry.slice(start_m, end_m).iter().map(|p| [p.lat, p.lon]).collect(),
                dominant_pattern: dominant(&counts),
                counts,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternDistribution {
    /// Share of samples per pattern; sums to 1.
    pub fractions: BTreeMap<u32, f64>,
    pub counts: BTreeMap<u32, usize>,
    pub sample_count: usize,
    pub length_m: f64,
}

pub fn distribution(traj: &RouteTrajectory) -> Result<PatternDistribution, RouteVizError> {
    if traj.samples.is_empty() {
        return Err(RouteVizError::EmptyTrajectory);
    }
    let mut counts = BTreeMap::new();
    for s in &traj.samples {
        *counts.entry(s.pattern).or_insert(0usize) += 1;
    }
    let n = traj.samples.len();
    let fractions = counts.iter().map(|(&p, &c)| (p, c as f64 / n as f64)).collect();
    Ok(PatternDistribution { fractions, counts, sample_count: n, length_m: traj.length_m })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub trajectory: String,
    pub distribution: PatternDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteComparison {
    pub a: TrajectorySummary,
    pub b: TrajectorySummary,
    /// `share_a − share_b` for every pattern seen on either side.
    pub deltas: BTreeMap<u32, f64>,
    pub length_delta_m: f64,
}

pub fn compare(a: &RouteTrajectory, b: &RouteTrajectory) -> Result<RouteComparison, RouteVizError> {
    if a.catalog != b.catalog {
        return Err(RouteVizError::CatalogMismatch(a.catalog.clone(), b.catalog.clone()));
    }
    let (da, db) = (distribution(a)?, distribution(b)?);
    let mut deltas = BTreeMap::new();
    for &p in da.fractions.keys().chain(db.fractions.keys()) {
        let fa = da.fractions.get(&p).copied().unwrap_or(0.0);
        let fb = db.fractions.get(&p).copied().unwrap_or(0.0);
        deltas.insert(p, fa - fb);
    }
    Ok(RouteComparison {
        length_delta_m: da.length_m - db.length_m,
        a: TrajectorySummary { trajectory: a.label(), distribution: da },
        b: TrajectorySummary { trajectory: b.label(), distribution: db },
        deltas,
    })
}

/// The `window` samples nearest to `at_m` (clamped to the route), in route
/// order. Equally near candidates favour the one earlier on the route.
pub fn images_near(traj: &RouteTrajectory, at_m: f64, window: usize) -> Result<Vec<TrajectorySample>, RouteVizError> {
    if window == 0 {
        return Err(RouteVizError::ZeroWindow);
    }
    let at = if at_m.is_nan() { 0.0 } else { at_m.clamp(0.0, traj.length_m) };
    let s = &traj.samples;
    let split = s.partition_point(|x| x.distance_m < at);
    let (mut lo, mut hi) = (split, split);
    while hi - lo < window && (lo > 0 || hi < s.len()) {
        let take_left = match (lo.checked_sub(1), s.get(hi)) {
            (Some(l), Some(r)) => at - s[l].distance_m <= r.distance_m - at,
            (Some(_), None) => true,
            _ => false,
        };
        if take_left {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    Ok(s[lo..hi].to_vec())
}

/// GeoJSON `FeatureCollection` with one `LineString` per segment. Each
/// layer is a route id, a side and that trajectory's segments.
pub fn segments_geojson(layers: &[(&str, Side, &[RouteSegment])], catalog: Option<&PatternCatalog>) -> Value {
    let mut features = Vec::new();
    for &(route_id, side, segments) in layers {
        for seg in segments {
            let pattern = seg.dominant_pattern.and_then(|p| catalog.and_then(|c| c.get(p)));
            let coords: Vec<[f64; 2]> = seg.geometry.iter().map(|&[lat, lon]| [lon, lat]).collect();
            features.push(json!({
                "type": "Feature",
                "geometry": { "type": "LineString", "coordinates": coords },
                "properties": {
                    "route": route_id,
                    "side": side.as_str(),
                    "trajectory": format!("{route_id}{}", side.as_str()),
                    "segment": seg.index,
                    "start_m": seg.start_m,
                    "end_m": seg.end_m,
                    "dominant_pattern": seg.dominant_pattern,
                    "pattern_name": pattern.map(|p| p.name.clone()),
                    "color": pattern.map(|p| p.color.clone()),
                    "counts": seg.counts,
                }
            }));
        }
    }
    json!({ "type": "FeatureCollection", "features": features })
}

use serde_json::Value;
use thiserror::Error;

use super::{RegionDataset, SampleRecord};
use crate::geo::{chunk_polyline, sample_points, GeoError, GeoPoint, Polyline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoadError {
    #[error("roads file is not valid JSON: {0}")]
    Json(String),
    #[error("roads file must be a GeoJSON FeatureCollection")]
    NotACollection,
    #[error("feature {feature}: {message}")]
    BadFeature { feature: usize, message: String },
    #[error("road {road}: {source}")]
    Geometry { road: String, source: GeoError },
}

/// A road-aligned street segment to be sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: String,
    pub geometry: Polyline,
}

fn coords(feature: usize, v: &Value) -> Result<Vec<GeoPoint>, RoadError> {
    let bad = |message: String| RoadError::BadFeature { feature, message };
    v.as_array()
        .ok_or_else(|| bad("coordinates must be an array".into()))?
        .iter()
        .map(|c| {
            let lon = c.get(0).and_then(Value::as_f64);
            let lat = c.get(1).and_then(Value::as_f64);
            match (lat, lon) {
                (Some(lat), Some(lon)) => GeoPoint::new(lat, lon).map_err(|e| bad(e.to_string())),
                _ => Err(bad(format!("bad position {c}"))),
            }
        })
        .collect()
}

/// Reads LineString and MultiLineString features from a GeoJSON
/// FeatureCollection. Ids come from `properties.id`, else the feature
/// index; the parts of a MultiLineString get `.0`, `.1`, ... suffixes.
/// Other geometry types are skipped.
pub fn parse_roads(text: &str) -> Result<Vec<RoadSegment>, RoadError> {
    let root: Value = serde_json::from_str(text).map_err(|e| RoadError::Json(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(RoadError::NotACollection);
    }
    let features = root.get("features").and_then(Value::as_array).ok_or(RoadError::NotACollection)?;
    let mut roads = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let id = match f.get("properties").and_then(|p| p.get("id")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => i.to_string(),
        };
        let Some(geom) = f.get("geometry") else { continue };
        let lines = match geom.get("type").and_then(Value::as_str) {
            Some("LineString") => vec![(id, coords(i, &geom["coordinates"])?)],
            Some("MultiLineString") => geom["coordinates"]
                .as_array()
                .ok_or(RoadError::BadFeature { feature: i, message: "coordinates must be an array".into() })?
                .iter()
                .enumerate()
                .map(|(j, part)| Ok((format!("{id}.{j}"), coords(i, part)?)))
                .collect::<Result<_, RoadError>>()?,
            _ => continue,
        };
        for (id, points) in lines {
            let geometry = Polyline::from_points_dedup(points)
                .map_err(|source| RoadError::Geometry { road: id.clone(), source })?;
            roads.push(RoadSegment { id, geometry });
        }
    }
    Ok(roads)
}

/// Chunks every road and records its left/right sample points. Sample ids
/// run over roads in order, then chunk, then Left before Right.
pub fn ingest_roads(region: &str, roads: &[RoadSegment], chunk_len_m: f64) -> Result<RegionDataset, RoadError> {
    let mut ds = RegionDataset::empty(region);
    ds.manifest.chunk_len_m = chunk_len_m;
    for road in roads {
        let chunks = chunk_polyline(&road.geometry, chunk_len_m)
            .map_err(|source| RoadError::Geometry { road: road.id.clone(), source })?;
        for s in sample_points(&chunks) {
            ds.samples.push(SampleRecord {
                id: ds.samples.len() as u32,
                lat: s.location.lat,
                lon: s.location.lon,
                side: s.side,
                view_angle_deg: s.view_angle_deg,
                segment_ref: road.id.clone(),
                image_path: None,
                capture_date: None,
            });
        }
    }
    ds.manifest.sample_count = ds.samples.len();
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Side;

    const ROADS: &str = r#"{"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"id": "main"},
         "geometry": {"type": "LineString", "coordinates": [[-81.0, 41.0], [-81.0, 41.0009]]}},
        {"type": "Feature", "properties": {},
         "geometry": {"type": "MultiLineString", "coordinates": [[[-81.0, 41.0], [-80.9995, 41.0]], [[-80.999, 41.0], [-80.999, 41.0001]]]}},
        {"type": "Feature", "properties": {}, "geometry": {"type": "Point", "coordinates": [-81.0, 41.0]}}
    ]}"#;

    #[test]
    fn parses_lines_and_multilines() {
        let roads = parse_roads(ROADS).unwrap();
        let ids: Vec<&str> = roads.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["main", "1.0", "1.1"]);
    }

    #[test]
    fn ingest_places_two_samples_per_chunk() {
        let roads = parse_roads(ROADS).unwrap();
        let ds = ingest_roads("test", &roads, 20.0).unwrap();
        // 100.07 m north, 42 m east, 11 m north
        assert_eq!(ds.len(), 2 * (6 + 3 + 1));
        assert!(ds.samples.iter().enumerate().all(|(i, s)| s.id as usize == i));
        assert_eq!(ds.samples[0].side, Side::Left);
        assert!((ds.samples[0].view_angle_deg - 270.0).abs() < 1e-9);
        assert!((ds.samples[1].view_angle_deg - 90.0).abs() < 1e-9);
        assert_eq!(ds.samples[12].segment_ref, "1.0");
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(parse_roads("[]"), Err(RoadError::NotACollection));
        let bad = r#"{"type": "FeatureCollection", "features": [{"geometry": {"type": "LineString", "coordinates": [[-81.0, 91.0], [0, 0]]}}]}"#;
        assert!(matches!(parse_roads(bad), Err(RoadError::BadFeature { feature: 0, .. })));
        let short = r#"{"type": "FeatureCollection", "features": [{"geometry": {"type": "LineString", "coordinates": [[-81.0, 41.0]]}}]}"#;
        assert!(matches!(parse_roads(short), Err(RoadError::Geometry { .. })));
    }
}

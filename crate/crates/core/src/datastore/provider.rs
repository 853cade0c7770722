//! Route providers: the recorded-fixture source used by default and an
//! opt-in OSRM client.
//!
//! Provider JSON follows the OSRM route response, loosened a little:
//!
//! ```json
//! {
//!   "code": "Ok",
//!   "origin": {"lat": 41.15, "lon": -81.36},
//!   "destination": {"lat": 41.16, "lon": -81.35},
//!   "routes": [
//!     {"geometry": "<encoded polyline>", "geometry_precision": 6,
//!      "distance": 2150.0, "duration": 240.0, "summary": "Main St",
//!      "legs": [{"distance": 2150.0, "duration": 240.0, "summary": "Main St"}]},
//!     {"geometry": {"type": "LineString", "coordinates": [[-81.36, 41.15], [-81.35, 41.16]]}}
//!   ]
//! }
//! ```
//!
//! `origin`/`destination` may be left out; they then come from `waypoints`
//! (OSRM `[lon, lat]` locations) or from the ends of the first route.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geo::{haversine_distance, GeoPoint, Polyline};

/// Fixture queries match when both ends lie within this distance.
pub const FIXTURE_MATCH_RADIUS_M: f64 = 50.0;

/// Base URL of the OSRM server used by the live provider.
pub const OSRM_URL_ENV: &str = "STREETPATTERN_OSRM_URL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("malformed provider JSON: {0}")]
    Json(String),
    #[error("route {route}: malformed geometry: {message}")]
    MalformedGeometry { route: usize, message: String },
    #[error("provider returned no routes")]
    NoRoutes,
    #[error("provider reported status {0}")]
    Status(String),
    #[error("no recorded response for this origin and destination")]
    NoFixture,
    #[error("provider request failed: {0}")]
    Transport(String),
    #[error("live provider needs {OSRM_URL_ENV} to be set")]
    NotConfigured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteLeg {
    pub distance_m: Option<f64>,
    pub duration_s: Option<f64>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRoute {
    pub geometry: Polyline,
    pub distance_m: Option<f64>,
    pub duration_s: Option<f64>,
    pub summary: String,
    pub legs: Vec<RouteLeg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteProviderResponse {
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub routes: Vec<ProviderRoute>,
}

/// Encodes points in the Google polyline format at `precision` decimal
/// digits (5 for Google, 6 for OSRM `polyline6`).
pub fn encode_polyline(points: &[GeoPoint], precision: u32) -> String {
    let scale = 10f64.powi(precision as i32);
    let mut out = String::new();
    let (mut plat, mut plon) = (0i64, 0i64);
    for p in points {
        let lat = (p.lat * scale).round() as i64;
        let lon = (p.lon * scale).round() as i64;
        encode_value(lat - plat, &mut out);
        encode_value(lon - plon, &mut out);
        (plat, plon) = (lat, lon);
    }
    out
}

fn encode_value(v: i64, out: &mut String) {
    let mut v = if v < 0 { !(v << 1) } else { v << 1 } as u64;
    while v >= 0x20 {
        out.push(char::from((0x20 | (v & 0x1f)) as u8 + 63));
        v >>= 5;
    }
    out.push(char::from(v as u8 + 63));
}

pub fn decode_polyline(s: &str, precision: u32) -> Result<Vec<GeoPoint>, String> {
    let scale = 10f64.powi(precision as i32);
    let bytes = s.as_bytes();
    let mut pos = 0;
    let mut next = || -> Result<Option<i64>, String> {
        if pos == bytes.len() {
            return Ok(None);
        }
        let (mut result, mut shift) = (0u64, 0u32);
        loop {
            let Some(&b) = bytes.get(pos) else {
                return Err("truncated value".into());
            };
            if !(63..=126).contains(&b) {
                return Err(format!("invalid character {:?} at offset {pos}", b as char));
            }
            if shift > 60 {
                return Err("value overflows".into());
            }
            pos += 1;
            let chunk = (b - 63) as u64;
            result |= (chunk & 0x1f) << shift;
            shift += 5;
            if chunk < 0x20 {
                break;
            }
        }
        let v = (result >> 1) as i64;
        Ok(Some(if result & 1 == 1 { !v } else { v }))
    };
    let (mut lat, mut lon) = (0i64, 0i64);
    let mut points = Vec::new();
    while let Some(dlat) = next()? {
        let dlon = next()?.ok_or("latitude without longitude")?;
        lat += dlat;
        lon += dlon;
        let p = GeoPoint::new(lat as f64 / scale, lon as f64 / scale).map_err(|e| e.to_string())?;
        points.push(p);
    }
    Ok(points)
}

fn point_from_value(v: &Value) -> Option<GeoPoint> {
    match v {
        Value::Object(o) => GeoPoint::new(o.get("lat")?.as_f64()?, o.get("lon")?.as_f64()?).ok(),
        // coordinate pairs in provider JSON are GeoJSON order
        Value::Array(a) if a.len() == 2 => GeoPoint::new(a[1].as_f64()?, a[0].as_f64()?).ok(),
        _ => None,
    }
}

fn parse_geometry(route: &Value, precision: u32) -> Result<Vec<GeoPoint>, String> {
    let geometry = route
        .get("geometry")
        .or_else(|| route.get("overview_polyline").and_then(|o| o.get("points")))
        .ok_or("missing geometry")?;
    match geometry {
        Value::String(s) => decode_polyline(s, precision),
        Value::Object(o) => {
            if o.get("type").and_then(Value::as_str) != Some("LineString") {
                return Err("geometry object is not a LineString".into());
            }
            let coords = o.get("coordinates").and_then(Value::as_array).ok_or("LineString without coordinates")?;
            coords
                .iter()
                .enumerate()
                .map(|(i, c)| point_from_value(c).ok_or_else(|| format!("bad coordinate at index {i}")))
                .collect()
        }
        _ => Err("geometry must be an encoded string or a LineString".into()),
    }
}

fn parse_legs(route: &Value) -> Vec<RouteLeg> {
    route
        .get("legs")
        .and_then(Value::as_array)
        .map(|legs| {
            legs.iter()
                .map(|l| RouteLeg {
                    distance_m: l.get("distance").and_then(Value::as_f64),
                    duration_s: l.get("duration").and_then(Value::as_f64),
                    summary: l.get("summary").and_then(Value::as_str).unwrap_or("").to_string(),
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Normalises one provider response to decoded polylines, keeping the
/// route count and order.
pub fn parse_provider_value(raw: &Value) -> Result<RouteProviderResponse, ProviderError> {
    if let Some(code) = raw.get("code").and_then(Value::as_str) {
        if code != "Ok" {
            return Err(ProviderError::Status(code.to_string()));
        }
    }
    let route_values = raw.get("routes").and_then(Value::as_array).ok_or(ProviderError::NoRoutes)?;
    if route_values.is_empty() {
        return Err(ProviderError::NoRoutes);
    }
    let mut routes = Vec::with_capacity(route_values.len());
    for (i, r) in route_values.iter().enumerate() {
        let bad = |message: String| ProviderError::MalformedGeometry { route: i, message };
        let precision = r.get("geometry_precision").and_then(Value::as_u64).unwrap_or(5);
        if !(1..=7).contains(&precision) {
            return Err(bad(format!("unsupported precision {precision}")));
        }
        let points = parse_geometry(r, precision as u32).map_err(bad)?;
        let geometry = Polyline::from_points_dedup(points).map_err(|e| bad(e.to_string()))?;
        routes.push(ProviderRoute {
            geometry,
            distance_m: r.get("distance").and_then(Value::as_f64),
            duration_s: r.get("duration").and_then(Value::as_f64),
            summary: r.get("summary").and_then(Value::as_str).unwrap_or("").to_string(),
            legs: parse_legs(r),
        });
    }
    let waypoints = raw.get("waypoints").and_then(Value::as_array);
    let waypoint = |first: bool| {
        let w = waypoints?;
        let w = if first { w.first()? } else { w.last()? };
        point_from_value(w.get("location")?)
    };
    let origin =
        raw.get("origin").and_then(point_from_value).or_else(|| waypoint(true)).unwrap_or(routes[0].geometry.first());
    let destination = raw
        .get("destination")
        .and_then(point_from_value)
        .or_else(|| waypoint(false))
        .unwrap_or(routes[0].geometry.last());
    Ok(RouteProviderResponse { origin, destination, routes })
}

pub fn parse_provider_response(raw: &str) -> Result<RouteProviderResponse, ProviderError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| ProviderError::Json(e.to_string()))?;
    parse_provider_value(&value)
}

/// Source of candidate routes between two points.
pub trait RouteProvider: Send + Sync {
    fn name(&self) -> &str;
    fn routes(&self, origin: GeoPoint, destination: GeoPoint) -> Result<RouteProviderResponse, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureQuery {
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub response: Value,
}

/// Recorded provider responses, stored as `provider_fixture.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderFixture {
    pub queries: Vec<FixtureQuery>,
}

/// Replays [`ProviderFixture`] responses; never touches the network.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    fixture: ProviderFixture,
}

impl FixtureProvider {
    pub fn new(fixture: ProviderFixture) -> Self {
        Self { fixture }
    }
}

impl RouteProvider for FixtureProvider {
    fn name(&self) -> &str {
        "fixture"
    }

    fn routes(&self, origin: GeoPoint, destination: GeoPoint) -> Result<RouteProviderResponse, ProviderError> {
        let q = self
            .fixture
            .queries
            .iter()
            .find(|q| {
                haversine_distance(q.origin, origin) <= FIXTURE_MATCH_RADIUS_M
                    && haversine_distance(q.destination, destination) <= FIXTURE_MATCH_RADIUS_M
            })
            .ok_or(ProviderError::NoFixture)?;
        let mut resp = parse_provider_value(&q.response)?;
        resp.origin = origin;
        resp.destination = destination;
        Ok(resp)
    }
}

/// Queries an OSRM `route` service for up to three alternatives.
#[derive(Debug, Clone)]
pub struct OsrmProvider {
    base_url: String,
    profile: String,
    agent: ureq::Agent,
}

impl OsrmProvider {
    pub fn new(base_url: &str) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(20))).build();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            profile: "driving".into(),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    pub fn from_env() -> Result<Self, ProviderError> {
        let url = std::env::var(OSRM_URL_ENV).map_err(|_| ProviderError::NotConfigured)?;
        Ok(Self::new(&url))
    }

    pub fn route_url(&self, origin: GeoPoint, destination: GeoPoint) -> String {
        format!(
            "{}/route/v1/{}/{},{};{},{}?alternatives=3&overview=full&geometries=polyline6",
            self.base_url, self.profile, origin.lon, origin.lat, destination.lon, destination.lat
        )
    }
}

impl RouteProvider for OsrmProvider {
    fn name(&self) -> &str {
        "osrm"
    }

    fn routes(&self, origin: GeoPoint, destination: GeoPoint) -> Result<RouteProviderResponse, ProviderError> {
        let body = self
            .agent
            .get(&self.route_url(origin, destination))
            .call()
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let mut value: Value = serde_json::from_str(&body).map_err(|e| ProviderError::Json(e.to_string()))?;
        if let Some(routes) = value.get_mut("routes").and_then(Value::as_array_mut) {
            for r in routes.iter_mut().filter_map(Value::as_object_mut) {
                r.entry("geometry_precision").or_insert(6.into());
            }
        }
        let mut resp = parse_provider_value(&value)?;
        resp.origin = origin;
        resp.destination = destination;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn decodes_the_reference_string() {
        let pts = decode_polyline("_p~iF~ps|U_ulLnnqC_mqNvxq`@", 5).unwrap();
        assert_eq!(pts, vec![p(38.5, -120.2), p(40.7, -120.95), p(43.252, -126.453)]);
        assert_eq!(encode_polyline(&pts, 5), "_p~iF~ps|U_ulLnnqC_mqNvxq`@");
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode_polyline("_p~iF~ps|U_", 5).is_err());
        assert!(decode_polyline("_p~iF", 5).is_err());
        assert!(decode_polyline("ab cd", 5).is_err());
        assert_eq!(decode_polyline("", 5).unwrap(), vec![]);
    }

    #[test]
    fn three_routes_in_mixed_encodings() {
        let a = [p(41.0, -81.0), p(41.001, -81.0), p(41.001, -80.999)];
        let raw = json!({
            "routes": [
                {"geometry": encode_polyline(&a, 5), "distance": 250.0},
                {"geometry": encode_polyline(&a, 6), "geometry_precision": 6},
                {"geometry": {"type": "LineString", "coordinates": [[-81.0, 41.0], [-80.999, 41.001]]}},
            ]
        });
        let resp = parse_provider_value(&raw).unwrap();
        assert_eq!(resp.routes.len(), 3);
        assert_eq!(resp.routes[0].geometry.points(), &a);
        assert_eq!(resp.routes[1].geometry.points(), &a);
        assert_eq!(resp.routes[2].geometry.points().len(), 2);
        assert_eq!(resp.routes[0].distance_m, Some(250.0));
        assert_eq!(resp.origin, a[0]);
        assert_eq!(resp.destination, p(41.001, -80.999));
    }

    #[test]
    fn origin_from_waypoints() {
        let raw = json!({
            "code": "Ok",
            "waypoints": [{"location": [-81.0, 41.0]}, {"location": [-80.0, 42.0]}],
            "routes": [{"geometry": {"type": "LineString", "coordinates": [[-81.0, 41.0], [-80.0, 42.0]]},
                        "legs": [{"distance": 1.0, "summary": "x"}]}]
        });
        let resp = parse_provider_value(&raw).unwrap();
        assert_eq!(resp.destination, p(42.0, -80.0));
        assert_eq!(resp.routes[0].legs[0].summary, "x");
    }

    #[test]
    fn errors() {
        assert_eq!(parse_provider_value(&json!({"routes": []})), Err(ProviderError::NoRoutes));
        assert_eq!(
            parse_provider_value(&json!({"code": "NoRoute", "routes": []})),
            Err(ProviderError::Status("NoRoute".into()))
        );
        assert!(matches!(
            parse_provider_value(&json!({"routes": [{"geometry": 5}]})),
            Err(ProviderError::MalformedGeometry { route: 0, .. })
        ));
        assert!(matches!(
            parse_provider_value(
                &json!({"routes": [{"geometry": {"type": "LineString", "coordinates": [[0.0, 0.0]]}}]})
            ),
            Err(ProviderError::MalformedGeometry { .. })
        ));
        assert!(matches!(parse_provider_response("{"), Err(ProviderError::Json(_))));
    }

    #[test]
    fn fixture_matches_nearby_queries_only() {
        let (o, d) = (p(41.0, -81.0), p(41.01, -81.0));
        let response =
            json!({"routes": [{"geometry": {"type": "LineString", "coordinates": [[-81.0, 41.0], [-81.0, 41.01]]}}]});
        let provider = FixtureProvider::new(ProviderFixture {
            queries: vec![FixtureQuery { origin: o, destination: d, response }],
        });
        let near = p(41.0002, -81.0);
        assert_eq!(provider.routes(near, d).unwrap().origin, near);
        assert_eq!(provider.routes(p(41.005, -81.0), d), Err(ProviderError::NoFixture));
    }

    #[test]
    fn osrm_url_shape() {
        let osrm = OsrmProvider::new("http://localhost:5000/");
        assert_eq!(
            osrm.route_url(p(41.0, -81.5), p(41.1, -81.4)),
            "http://localhost:5000/route/v1/driving/-81.5,41;-81.4,41.1?alternatives=3&overview=full&geometries=polyline6"
        );
    }
}

//! Request handling behind the CLI and the HTTP API: route queries,
//! marker image windows and catalog edits for loaded regions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{
    load_dataset, to_json_bytes, write_atomic, DatasetError, FixtureProvider, OsrmProvider, ProviderError,
    ProviderKind, ProviderRoute, RegionDataset, RouteProvider, CATALOG_FILE,
};
use crate::geo::{
    angle_diff_deg, chunk_polyline, haversine_distance, normalize_deg, project_local, GeoPoint, Side, COINCIDENT_EPS_M,
    EARTH_RADIUS_M,
};
use crate::routeviz::{
    distribution, images_near, segment_route, segments_geojson, PatternDistribution, RouteSegment, RouteTrajectory,
    TrajectorySample, DEFAULT_SEGMENT_LEN_M, MIN_SEGMENT_LEN_M,
};
use crate::vapattern::{PatternCatalog, PatternError, VaPattern};

/// A route chunk takes the nearest sample within this distance of its middle.
pub const MATCH_RADIUS_M: f64 = 15.0;

/// ... whose view angle is within this many degrees of the one required.
pub const MATCH_ANGLE_DEG: f64 = 45.0;

/// Queries may start or end this far outside the sampled area.
pub const BBOX_PAD_M: f64 = 250.0;

/// Routes kept from each provider response.
pub const MAX_ROUTES: usize = 3;

/// JSON schema of [`AnnotatedRouteSet`] responses.
pub const ROUTE_SET_SCHEMA: &str = include_str!("../schema/annotated_route_set.schema.json");

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("route provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl ServiceError {
    /// HTTP status code for the error class.
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::NotFound(_) => 404,
            ServiceError::BadRequest(_) => 400,
            ServiceError::Conflict(_) => 409,
            ServiceError::Provider(_) => 502,
            ServiceError::Dataset(_) => 500,
        }
    }
}

impl From<PatternError> for ServiceError {
    fn from(e: PatternError) -> Self {
        match e {
            PatternError::UnknownPattern(id) => ServiceError::NotFound(format!("pattern {id}")),
            other => ServiceError::BadRequest(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteQuery {
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub region: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seg_len_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    /// Box around `points` grown by `pad_m` on every side.
    pub fn around(points: impl IntoIterator<Item = GeoPoint>, pad_m: f64) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Self { min_lat: first.lat, min_lon: first.lon, max_lat: first.lat, max_lon: first.lon };
        for p in it {
            b.min_lat = b.min_lat.min(p.lat);
            b.max_lat = b.max_lat.max(p.lat);
            b.min_lon = b.min_lon.min(p.lon);
            b.max_lon = b.max_lon.max(p.lon);
        }
        let dlat = (pad_m / EARTH_RADIUS_M).to_degrees();
        let widest = b.min_lat.abs().max(b.max_lat.abs()).min(89.0);
        let dlon = dlat / widest.to_radians().cos();
        Some(Self {
            min_lat: b.min_lat - dlat,
            min_lon: b.min_lon - dlon,
            max_lat: b.max_lat + dlat,
            max_lon: b.max_lon + dlon,
        })
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat) && (self.min_lon..=self.max_lon).contains(&p.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTrajectory {
    pub label: String,
    pub side: Side,
    pub length_m: f64,
    pub samples: Vec<TrajectorySample>,
    pub segments: Vec<RouteSegment>,
    /// `None` when no sample matched this side of the route.
    pub distribution: Option<PatternDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRoute {
    /// Opaque id for the images endpoint.
    pub id: String,
    /// 1-based position in the provider's ranking.
    pub index: usize,
    pub summary: String,
    pub length_m: f64,
    pub distance_m: Option<f64>,
    pub duration_s: Option<f64>,
    /// `[lat, lon]` vertices.
    pub geometry: Vec<[f64; 2]>,
    pub trajectories: Vec<AnnotatedTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRouteSet {
    pub region: String,
    pub query: RouteQuery,
    pub routes: Vec<AnnotatedRoute>,
}

impl AnnotatedRouteSet {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        to_json_bytes(self)
    }

    /// Every trajectory's segments as one GeoJSON collection.
    pub fn geojson(&self, catalog: Option<&PatternCatalog>) -> serde_json::Value {
        let ids: Vec<String> = self.routes.iter().map(|r| r.index.to_string()).collect();
        let layers: Vec<(&str, Side, &[RouteSegment])> = self
            .routes
            .iter()
            .zip(&ids)
            .flat_map(|(r, id)| r.trajectories.iter().map(move |t| (id.as_str(), t.side, t.segments.as_slice())))
            .collect();
        segments_geojson(&layers, catalog)
    }
}

/// One entry of a marker image window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDescriptor {
    pub sample_id: u32,
    pub distance_m: f64,
    pub pattern: u32,
    pub lat: f64,
    pub lon: f64,
    pub side: Side,
    pub view_angle_deg: f64,
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternUpdate {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub color: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: String,
    pub sample_count: usize,
    pub pattern_count: usize,
    pub bbox: Option<BoundingBox>,
    pub provider: String,
}

/// Uniform grid over locally projected sample locations.
#[derive(Debug)]
struct SpatialIndex {
    origin: GeoPoint,
    cell_m: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
}

impl SpatialIndex {
    fn new(points: &[GeoPoint], cell_m: f64) -> Self {
        let origin = points.first().copied().unwrap_or(GeoPoint { lat: 0.0, lon: 0.0 });
        let mut index = Self { origin, cell_m, cells: HashMap::new() };
        for (i, &p) in points.iter().enumerate() {
            index.cells.entry(index.cell(p)).or_default().push(i as u32);
        }
        index
    }

    fn cell(&self, p: GeoPoint) -> (i64, i64) {
        let (x, y) = project_local(self.origin, p);
        ((x / self.cell_m).floor() as i64, (y / self.cell_m).floor() as i64)
    }

    /// Candidate ids in the 3×3 block of cells around `p`.
    fn candidates(&self, p: GeoPoint) -> impl Iterator<Item = u32> + '_ {
        let (cx, cy) = self.cell(p);
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| (cx + dx, cy + dy)))
            .filter_map(|c| self.cells.get(&c))
            .flatten()
            .copied()
    }
}

/// A loaded region ready to answer queries.
pub struct RegionService {
    dir: Option<PathBuf>,
    dataset: RegionDataset,
    labels: Vec<u32>,
    catalog: RwLock<PatternCatalog>,
    provider: Box<dyn RouteProvider>,
    index: SpatialIndex,
    bbox: Option<BoundingBox>,
}

impl std::fmt::Debug for RegionService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegionService")
            .field("region", &self.dataset.region())
            .field("samples", &self.dataset.len())
            .field("provider", &self.provider.name())
            .finish()
    }
}

/// The provider a region's manifest asks for.
pub fn default_provider(ds: &RegionDataset) -> Result<Box<dyn RouteProvider>, ServiceError> {
    Ok(match ds.manifest.provider {
        ProviderKind::Fixture => Box::new(FixtureProvider::new(ds.provider_fixture.clone().unwrap_or_default())),
        ProviderKind::Live => Box::new(OsrmProvider::from_env()?),
    })
}

impl RegionService {
    /// Loads `dir` with the provider named in its manifest. Catalog edits
    /// are written back to `dir`.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        let ds = load_dataset(dir)?;
        let provider = default_provider(&ds)?;
        let mut service = Self::new(ds, provider)?;
        service.dir = Some(dir.to_path_buf());
        Ok(service)
    }

    /// An in-memory service; catalog edits are not persisted.
    pub fn new(dataset: RegionDataset, provider: Box<dyn RouteProvider>) -> Result<Self, ServiceError> {
        let region = dataset.region().to_string();
        let labels = dataset
            .assignments()
            .ok_or_else(|| ServiceError::Conflict(format!("region {region} has no fitted clustering model")))?
            .to_vec();
        let catalog = dataset
            .catalog
            .clone()
            .ok_or_else(|| ServiceError::Conflict(format!("region {region} has no pattern catalog")))?;
        let known: BTreeSet<u32> = catalog.patterns.iter().map(|p| p.id).collect();
        if let Some(l) = labels.iter().find(|l| !known.contains(l)) {
            return Err(ServiceError::Conflict(format!("assignment label {l} is missing from the catalog")));
        }
        let points: Vec<GeoPoint> = dataset.samples.iter().map(|s| s.location()).collect();
        Ok(Self {
            dir: None,
            // cells a little larger than the radius absorb projection distortion
            index: SpatialIndex::new(&points, 1.2 * MATCH_RADIUS_M),
            bbox: BoundingBox::around(points.iter().copied(), BBOX_PAD_M),
            dataset,
            labels,
            catalog: RwLock::new(catalog),
            provider,
        })
    }

    pub fn region(&self) -> &str {
        self.dataset.region()
    }

    pub fn dataset(&self) -> &RegionDataset {
        &self.dataset
    }

    pub fn summary(&self) -> RegionSummary {
        RegionSummary {
            region: self.region().to_string(),
            sample_count: self.dataset.len(),
            pattern_count: self.catalog.read().expect("catalog lock").patterns.len(),
            bbox: self.bbox,
            provider: self.provider.name().to_string(),
        }
    }

    pub fn patterns(&self) -> PatternCatalog {
        self.catalog.read().expect("catalog lock").clone()
    }

    /// Renames and/or recolors one pattern. The new catalog is written to
    /// disk before it becomes visible; a failed write changes nothing.
    pub fn update_pattern(&self, id: u32, update: &PatternUpdate) -> Result<VaPattern, ServiceError> {
        let mut guard = self.catalog.write().expect("catalog lock");
        let mut next = guard.clone();
        if let Some(name) = &update.name {
            let name = name.trim();
            if name.is_empty() || name.chars().count() > 64 {
                return Err(ServiceError::BadRequest("pattern names must be 1 to 64 characters".into()));
            }
            next.rename_pattern(id, name)?;
        }
        if let Some(color) = &update.color {
            next.recolor_pattern(id, color)?;
        }
        let pattern = next.get(id).cloned().ok_or_else(|| ServiceError::NotFound(format!("pattern {id}")))?;
        if let Some(dir) = &self.dir {
            let file = self.dataset.manifest.catalog.as_deref().unwrap_or(CATALOG_FILE);
            write_atomic(&dir.join(file), &to_json_bytes(&next))?;
        }
        *guard = next;
        Ok(pattern)
    }

    fn validate_ends(&self, origin: GeoPoint, destination: GeoPoint) -> Result<(), ServiceError> {
        for (what, p) in [("origin", origin), ("destination", destination)] {
            if !p.is_valid() {
                return Err(ServiceError::BadRequest(format!("{what} is not a valid coordinate")));
            }
            if !self.bbox.is_some_and(|b| b.contains(p)) {
                return Err(ServiceError::BadRequest(format!("{what} lies outside region {}", self.region())));
            }
        }
        if haversine_distance(origin, destination) < COINCIDENT_EPS_M {
            return Err(ServiceError::BadRequest("origin and destination coincide".into()));
        }
        Ok(())
    }

    /// Nearest sample to `p` looking roughly along `view_deg`.
    fn match_sample(&self, p: GeoPoint, view_deg: f64) -> Option<u32> {
        let mut best: Option<(f64, u32)> = None;
        for id in self.index.candidates(p) {
            let s = &self.dataset.samples[id as usize];
            if angle_diff_deg(s.view_angle_deg, view_deg) > MATCH_ANGLE_DEG {
                continue;
            }
            let d = haversine_distance(p, s.location());
            if d <= MATCH_RADIUS_M && best.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
                best = Some((d, id));
            }
        }
        best.map(|(_, id)| id)
    }

    fn trajectory(&self, route_id: &str, route: &ProviderRoute, side: Side) -> Result<RouteTrajectory, ServiceError> {
        let chunks = chunk_polyline(&route.geometry, self.dataset.manifest.chunk_len_m)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let mut used = BTreeSet::new();
        let mut samples = Vec::new();
        let mut start = 0.0;
        for c in &chunks {
            let view = normalize_deg(c.heading_deg + side.view_offset_deg());
            if let Some(id) = self.match_sample(c.mid, view) {
                if used.insert(id) {
                    samples.push(TrajectorySample {
                        sample_id: id,
                        distance_m: start + c.length_m / 2.0,
                        pattern: self.labels[id as usize],
                    });
                }
            }
            start += c.length_m;
        }
        RouteTrajectory::new(route_id, side, self.region(), route.geometry.clone(), samples)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))
    }

    fn provider_routes(&self, origin: GeoPoint, destination: GeoPoint) -> Result<Vec<ProviderRoute>, ServiceError> {
        let mut routes = self.provider.routes(origin, destination)?.routes;
        routes.truncate(MAX_ROUTES);
        Ok(routes)
    }

    pub fn handle_route_query(&self, q: &RouteQuery) -> Result<AnnotatedRouteSet, ServiceError> {
        if q.region != self.region() {
            return Err(ServiceError::NotFound(format!("region {}", q.region)));
        }
        let seg_len_m = q.seg_len_m.unwrap_or(DEFAULT_SEGMENT_LEN_M);
        if !(seg_len_m >= MIN_SEGMENT_LEN_M && seg_len_m.is_finite()) {
            return Err(ServiceError::BadRequest(format!("segment length must be at least {MIN_SEGMENT_LEN_M} m")));
        }
        self.validate_ends(q.origin, q.destination)?;
        let mut out = Vec::new();
        for (i, route) in self.provider_routes(q.origin, q.destination)?.iter().enumerate() {
            let index = i + 1;
            let mut trajectories = Vec::with_capacity(2);
            for side in [Side::Left, Side::Right] {
                let traj = self.trajectory(&index.to_string(), route, side)?;
                let segments = segment_route(&traj, seg_len_m).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
                trajectories.push(AnnotatedTrajectory {
                    label: traj.label(),
                    side,
                    length_m: traj.length_m(),
                    samples: traj.samples().to_vec(),
                    segments,
                    distribution: distribution(&traj).ok(),
                });
            }
            out.push(AnnotatedRoute {
                id: encode_route_id(q.origin, q.destination, index),
                index,
                summary: route.summary.clone(),
                length_m: route.geometry.length_m(),
                distance_m: route.distance_m,
                duration_s: route.duration_s,
                geometry: route.geometry.points().iter().map(|p| [p.lat, p.lon]).collect(),
                trajectories,
            });
        }
        let query = RouteQuery { seg_len_m: Some(seg_len_m), ..q.clone() };
        Ok(AnnotatedRouteSet { region: self.region().to_string(), query, routes: out })
    }

    /// The `window` samples nearest `at_m` on one side of a route returned
    /// earlier by [`Self::handle_route_query`].
    pub fn images(
        &self,
        route_id: &str,
        side: Side,
        at_m: f64,
        window: usize,
    ) -> Result<Vec<ImageDescriptor>, ServiceError> {
        let (origin, destination, index) =
            decode_route_id(route_id).ok_or_else(|| ServiceError::NotFound(format!("route {route_id}")))?;
        self.validate_ends(origin, destination)?;
        let routes = self.provider_routes(origin, destination)?;
        let route =
            routes.get(index.wrapping_sub(1)).ok_or_else(|| ServiceError::NotFound(format!("route {route_id}")))?;
        let traj = self.trajectory(&index.to_string(), route, side)?;
        let hits = images_near(&traj, at_m, window).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Ok(hits
            .into_iter()
            .map(|h| {
                let s = &self.dataset.samples[h.sample_id as usize];
                ImageDescriptor {
                    sample_id: h.sample_id,
                    distance_m: h.distance_m,
                    pattern: h.pattern,
                    lat: s.lat,
                    lon: s.lon,
                    side: s.side,
                    view_angle_deg: s.view_angle_deg,
                    image_path: s.image_path.clone(),
                }
            })
            .collect())
    }
}

/// Route ids carry the query ends and the route rank, so image lookups
/// need no server-side session.
pub fn encode_route_id(origin: GeoPoint, destination: GeoPoint, index: usize) -> String {
    format!("{:.6},{:.6}~{:.6},{:.6}~{index}", origin.lat, origin.lon, destination.lat, destination.lon)
}

pub fn decode_route_id(id: &str) -> Option<(GeoPoint, GeoPoint, usize)> {
    let mut parts = id.split('~');
    let point = |s: &str| {
        let (lat, lon) = s.split_once(',')?;
        GeoPoint::new(lat.parse().ok()?, lon.parse().ok()?).ok()
    };
    let origin = point(parts.next()?)?;
    let destination = point(parts.next()?)?;
    let index = parts.next()?.parse().ok()?;
    parts.next().is_none().then_some((origin, destination, index))
}

/// Every region served by one process, by name.
#[derive(Debug, Default)]
pub struct RegionRegistry {
    regions: BTreeMap<String, RegionService>,
}

impl RegionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, service: RegionService) -> Result<(), ServiceError> {
        let name = service.region().to_string();
        if self.regions.contains_key(&name) {
            return Err(ServiceError::Conflict(format!("region {name} loaded twice")));
        }
        self.regions.insert(name, service);
        Ok(())
    }

    pub fn get(&self, region: &str) -> Result<&RegionService, ServiceError> {
        self.regions.get(region).ok_or_else(|| ServiceError::NotFound(format!("region {region}")))
    }

    /// The named region, or the only one when no name is given.
    pub fn resolve(&self, region: Option<&str>) -> Result<&RegionService, ServiceError> {
        match region {
            Some(r) => self.get(r),
            None if self.regions.len() == 1 => Ok(self.regions.values().next().expect("one region")),
            None => Err(ServiceError::BadRequest("several regions are loaded; name one with ?region=".into())),
        }
    }

    pub fn summaries(&self) -> Vec<RegionSummary> {
        self.regions.values().map(RegionService::summary).collect()
    }

    pub fn handle_route_query(&self, q: &RouteQuery) -> Result<AnnotatedRouteSet, ServiceError> {
        self.get(&q.region)?.handle_route_query(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_id_roundtrip() {
        let o = GeoPoint::new(41.15, -81.36).unwrap();
        let d = GeoPoint::new(41.1612346, -81.3501).unwrap();
        let id = encode_route_id(o, d, 2);
        assert_eq!(id, "41.150000,-81.360000~41.161235,-81.350100~2");
        let (o2, d2, i) = decode_route_id(&id).unwrap();
        assert_eq!((o2, i), (o, 2));
        assert!(haversine_distance(d, d2) < 0.1);
        assert_eq!(decode_route_id("1,2~3,4"), None);
        assert_eq!(decode_route_id("1,2~3,4~x"), None);
        assert_eq!(decode_route_id("1,2~3,4~1~9"), None);
    }

    #[test]
    fn bbox_padding() {
        let p = GeoPoint::new(41.0, -81.0).unwrap();
        let b = BoundingBox::around([p], 250.0).unwrap();
        let north = GeoPoint::new(41.0 + (240.0 / EARTH_RADIUS_M).to_degrees(), -81.0).unwrap();
        let far = GeoPoint::new(41.0 + (260.0 / EARTH_RADIUS_M).to_degrees(), -81.0).unwrap();
        assert!(b.contains(p) && b.contains(north) && !b.contains(far));
        assert_eq!(BoundingBox::around([], 1.0), None);
    }

    #[test]
    fn spatial_index_finds_neighbours_across_cells() {
        let base = GeoPoint::new(41.0, -81.0).unwrap();
        let pts: Vec<GeoPoint> =
            (0..50).map(|i| GeoPoint::new(41.0 + i as f64 * 5e-5, -81.0 + (i % 7) as f64 * 4e-5).unwrap()).collect();
        let index = SpatialIndex::new(&pts, 15.0);
        for q in pts.iter().map(|p| GeoPoint::new(p.lat + 3e-5, p.lon - 2e-5).unwrap()).chain([base]) {
            let found: BTreeSet<u32> = index.candidates(q).collect();
            for (i, p) in pts.iter().enumerate() {
                if haversine_distance(q, *p) <= 15.0 {
                    assert!(found.contains(&(i as u32)));
                }
            }
        }
    }

    #[test]
    fn error_status_classes() {
        assert_eq!(ServiceError::NotFound(String::new()).status(), 404);
        assert_eq!(ServiceError::BadRequest(String::new()).status(), 400);
        assert_eq!(ServiceError::Provider(ProviderError::NoRoutes).status(), 502);
        assert_eq!(ServiceError::from(PatternError::UnknownPattern(3)).status(), 404);
    }
}

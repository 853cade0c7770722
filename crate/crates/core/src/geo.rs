//! Spherical great-circle geometry: distances, bearings, route chunking and
//! the left/right side-view sampling lattice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used throughout, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default chunk length for image sampling.
pub const DEFAULT_CHUNK_LEN_M: f64 = 20.0;

/// Points closer than this are treated as coincident.
pub const COINCIDENT_EPS_M: f64 = 0.01;

/// Chunks shorter than this are folded into a neighbour.
pub const MIN_CHUNK_LEN_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate (lat {lat}, lon {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("coincident points: bearing is undefined")]
    CoincidentPoints,
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("polyline has identical consecutive points at index {0}")]
    RepeatedPoint(usize),
    #[error("target chunk length must be positive, got {0}")]
    InvalidChunkLength(f64),
}

/// A WGS84-style latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Validates ranges. A longitude of -180 is folded onto 180.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidCoordinate { lat, lon });
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::InvalidCoordinate { lat, lon });
        }
        let lon = if lon == -180.0 { 180.0 } else { lon };
        Ok(Self { lat, lon })
    }

    pub fn is_valid(&self) -> bool {
        Self::new(self.lat, self.lon).is_ok()
    }

    fn to_unit_vector(self) -> [f64; 3] {
        let (phi, lambda) = (self.lat.to_radians(), self.lon.to_radians());
        [phi.cos() * lambda.cos(), phi.cos() * lambda.sin(), phi.sin()]
    }

    fn from_unit_vector(v: [f64; 3]) -> Self {
        let lat = v[2].atan2((v[0] * v[0] + v[1] * v[1]).sqrt()).to_degrees();
        let mut lon = v[1].atan2(v[0]).to_degrees();
        if lon <= -180.0 {
            lon += 360.0;
        }
        Self { lat, lon }
    }
}

/// Which side of the direction of travel a view looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }

    /// Offset of the view direction relative to the heading.
    pub fn view_offset_deg(self) -> f64 {
        match self {
            Side::Left => -90.0,
            Side::Right => 90.0,
        }
    }
}

impl std::str::FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L" | "l" | "left" | "Left" => Ok(Side::Left),
            "R" | "r" | "right" | "Right" => Ok(Side::Right),
            other => Err(format!("unknown side {other:?}")),
        }
    }
}

/// Normalizes an angle in degrees into `[0, 360)`.
pub fn normalize_deg(angle: f64) -> f64 {
    let a = angle.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Great-circle distance in meters (haversine form).
pub fn haversine_distance(p1: GeoPoint, p2: GeoPoint) -> f64 {
    let (phi1, phi2) = (p1.lat.to_radians(), p2.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (p2.lon - p1.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `p1` towards `p2`, clockwise from true
/// north, in `[0, 360)`.
///
/// The longitude difference is signed so east- and westbound headings are
/// distinguished.
pub fn bearing(p1: GeoPoint, p2: GeoPoint) -> Result<f64, GeoError> {
    if haversine_distance(p1, p2) <= COINCIDENT_EPS_M {
        return Err(GeoError::CoincidentPoints);
    }
    let (phi1, phi2) = (p1.lat.to_radians(), p2.lat.to_radians());
    let dlambda = (p2.lon - p1.lon).to_radians();
    let x = dlambda.sin() * phi2.cos();
    let y = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    Ok(normalize_deg(x.atan2(y).to_degrees()))
}

/// Point at fraction `f` of the way along the great circle from `a` to `b`.
pub fn interpolate(a: GeoPoint, b: GeoPoint, f: f64) -> GeoPoint {
    if f <= 0.0 {
        return a;
    }
    if f >= 1.0 {
        return b;
    }
    let (va, vb) = (a.to_unit_vector(), b.to_unit_vector());
    let dot = (va[0] * vb[0] + va[1] * vb[1] + va[2] * vb[2]).clamp(-1.0, 1.0);
    let delta = dot.acos();
    if delta < 1e-15 {
        return a;
    }
    let wa = ((1.0 - f) * delta).sin() / delta.sin();
    let wb = (f * delta).sin() / delta.sin();
    GeoPoint::from_unit_vector([wa * va[0] + wb * vb[0], wa * va[1] + wb * vb[1], wa * va[2] + wb * vb[2]])
}

/// An ordered, validated sequence of at least two points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GeoPoint>", into = "Vec<GeoPoint>")]
pub struct Polyline {
    points: Vec<GeoPoint>,
}

impl Polyline {
    pub fn new(points: Vec<GeoPoint>) -> Result<Self, GeoError> {
        if points.len() < 2 {
            return Err(GeoError::TooFewPoints(points.len()));
        }
        for p in &points {
            if !p.is_valid() {
                return Err(GeoError::InvalidCoordinate { lat: p.lat, lon: p.lon });
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(GeoError::RepeatedPoint(i + 1));
        }
        Ok(Self { points })
    }

    /// Builds a polyline, dropping consecutive duplicates first.
    pub fn from_points_dedup(mut points: Vec<GeoPoint>) -> Result<Self, GeoError> {
        points.dedup();
        Self::new(points)
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn first(&self) -> GeoPoint {
        self.points[0]
    }

    pub fn last(&self) -> GeoPoint {
        self.points[self.points.len() - 1]
    }

    pub fn length_m(&self) -> f64 {
        self.points.windows(2).map(|w| haversine_distance(w[0], w[1])).sum()
    }

    /// Cumulative along-line distance at each vertex (first entry is 0).
    pub fn cumulative_m(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.points.len());
        out.push(0.0);
        for w in self.points.windows(2) {
            acc += haversine_distance(w[0], w[1]);
            out.push(acc);
        }
        out
    }

    /// Point at `distance_m` along the line, clamped to its ends.
    pub fn point_at(&self, distance_m: f64) -> GeoPoint {
        let cum = self.cumulative_m();
        point_at_cumulative(&self.points, &cum, distance_m)
    }

    /// Vertices of the sub-line between two along-line distances, with
    /// interpolated end points.
    pub fn slice(&self, start_m: f64, end_m: f64) -> Vec<GeoPoint> {
        let cum = self.cumulative_m();
        let total = *cum.last().unwrap();
        let (start_m, end_m) = (start_m.clamp(0.0, total), end_m.clamp(0.0, total));
        let mut out = vec![point_at_cumulative(&self.points, &cum, start_m)];
        for (p, &d) in self.points.iter().zip(&cum) {
            if d > start_m && d < end_m {
                out.push(*p);
            }
        }
        let end = point_at_cumulative(&self.points, &cum, end_m);
        if out.last() != Some(&end) {
            out.push(end);
        }
        out
    }
}

fn point_at_cumulative(points: &[GeoPoint], cum: &[f64], distance_m: f64) -> GeoPoint {
    let total = *cum.last().unwrap();
    if distance_m <= 0.0 {
        return points[0];
    }
    if distance_m >= total {
        return points[points.len() - 1];
    }
    // first vertex strictly beyond the distance
    let i = cum.partition_point(|&d| d <= distance_m).max(1);
    let seg = cum[i] - cum[i - 1];
    let f = if seg > 0.0 { (distance_m - cum[i - 1]) / seg } else { 0.0 };
    interpolate(points[i - 1], points[i], f)
}

impl TryFrom<Vec<GeoPoint>> for Polyline {
    type Error = GeoError;

    fn try_from(points: Vec<GeoPoint>) -> Result<Self, Self::Error> {
        Self::new(points)
    }
}

impl From<Polyline> for Vec<GeoPoint> {
    fn from(line: Polyline) -> Self {
        line.points
    }
}

/// A piece of a street segment with a single heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub start: GeoPoint,
    pub end: GeoPoint,
    pub mid: GeoPoint,
    pub heading_deg: f64,
    pub length_m: f64,
}

/// Splits every segment of `line` into `ceil(L / target_len_m)` chunks of
/// equal length. Chunks under [`MIN_CHUNK_LEN_M`] are merged into their
/// predecessor (or successor, for a leading one).
pub fn chunk_polyline(line: &Polyline, target_len_m: f64) -> Result<Vec<Chunk>, GeoError> {
    if !(target_len_m.is_finite() && target_len_m > 0.0) {
        return Err(GeoError::InvalidChunkLength(target_len_m));
    }
    if line.length_m() < COINCIDENT_EPS_M {
        return Ok(Vec::new());
    }

    // (start, end, length) before merging
    let mut raw: Vec<(GeoPoint, GeoPoint, f64)> = Vec::new();
    for w in line.points().windows(2) {
        let len = haversine_distance(w[0], w[1]);
        if len <= 0.0 {
            continue;
        }
        // tolerate round-off so an exact multiple is not split into an extra chunk
        let n = (len / target_len_m - 1e-6).ceil().max(1.0) as usize;
        let mut prev = w[0];
        for i in 1..=n {
            let next = if i == n { w[1] } else { interpolate(w[0], w[1], i as f64 / n as f64) };
            raw.push((prev, next, len / n as f64));
            prev = next;
        }
    }

    let mut merged: Vec<(GeoPoint, GeoPoint, f64)> = Vec::with_capacity(raw.len());
    let mut pending_head: Option<(GeoPoint, f64)> = None;
    for (start, end, len) in raw {
        if len < MIN_CHUNK_LEN_M {
            match merged.last_mut() {
                Some(last) => {
                    last.1 = end;
                    last.2 += len;
                }
                None => {
                    let (s, l) = pending_head.unwrap_or((start, 0.0));
                    pending_head = Some((s, l + len));
                }
            }
            continue;
        }
        match pending_head.take() {
            Some((s, l)) => merged.push((s, end, len + l)),
            None => merged.push((start, end, len)),
        }
    }
    if let Some((s, l)) = pending_head {
        // every chunk was tiny: the whole line becomes one chunk
        merged.push((s, line.last(), l));
    }

    merged
        .into_iter()
        .enumerate()
        .map(|(index, (start, end, length_m))| {
            Ok(Chunk {
                index,
                start,
                end,
                mid: interpolate(start, end, 0.5),
                heading_deg: bearing(start, end)?,
                length_m,
            })
        })
        .collect()
}

/// A side-view image location: chunk mid plus a view direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub chunk_index: usize,
    pub location: GeoPoint,
    pub side: Side,
    pub view_angle_deg: f64,
}

/// Two sample points per chunk, Left (heading - 90) then Right (heading + 90).
pub fn sample_points(chunks: &[Chunk]) -> Vec<SamplePoint> {
    chunks
        .iter()
        .flat_map(|c| {
            [Side::Left, Side::Right].map(|side| SamplePoint {
                chunk_index: c.index,
                location: c.mid,
                side,
                view_angle_deg: normalize_deg(c.heading_deg + side.view_offset_deg()),
            })
        })
        .collect()
}

/// Smallest absolute difference between two angles, in `[0, 180]`.
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Local equirectangular projection to meters around a reference point.
/// Accurate enough for neighbourhood lookups at city scale.
pub fn project_local(origin: GeoPoint, p: GeoPoint) -> (f64, f64) {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let x = (p.lon - origin.lon) * k * origin.lat.to_radians().cos();
    let y = (p.lat - origin.lat) * k;
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn cardinal_bearings_are_exact() {
        assert_eq!(bearing(pt(0.0, 0.0), pt(0.001, 0.0)).unwrap(), 0.0);
        assert_eq!(bearing(pt(0.0, 0.0), pt(0.0, 0.001)).unwrap(), 90.0);
        assert_eq!(bearing(pt(0.0, 0.0), pt(-0.001, 0.0)).unwrap(), 180.0);
        assert_eq!(bearing(pt(0.0, 0.0), pt(0.0, -0.001)).unwrap(), 270.0);
    }

    #[test]
    fn bearing_distinguishes_west_from_east() {
        let east = bearing(pt(40.0, -83.0), pt(40.1, -82.9)).unwrap();
        let west = bearing(pt(40.0, -83.0), pt(40.1, -83.1)).unwrap();
        assert!((east + west - 360.0).abs() < 1e-9);
        assert!(west > 270.0);
    }

    #[test]
    fn coincident_points_have_no_bearing() {
        let p = pt(10.0, 10.0);
        assert_eq!(bearing(p, p), Err(GeoError::CoincidentPoints));
    }

    #[test]
    fn haversine_identity_and_equator_span() {
        assert_eq!(haversine_distance(pt(0.0, 0.0), pt(0.0, 0.0)), 0.0);
        let d = haversine_distance(pt(0.0, 0.0), pt(0.0, 0.0001797));
        assert!((d - 20.0).abs() < 0.05, "{d}");
    }

    #[test]
    fn rejects_bad_coordinates() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert_eq!(GeoPoint::new(0.0, -180.0).unwrap().lon, 180.0);
    }

    #[test]
    fn polyline_validation() {
        assert_eq!(Polyline::new(vec![pt(0.0, 0.0)]), Err(GeoError::TooFewPoints(1)));
        assert_eq!(Polyline::new(vec![pt(0.0, 0.0), pt(0.0, 0.0)]), Err(GeoError::RepeatedPoint(1)));
    }

    fn meridian_line(len_m: f64) -> Polyline {
        let dlat = (len_m / EARTH_RADIUS_M).to_degrees();
        Polyline::new(vec![pt(0.0, 0.0), pt(dlat, 0.0)]).unwrap()
    }

    #[test]
    fn chunking_divides_exactly() {
        let chunks = chunk_polyline(&meridian_line(100.0), 20.0).unwrap();
        assert_eq!(chunks.len(), 5);
        for c in &chunks {
            assert!((c.length_m - 20.0).abs() < 1e-6);
            assert!(c.heading_deg < 1e-9 || c.heading_deg > 360.0 - 1e-9);
        }
    }

    #[test]
    fn chunking_uses_ceil_rule() {
        let chunks = chunk_polyline(&meridian_line(50.0), 20.0).unwrap();
        assert_eq!(chunks.len(), 3);
        assert!((chunks[0].length_m - 50.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn tiny_segment_merges_into_predecessor() {
        let a = pt(0.0, 0.0);
        let b = pt((40.0 / EARTH_RADIUS_M).to_degrees(), 0.0);
        let c = pt(b.lat + (0.5 / EARTH_RADIUS_M).to_degrees(), 0.0);
        let line = Polyline::new(vec![a, b, c]).unwrap();
        let chunks = chunk_polyline(&line, 20.0).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].end, c);
        assert!((chunks[1].length_m - 20.5).abs() < 1e-6);
        let total: f64 = chunks.iter().map(|c| c.length_m).sum();
        assert!((total - line.length_m()).abs() < 1e-6);
    }

    #[test]
    fn tiny_leading_segment_merges_forward() {
        let a = pt(0.0, 0.0);
        let b = pt((0.5 / EARTH_RADIUS_M).to_degrees(), 0.0);
        let c = pt(b.lat + (20.0 / EARTH_RADIUS_M).to_degrees(), 0.0);
        let chunks = chunk_polyline(&Polyline::new(vec![a, b, c]).unwrap(), 20.0).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].start, a);
        assert_eq!(chunks[0].end, c);
    }

    #[test]
    fn degenerate_line_gives_no_chunks() {
        let line = Polyline::new(vec![pt(0.0, 0.0), pt(1e-8, 0.0)]).unwrap();
        assert!(chunk_polyline(&line, 20.0).unwrap().is_empty());
        assert!(chunk_polyline(&meridian_line(10.0), 0.0).is_err());
    }

    #[test]
    fn side_angles() {
        let chunk = |heading_deg| Chunk {
            index: 0,
            start: pt(0.0, 0.0),
            end: pt(0.001, 0.0),
            mid: pt(0.0005, 0.0),
            heading_deg,
            length_m: 100.0,
        };
        let s = sample_points(&[chunk(0.0)]);
        assert_eq!((s[0].side, s[0].view_angle_deg), (Side::Left, 270.0));
        assert_eq!((s[1].side, s[1].view_angle_deg), (Side::Right, 90.0));
        let s = sample_points(&[chunk(350.0)]);
        assert_eq!(s[0].view_angle_deg, 260.0);
        assert_eq!(s[1].view_angle_deg, 80.0);
    }

    #[test]
    fn five_chunks_give_ten_alternating_samples() {
        let chunks = chunk_polyline(&meridian_line(100.0), 20.0).unwrap();
        let samples = sample_points(&chunks);
        assert_eq!(samples.len(), 10);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.side, if i % 2 == 0 { Side::Left } else { Side::Right });
            assert_eq!(s.chunk_index, i / 2);
        }
        for w in samples.chunks(2).collect::<Vec<_>>().windows(2) {
            let d = haversine_distance(w[0][0].location, w[1][0].location);
            assert!((d - 20.0).abs() < 0.01);
        }
    }

    #[test]
    fn slice_and_point_at() {
        let line = meridian_line(100.0);
        let mid = line.point_at(50.0);
        assert!((haversine_distance(line.first(), mid) - 50.0).abs() < 1e-6);
        let part = line.slice(20.0, 60.0);
        assert_eq!(part.len(), 2);
        assert!((haversine_distance(part[0], part[1]) - 40.0).abs() < 1e-6);
        assert_eq!(line.point_at(-5.0), line.first());
        assert_eq!(line.point_at(500.0), line.last());
    }

    #[test]
    fn angle_diff_wraps() {
        assert_eq!(angle_diff_deg(350.0, 10.0), 20.0);
        assert_eq!(angle_diff_deg(90.0, 270.0), 180.0);
    }

    proptest::proptest! {
        // Meridian convergence makes this fail for long east-west legs away
        // from the equator, so pairs stay short.
        #[test]
        fn back_bearing_is_reversed(
            lat in -60.0..60.0f64,
            lon in -179.0..179.0f64,
            dlat in -0.004..0.004f64,
            dlon in -0.004..0.004f64,
        ) {
            let (a, b) = (pt(lat, lon), pt(lat + dlat, lon + dlon));
            proptest::prop_assume!(haversine_distance(a, b) > 1.0 && haversine_distance(a, b) < 500.0);
            let fwd = bearing(a, b).unwrap();
            let back = bearing(b, a).unwrap();
            proptest::prop_assert!((0.0..360.0).contains(&fwd));
            proptest::prop_assert!(angle_diff_deg(back, fwd + 180.0) <= 0.01, "{} {}", fwd, back);
        }
    }
}

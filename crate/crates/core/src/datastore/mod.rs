//! Region datasets on disk.
//!
//! A region directory holds:
//!
//! ```text
//! manifest.json          region name, class order, file references
//! samples.jsonl          one SampleRecord per line, ids 0..n-1
//! cat19.vivf cat6.vivf latent.vivf
//! model.json centroids.vivf assignments.u32
//! catalog.json           pattern catalog
//! planted.u32            ground-truth labels (synthetic regions)
//! provider_fixture.json  recorded route-provider responses
//! ```
//!
//! Every file except the manifest and samples is optional. Saving a loaded
//! dataset reproduces the original bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterModel, ModelManifest};
use crate::features::vivf::{self, VivfError};
use crate::features::{FeatureKind, FeatureMatrix, CLASS_ORDER};
use crate::geo::{GeoPoint, Side, DEFAULT_CHUNK_LEN_M};
use crate::vapattern::PatternCatalog;

mod fetch;
mod provider;
mod roads;
mod synth;

pub use fetch::{build_fetch_plan, FetchPlan, FetchRequest, IMAGE_SIZE};
pub use provider::{
    decode_polyline, encode_polyline, parse_provider_response, parse_provider_value, FixtureProvider, FixtureQuery,
    OsrmProvider, ProviderError, ProviderFixture, ProviderRoute, RouteLeg, RouteProvider, RouteProviderResponse,
    FIXTURE_MATCH_RADIUS_M, OSRM_URL_ENV,
};
pub use roads::{ingest_roads, parse_roads, RoadError, RoadSegment};
pub use synth::{generate_synthetic_region, SynthError, SynthSpec, SYNTH_BLOCK_LEN_M, SYNTH_ORIGIN};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const CAT19_FILE: &str = "cat19.vivf";
pub const CAT6_FILE: &str = "cat6.vivf";
pub const LATENT_FILE: &str = "latent.vivf";
pub const MODEL_FILE: &str = "model.json";
pub const CENTROIDS_FILE: &str = "centroids.vivf";
pub const ASSIGNMENTS_FILE: &str = "assignments.u32";
pub const CATALOG_FILE: &str = "catalog.json";
pub const PLANTED_FILE: &str = "planted.u32";
pub const PROVIDER_FIXTURE_FILE: &str = "provider_fixture.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}: {source}")]
    Io { file: PathBuf, source: std::io::Error },
    #[error("{file}: format error: {source}")]
    Format { file: PathBuf, source: VivfError },
    #[error("{file}: invalid JSON: {source}")]
    Json { file: PathBuf, source: serde_json::Error },
    #[error("{file}: {rows} rows, manifest declares {expected} samples")]
    RowMismatch { file: PathBuf, rows: usize, expected: usize },
    #[error("{file}: holds a {actual:?} matrix where {expected:?} was expected")]
    KindMismatch { file: PathBuf, expected: FeatureKind, actual: FeatureKind },
    #[error("manifest references missing file {0}")]
    DanglingReference(PathBuf),
    #[error("{file}: sample ids must be dense 0..n-1; line {line} has id {id}")]
    SampleIds { file: PathBuf, line: usize, id: u32 },
    #[error("{file}: unsupported dataset format version {version}")]
    Version { file: PathBuf, version: u32 },
    #[error("{file}: class order differs from the built-in table")]
    ClassOrder { file: PathBuf },
    #[error("{file}: {message}")]
    Invalid { file: PathBuf, message: String },
}

/// One street-view image location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u32,
    pub lat: f64,
    pub lon: f64,
    pub side: Side,
    pub view_angle_deg: f64,
    pub segment_ref: String,
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_date: Option<String>,
}

impl SampleRecord {
    pub fn location(&self) -> GeoPoint {
        GeoPoint { lat: self.lat, lon: self.lon }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureFiles {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cat19: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cat6: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFiles {
    pub manifest: String,
    pub centroids: String,
    pub assignments: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Fixture,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub region: String,
    pub class_order: Vec<String>,
    pub sample_count: usize,
    pub chunk_len_m: f64,
    pub image_size: [u32; 2],
    pub provider: ProviderKind,
    pub samples: String,
    pub features: FeatureFiles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_fixture: Option<String>,
}

impl Manifest {
    pub fn new(region: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            region: region.to_string(),
            class_order: CLASS_ORDER.iter().map(|s| s.to_string()).collect(),
            sample_count: 0,
            chunk_len_m: DEFAULT_CHUNK_LEN_M,
            image_size: IMAGE_SIZE,
            provider: ProviderKind::Fixture,
            samples: SAMPLES_FILE.into(),
            features: FeatureFiles::default(),
            model: None,
            catalog: None,
            planted_labels: None,
            provider_fixture: None,
        }
    }
}

/// A fitted model as stored in a region, with the features it was fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub model: ClusterModel,
    pub features: FeatureKind,
}

/// Everything known about one region. Immutable once loaded; the pipeline
/// stages build new values and save them.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionDataset {
    pub manifest: Manifest,
    pub samples: Vec<SampleRecord>,
    pub cat19: Option<FeatureMatrix>,
    pub cat6: Option<FeatureMatrix>,
    pub latent: Option<FeatureMatrix>,
    pub model: Option<StoredModel>,
    pub catalog: Option<PatternCatalog>,
    pub planted_labels: Option<Vec<u32>>,
    pub provider_fixture: Option<ProviderFixture>,
}

impl RegionDataset {
    pub fn empty(region: &str) -> Self {
        Self {
            manifest: Manifest::new(region),
            samples: Vec::new(),
            cat19: None,
            cat6: None,
            latent: None,
            model: None,
            catalog: None,
            planted_labels: None,
            provider_fixture: None,
        }
    }

    pub fn region(&self) -> &str {
        &self.manifest.region
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self, kind: FeatureKind) -> Option<&FeatureMatrix> {
        match kind {
            FeatureKind::Category19 => self.cat19.as_ref(),
            FeatureKind::Category6 => self.cat6.as_ref(),
            FeatureKind::Latent => self.latent.as_ref(),
        }
    }

    /// The six-category matrix, derived from the 19-class one if needed.
    pub fn category6(&self) -> Option<FeatureMatrix> {
        self.cat6.clone().or_else(|| self.cat19.as_ref().and_then(|m| m.reduce_to_major().ok()))
    }

    /// Pattern label per sample, if a model has been fit.
    pub fn assignments(&self) -> Option<&[u32]> {
        self.model.as_ref().map(|m| m.model.assignments.as_slice())
    }

    /// Rewrites manifest file references to match which parts are present.
    fn sync_manifest(&self) -> Manifest {
        let mut m = self.manifest.clone();
        m.sample_count = self.samples.len();
        m.samples = SAMPLES_FILE.into();
        m.features = FeatureFiles {
            cat19: self.cat19.as_ref().map(|_| CAT19_FILE.into()),
            cat6: self.cat6.as_ref().map(|_| CAT6_FILE.into()),
            latent: self.latent.as_ref().map(|_| LATENT_FILE.into()),
        };
        m.model = self.model.as_ref().map(|_| ModelFiles {
            manifest: MODEL_FILE.into(),
            centroids: CENTROIDS_FILE.into(),
            assignments: ASSIGNMENTS_FILE.into(),
        });
        m.catalog = self.catalog.as_ref().map(|_| CATALOG_FILE.into());
        m.planted_labels = self.planted_labels.as_ref().map(|_| PLANTED_FILE.into());
        m.provider_fixture = self.provider_fixture.as_ref().map(|_| PROVIDER_FIXTURE_FILE.into());
        m
    }
}

/// Pretty JSON with a trailing newline, the on-disk form of every JSON file.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

pub fn encode_u32s(values: &[u32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_u32s(bytes: &[u8]) -> Option<Vec<u32>> {
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io { file: path.to_path_buf(), source };
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn save_dataset(ds: &RegionDataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io { file: dir.to_path_buf(), source })?;
    let manifest = ds.sync_manifest();

    let mut samples = Vec::new();
    for s in &ds.samples {
        serde_json::to_writer(&mut samples, s).expect("serializable");
        samples.push(b'\n');
    }
    write_atomic(&dir.join(SAMPLES_FILE), &samples)?;

    for (m, name) in [(&ds.cat19, CAT19_FILE), (&ds.cat6, CAT6_FILE), (&ds.latent, LATENT_FILE)] {
        if let Some(m) = m {
            write_atomic(&dir.join(name), &vivf::encode(m))?;
        }
    }
    if let Some(stored) = &ds.model {
        let model = &stored.model;
        write_atomic(&dir.join(MODEL_FILE), &to_json_bytes(&model.manifest(Some(stored.features))))?;
        write_atomic(&dir.join(CENTROIDS_FILE), &vivf::encode(&model.centroid_matrix(stored.features)))?;
        write_atomic(&dir.join(ASSIGNMENTS_FILE), &encode_u32s(&model.assignments))?;
    }
    if let Some(c) = &ds.catalog {
        write_atomic(&dir.join(CATALOG_FILE), &to_json_bytes(c))?;
    }
    if let Some(p) = &ds.planted_labels {
        write_atomic(&dir.join(PLANTED_FILE), &encode_u32s(p))?;
    }
    if let Some(f) = &ds.provider_fixture {
        write_atomic(&dir.join(PROVIDER_FIXTURE_FILE), &to_json_bytes(f))?;
    }
    // manifest last, so a crash never leaves it pointing at unwritten files
    write_atomic(&dir.join(MANIFEST_FILE), &to_json_bytes(&manifest))
}

fn read_bytes(dir: &Path, name: &str) -> Result<Vec<u8>, DatasetError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(DatasetError::DanglingReference(path));
    }
    fs::read(&path).map_err(|source| DatasetError::Io { file: path, source })
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T, DatasetError> {
    let bytes = read_bytes(dir, name)?;
    serde_json::from_slice(&bytes).map_err(|source| DatasetError::Json { file: dir.join(name), source })
}

fn read_matrix(dir: &Path, name: &str, kind: FeatureKind, rows: usize) -> Result<FeatureMatrix, DatasetError> {
    let file = dir.join(name);
    let m =
        vivf::decode(&read_bytes(dir, name)?).map_err(|source| DatasetError::Format { file: file.clone(), source })?;
    if m.kind() != kind {
        return Err(DatasetError::KindMismatch { file, expected: kind, actual: m.kind() });
    }
    if m.rows() != rows {
        return Err(DatasetError::RowMismatch { file, rows: m.rows(), expected: rows });
    }
    Ok(m)
}

fn read_labels(dir: &Path, name: &str, rows: usize) -> Result<Vec<u32>, DatasetError> {
    let file = dir.join(name);
    let labels = decode_u32s(&read_bytes(dir, name)?)
        .ok_or_else(|| DatasetError::Invalid { file: file.clone(), message: "length is not a multiple of 4".into() })?;
    if labels.len() != rows {
        return Err(DatasetError::RowMismatch { file, rows: labels.len(), expected: rows });
    }
    Ok(labels)
}

pub fn load_dataset(dir: &Path) -> Result<RegionDataset, DatasetError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = read_json(dir, MANIFEST_FILE)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DatasetError::Version { file: manifest_path, version: manifest.format_version });
    }
    if manifest.class_order.iter().map(String::as_str).ne(CLASS_ORDER.iter().copied()) {
        return Err(DatasetError::ClassOrder { file: manifest_path });
    }
    let n = manifest.sample_count;

    let samples_path = dir.join(&manifest.samples);
    let text = String::from_utf8(read_bytes(dir, &manifest.samples)?)
        .map_err(|e| DatasetError::Invalid { file: samples_path.clone(), message: e.to_string() })?;
    let mut samples = Vec::with_capacity(n);
    for (line_no, line) in text.lines().enumerate() {
        let rec: SampleRecord =
            serde_json::from_str(line).map_err(|source| DatasetError::Json { file: samples_path.clone(), source })?;
        if rec.id as usize != line_no {
            return Err(DatasetError::SampleIds { file: samples_path, line: line_no + 1, id: rec.id });
        }
        samples.push(rec);
    }
    if samples.len() != n {
        return Err(DatasetError::RowMismatch { file: samples_path, rows: samples.len(), expected: n });
    }

    let f = &manifest.features;
    let cat19 = f.cat19.as_deref().map(|p| read_matrix(dir, p, FeatureKind::Category19, n)).transpose()?;
    let cat6 = f.cat6.as_deref().map(|p| read_matrix(dir, p, FeatureKind::Category6, n)).transpose()?;
    let latent = f.latent.as_deref().map(|p| read_matrix(dir, p, FeatureKind::Latent, n)).transpose()?;

    let model = match &manifest.model {
        None => None,
        Some(files) => {
            let mm: ModelManifest = read_json(dir, &files.manifest)?;
            let kind = mm.features.unwrap_or(FeatureKind::Latent);
            let centroids = read_matrix(dir, &files.centroids, kind, mm.k)?;
            let assignments = read_labels(dir, &files.assignments, n)?;
            let model = ClusterModel::from_parts(&mm, &centroids, assignments)
                .map_err(|e| DatasetError::Invalid { file: dir.join(&files.manifest), message: e.to_string() })?;
            Some(StoredModel { model, features: kind })
        }
    };
    let catalog = manifest.catalog.as_deref().map(|p| read_json(dir, p)).transpose()?;
    let planted_labels = manifest.planted_labels.as_deref().map(|p| read_labels(dir, p, n)).transpose()?;
    let provider_fixture = manifest.provider_fixture.as_deref().map(|p| read_json(dir, p)).transpose()?;

    Ok(RegionDataset { manifest, samples, cat19, cat6, latent, model, catalog, planted_labels, provider_fixture })
}

//! Appearance patterns built from a fitted clustering: one per cluster,
//! summarised by the mean six-category vector of its members and the member
//! image closest to that mean.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterModel, Method, Metric};
use crate::features::{FeatureKind, FeatureMatrix};

/// Colour-blind-safe defaults (Okabe–Ito), assigned by pattern id.
pub const DEFAULT_PALETTE: [&str; 8] =
    ["#E69F00", "#56B4E9", "#009E73", "#F0E442", "#0072B2", "#D55E00", "#CC79A7", "#999999"];

/// Sample images listed per pattern unless configured otherwise.
pub const DEFAULT_SAMPLE_IMAGES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("no pattern with id {0}")]
    UnknownPattern(u32),
    #[error("colour {0} is already used by pattern {1}")]
    DuplicateColor(String, u32),
    #[error("malformed colour {0:?}, expected #RRGGBB")]
    MalformedColor(String),
    #[error("category matrix has {rows} rows but the model labels {labels} samples")]
    RowMismatch { rows: usize, labels: usize },
    #[error("pattern vectors need a Category6 matrix, got {0:?}")]
    WrongKind(FeatureKind),
    #[error("cluster {0} has no members")]
    EmptyCluster(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaPattern {
    pub id: u32,
    /// Mean Road/Sidewalk/Building/Vegetation/Terrain/Sky shares.
    pub vector: [f64; 6],
    /// Sample id of the member closest to `vector`.
    pub pattern_image: u32,
    pub name: String,
    pub color: String,
    pub member_count: usize,
    /// Members nearest to `vector`, nearest first.
    pub samples: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub metric: Metric,
    pub seed: u64,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternCatalog {
    pub region: String,
    pub patterns: Vec<VaPattern>,
    pub provenance: Provenance,
}

pub fn build_patterns(
    model: &ClusterModel,
    cat6: &FeatureMatrix,
    region: &str,
) -> Result<PatternCatalog, PatternError> {
    build_patterns_with(model, cat6, region, DEFAULT_SAMPLE_IMAGES)
}

pub fn build_patterns_with(
    model: &ClusterModel,
    cat6: &FeatureMatrix,
    region: &str,
    sample_images: usize,
) -> Result<PatternCatalog, PatternError> {
    if cat6.kind() != FeatureKind::Category6 {
        return Err(PatternError::WrongKind(cat6.kind()));
    }
    if cat6.rows() != model.assignments.len() {
        return Err(PatternError::RowMismatch { rows: cat6.rows(), labels: model.assignments.len() });
    }
    let mut patterns = Vec::with_capacity(model.k_effective);
    for (id, members) in model.members().into_iter().enumerate() {
        let id = id as u32;
        if members.is_empty() {
            return Err(PatternError::EmptyCluster(id));
        }
        let vector = mean_vector(cat6, &members);
        let mut ranked: Vec<(f64, usize)> = members
            .iter()
            .map(|&i| {
                let d: f64 = cat6.row(i).iter().zip(&vector).map(|(&x, y)| (x as f64 - y).powi(2)).sum();
                (d, i)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        patterns.push(VaPattern {
            id,
            vector,
            pattern_image: ranked[0].1 as u32,
            name: format!("VaPattern {}", id + 1),
            color: String::new(),
            member_count: members.len(),
            samples: ranked.iter().take(sample_images).map(|&(_, i)| i as u32).collect(),
        });
    }
    for (p, c) in patterns.iter_mut().zip(default_colors(model.k_effective)) {
        p.color = c;
    }
    Ok(PatternCatalog {
        region: region.to_string(),
        patterns,
        provenance: Provenance {
            method: model.method,
            metric: model.metric,
            seed: model.seed,
            k: model.k_effective,
            chosen_k: None,
            features: None,
            model: None,
        },
    })
}

/// Component-wise mean, clamped into the member range so float round-off
/// never leaves the convex hull.
fn mean_vector(cat6: &FeatureMatrix, members: &[usize]) -> [f64; 6] {
    let mut sum = [0.0f64; 6];
    let mut lo = [f64::INFINITY; 6];
    let mut hi = [f64::NEG_INFINITY; 6];
    for &i in members {
        for (j, &x) in cat6.row(i).iter().enumerate() {
            let x = x as f64;
            sum[j] += x;
            lo[j] = lo[j].min(x);
            hi[j] = hi[j].max(x);
        }
    }
    std::array::from_fn(|j| (sum[j] / members.len() as f64).clamp(lo[j], hi[j]))
}

/// The fixed palette, then golden-angle hues for anything beyond it.
pub fn default_colors(n: usize) -> Vec<String> {
    let mut out: Vec<String> = DEFAULT_PALETTE.iter().take(n).map(|s| s.to_string()).collect();
    let mut step = 0u32;
    while out.len() < n {
        let hue = (step as f64 * 137.507_764) % 360.0;
        step += 1;
        let c = hsv_hex(hue, 0.65, 0.85);
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

fn hsv_hex(h: f64, s: f64, v: f64) -> String {
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to = |u: f64| ((u + m) * 255.0).round() as u8;
    format!("#{:02X}{:02X}{:02X}", to(r), to(g), to(b))
}

/// Validates `#RRGGBB` and returns it upper-cased.
pub fn parse_color(s: &str) -> Result<String, PatternError> {
    let hex = s.strip_prefix('#').ok_or_else(|| PatternError::MalformedColor(s.into()))?;
    if hex.len() != 6 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(PatternError::MalformedColor(s.into()));
    }
    Ok(format!("#{}", hex.to_ascii_uppercase()))
}

impl PatternCatalog {
    pub fn get(&self, id: u32) -> Option<&VaPattern> {
        self.patterns.iter().find(|p| p.id == id)
    }

    fn get_mut(&mut self, id: u32) -> Result<&mut VaPattern, PatternError> {
        self.patterns.iter_mut().find(|p| p.id == id).ok_or(PatternError::UnknownPattern(id))
    }

    pub fn rename_pattern(&mut self, id: u32, name: &str) -> Result<&VaPattern, PatternError> {
        let p = self.get_mut(id)?;
        p.name = name.to_string();
        Ok(p)
    }

    pub fn recolor_pattern(&mut self, id: u32, color: &str) -> Result<&VaPattern, PatternError> {
        let color = parse_color(color)?;
        self.get_mut(id)?;
        if let Some(other) = self.patterns.iter().find(|p| p.id != id && p.color.eq_ignore_ascii_case(&color)) {
            return Err(PatternError::DuplicateColor(color, other.id));
        }
        let p = self.get_mut(id)?;
        p.color = color;
        Ok(p)
    }

    pub fn total_members(&self) -> usize {
        self.patterns.iter().map(|p| p.member_count).sum()
    }
}

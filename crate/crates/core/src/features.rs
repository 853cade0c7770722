//! Image encodings: semantic category histograms, the six-category
//! reduction, dispersion-ratio feature selection and the dense feature
//! matrix shared by the clustering code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod vivf;

/// Number of semantic classes produced by the segmentation network.
pub const NUM_CLASSES: usize = 19;

/// Class names in label-id order.
pub const CLASS_ORDER: [&str; NUM_CLASSES] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// Label ids of the six major categories: road, sidewalk, building,
/// vegetation, terrain, sky.
pub const MAJOR_CLASSES: [usize; 6] = [0, 1, 2, 8, 9, 10];

/// Display names for the six major categories, in reduced-vector order.
pub const MAJOR_NAMES: [&str; 6] = ["Road", "Sidewalk", "Building", "Vegetation", "Terrain", "Sky"];

/// Shift applied before taking the geometric mean so zero fractions stay finite.
pub const DISPERSION_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("label mask is empty")]
    EmptyMask,
    #[error("label mask is {width}x{height} but holds {len} labels")]
    MaskShape { width: usize, height: usize, len: usize },
    #[error("label {label} at pixel {index} is not a known class")]
    UnknownLabel { index: usize, label: u8 },
    #[error("feature matrix is {rows}x{cols} but holds {len} values")]
    MatrixShape { rows: usize, cols: usize, len: usize },
    #[error("dispersion ratios need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("negative feature value {value} at row {row}, column {col}")]
    NegativeValue { row: usize, col: usize, value: f64 },
    #[error("expected a {expected:?} matrix, got {actual:?}")]
    WrongKind { expected: FeatureKind, actual: FeatureKind },
    #[error("vector has {actual} components, expected {expected}")]
    WrongLength { expected: usize, actual: usize },
}

/// Per-pixel class ids of one segmented image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, FeatureError> {
        if width * height != labels.len() {
            return Err(FeatureError::MaskShape { width, height, len: labels.len() });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
            return Err(FeatureError::UnknownLabel { index, label });
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Fraction of pixels in each of the 19 classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryVector19(pub [f64; NUM_CLASSES]);

/// Fractions of the six major classes, copied from the 19-class vector
/// without renormalising.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryVector6(pub [f64; 6]);

impl CategoryVector19 {
    pub fn from_slice(values: &[f64]) -> Result<Self, FeatureError> {
        let arr: [f64; NUM_CLASSES] =
            values.try_into().map_err(|_| FeatureError::WrongLength { expected: NUM_CLASSES, actual: values.len() })?;
        Ok(Self(arr))
    }

    pub fn get(&self, class: &str) -> Option<f64> {
        CLASS_ORDER.iter().position(|&c| c == class).map(|i| self.0[i])
    }
}

pub fn category_histogram(mask: &LabelMask) -> Result<CategoryVector19, FeatureError> {
    if mask.labels.is_empty() {
        return Err(FeatureError::EmptyMask);
    }
    let mut counts = [0u64; NUM_CLASSES];
    for &l in &mask.labels {
        counts[l as usize] += 1;
    }
    let total = mask.labels.len() as f64;
    Ok(CategoryVector19(counts.map(|c| c as f64 / total)))
}

pub fn reduce_to_major(v: &CategoryVector19) -> CategoryVector6 {
    CategoryVector6(MAJOR_CLASSES.map(|i| v.0[i]))
}

/// Which encoding a [`FeatureMatrix`] holds. The discriminant is the on-disk
/// kind code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Category19 = 0,
    Category6 = 1,
    Latent = 2,
}

impl FeatureKind {
    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            0 => Some(Self::Category19),
            1 => Some(Self::Category6),
            2 => Some(Self::Latent),
            _ => None,
        }
    }
}

/// Dense row-major `f32` matrix; row `i` belongs to sample id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    kind: FeatureKind,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(kind: FeatureKind, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, FeatureError> {
        if rows * cols != data.len() {
            return Err(FeatureError::MatrixShape { rows, cols, len: data.len() });
        }
        Ok(Self { rows, cols, kind, data })
    }

    /// Builds a matrix from `f64` rows. Panics if rows have unequal length.
    pub fn from_rows<R: AsRef<[f64]>>(kind: FeatureKind, rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend(r.iter().map(|&x| x as f32));
        }
        Self { rows: rows.len(), cols, kind, data }
    }

    pub fn empty(kind: FeatureKind, cols: usize) -> Self {
        Self { rows: 0, cols, kind, data: Vec::new() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact(0) panics, so special-case zero-width matrices
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(if self.cols == 0 { 0 } else { self.rows })
    }

    /// Copies the selected rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, kind: self.kind, data }
    }

    fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.data[i * self.cols + j] as f64)
    }

    /// Reduces a 19-class matrix to the six major columns.
    pub fn reduce_to_major(&self) -> Result<Self, FeatureError> {
        if self.kind != FeatureKind::Category19 {
            return Err(FeatureError::WrongKind { expected: FeatureKind::Category19, actual: self.kind });
        }
        let mut data = Vec::with_capacity(self.rows * 6);
        for r in self.iter_rows() {
            data.extend(MAJOR_CLASSES.iter().map(|&c| r[c]));
        }
        Ok(Self { rows: self.rows, cols: 6, kind: FeatureKind::Category6, data })
    }
}

/// Arithmetic-mean / geometric-mean ratio of each column after shifting by
/// [`DISPERSION_EPS`]. Always at least 1; exactly 1 for constant columns.
pub fn dispersion_ratios(m: &FeatureMatrix) -> Result<Vec<f64>, FeatureError> {
    if m.rows < 2 {
        return Err(FeatureError::TooFewRows(m.rows));
    }
    if let Some((idx, &v)) = m.data.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(FeatureError::NegativeValue { row: idx / m.cols, col: idx % m.cols, value: v as f64 });
    }
    let n = m.rows as f64;
    Ok((0..m.cols)
        .map(|j| {
            let first = m.data[j];
            if m.column(j).all(|x| x == first as f64) {
                return 1.0;
            }
            let am = m.column(j).map(|x| x + DISPERSION_EPS).sum::<f64>() / n;
            let log_gm = m.column(j).map(|x| (x + DISPERSION_EPS).ln()).sum::<f64>() / n;
            (am / log_gm.exp()).max(1.0)
        })
        .collect())
}

/// Outcome of [`select_features`]: chosen columns plus every ratio for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub selected: Vec<usize>,
    pub ratios: Vec<f64>,
    pub cutoff: f64,
}

impl FeatureSelection {
    pub fn selected_names(&self) -> Vec<&'static str> {
        self.selected.iter().map(|&i| CLASS_ORDER[i]).collect()
    }
}

/// Columns whose dispersion ratio exceeds `cutoff`, by descending ratio
/// (ties by column index).
pub fn select_features(m: &FeatureMatrix, cutoff: f64) -> Result<FeatureSelection, FeatureError> {
    if m.kind != FeatureKind::Category19 {
        return Err(FeatureError::WrongKind { expected: FeatureKind::Category19, actual: m.kind });
    }
    let ratios = dispersion_ratios(m)?;
    let mut selected: Vec<usize> = (0..ratios.len()).filter(|&j| ratios[j] > cutoff).collect();
    selected.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]).then(a.cmp(&b)));
    Ok(FeatureSelection { selected, ratios, cutoff })
}

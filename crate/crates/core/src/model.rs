//! Shared data model: labels, images, detections and embeddings.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reserved label name for frames without an animal.
pub const EMPTY_LABEL: &str = "empty";

/// Slack allowed on normalized box coordinates before rejecting them.
pub const BOX_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassLabel {
    pub id: u32,
    pub name: String,
}

/// Ordered, contiguous set of class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    labels: Vec<ClassLabel>,
    has_empty: bool,
}

impl LabelSpace {
    /// Builds a label space, assigning ids `0..n` in the given order.
    ///
    /// Names are lowercased; duplicates (after lowercasing) and blank names are
    /// rejected. `has_empty` is set when the reserved `"empty"` label is present.
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut labels = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let name = name.as_ref().trim().to_lowercase();
            if name.is_empty() {
                return Err(Error::invalid(format!("label {i} has a blank name")));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::DuplicateKey(format!("label name {name:?}")));
            }
            labels.push(ClassLabel { id: i as u32, name });
        }
        let has_empty = seen.contains(EMPTY_LABEL);
        Ok(Self { labels, has_empty })
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has_empty(&self) -> bool {
        self.has_empty
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(|l| l.name.as_str())
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        let name = name.to_lowercase();
        self.labels.iter().find(|l| l.name == name).map(|l| l.id)
    }

    pub fn empty_id(&self) -> Option<u32> {
        self.id(EMPTY_LABEL)
    }

    /// Label names usable as retrieval or prompt categories (everything but `"empty"`).
    pub fn category_names(&self) -> Vec<&str> {
        self.labels
            .iter()
            .filter(|l| l.name != EMPTY_LABEL)
            .map(|l| l.name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Cis,
    Trans,
    None,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Cis => "cis",
            SplitTag::Trans => "trans",
            SplitTag::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub file_name: String,
    pub location_id: String,
    pub width: u32,
    pub height: u32,
    pub timestamp: Option<NaiveDateTime>,
    pub gt_label: Option<u32>,
    pub split_tag: Option<SplitTag>,
}

impl ImageRecord {
    /// Minimal record used by tests and tools that only care about ids and locations.
    pub fn new(image_id: impl Into<String>, location_id: impl Into<String>) -> Self {
        let image_id = image_id.into();
        Self {
            file_name: image_id.clone(),
            image_id,
            location_id: location_id.into(),
            width: 1,
            height: 1,
            timestamp: None,
            gt_label: None,
            split_tag: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionCategory {
    Animal,
    Person,
    Vehicle,
}

impl DetectionCategory {
    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "animal" => Some(Self::Animal),
            "person" => Some(Self::Person),
            "vehicle" => Some(Self::Vehicle),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Animal => "animal",
            Self::Person => "person",
            Self::Vehicle => "vehicle",
        }
    }
}

/// Normalized `[x, y, w, h]` box with a top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Checks the box against the unit square (with [`BOX_EPSILON`] slack) and
    /// clamps it into `[0, 1]`.
    pub fn validated(self) -> Result<Self> {
        let Self { x, y, w, h } = self;
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite box coordinate"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::ZeroArea);
        }
        if x < -BOX_EPSILON || y < -BOX_EPSILON {
            return Err(Error::invalid(format!("box origin ({x}, {y}) is negative")));
        }
        if x + w > 1.0 + BOX_EPSILON || y + h > 1.0 + BOX_EPSILON {
            return Err(Error::invalid(format!(
                "box [{x}, {y}, {w}, {h}] extends past the image (x+w = {}, y+h = {})",
                x + w,
                y + h
            )));
        }
        let x0 = x.clamp(0.0, 1.0);
        let y0 = y.clamp(0.0, 1.0);
        let x1 = (x + w).clamp(0.0, 1.0);
        let y1 = (y + h).clamp(0.0, 1.0);
        Ok(Self::new(x0, y0, x1 - x0, y1 - y0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub category: DetectionCategory,
    pub confidence: f64,
    pub bbox: NormBox,
}

impl DetectionRecord {
    pub fn new(
        image_id: impl Into<String>,
        category: DetectionCategory,
        confidence: f64,
        bbox: NormBox,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            image_id: image_id.into(),
            category,
            confidence,
            bbox: bbox.validated()?,
        })
    }
}

/// Which rendition of an image an embedding was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Cropped,
    Segmented,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Cropped => "cropped",
            Variant::Segmented => "segmented",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "cropped" => Ok(Variant::Cropped),
            "segmented" => Ok(Variant::Segmented),
            other => Err(Error::invalid(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub image_id: String,
    pub variant: Variant,
    pub label: Option<u32>,
    pub location_id: String,
    pub vector: Vec<f32>,
}

/// Row-major block of `count` embeddings of equal `dimension`, with parallel
/// id/label/location columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    dimension: usize,
    data: Vec<T>,
    ids: Vec<String>,
    labels: Vec<Option<u32>>,
    locations: Vec<String>,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn empty(dimension: usize) -> Self {
        Self {
            dimension,
            data: Vec::new(),
            ids: Vec::new(),
            labels: Vec::new(),
            locations: Vec::new(),
        }
    }

    /// Assembles a matrix from parallel columns, rejecting inconsistent lengths
    /// and non-finite values.
    pub fn from_parts(
        dimension: usize,
        data: Vec<T>,
        ids: Vec<String>,
        labels: Vec<Option<u32>>,
        locations: Vec<String>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let count = ids.len();
        if labels.len() != count || locations.len() != count {
            return Err(Error::invalid(format!(
                "parallel columns disagree: {} ids, {} labels, {} locations",
                count,
                labels.len(),
                locations.len()
            )));
        }
        if data.len() != count * dimension {
            return Err(Error::invalid(format!(
                "data holds {} values, expected {count} x {dimension}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / dimension });
        }
        Ok(Self {
            dimension,
            data,
            ids,
            labels,
            locations,
        })
    }

    /// Convenience constructor: rows with generated ids `"0"`, `"1"`, ... and no locations.
    pub fn from_rows(rows: &[Vec<T>], labels: Vec<Option<u32>>) -> Result<Self> {
        let dimension = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != dimension) {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                actual: bad.len(),
            });
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        let locations = vec![String::new(); rows.len()];
        let data = rows.iter().flatten().copied().collect();
        Self::from_parts(dimension.max(1), data, ids, labels, locations)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dimension)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    /// Converts the scalar type, e.g. to run the `f32` store through `f64` kernels.
    pub fn cast<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            dimension: self.dimension,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
            ids: self.ids.clone(),
            labels: self.labels.clone(),
            locations: self.locations.clone(),
        }
    }
}

/// Orders location ids numerically when both parse as integers, lexicographically
/// otherwise; numeric ids sort before textual ones.
pub fn compare_location_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

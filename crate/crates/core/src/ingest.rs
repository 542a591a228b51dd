//! Parsers for MegaDetector batch output and COCO-CameraTraps annotations.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{DetectionCategory, DetectionRecord, ImageRecord, LabelSpace, NormBox, SplitTag};

/// One image entry of a MegaDetector batch file.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionImage {
    pub file: String,
    pub detections: Vec<DetectionRecord>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFile {
    pub images: Vec<DetectionImage>,
    pub category_map: BTreeMap<String, DetectionCategory>,
    pub format_version: Option<String>,
}

impl DetectionFile {
    pub fn detections_for(&self, file: &str) -> Option<&[DetectionRecord]> {
        self.images
            .iter()
            .find(|i| i.file == file)
            .map(|i| i.detections.as_slice())
    }

    /// Serializes back to the batch schema. Category codes are recovered from
    /// `category_map`; only the fields the parser reads are emitted.
    pub fn to_json(&self) -> Value {
        let code_of: HashMap<DetectionCategory, &str> = self
            .category_map
            .iter()
            .map(|(code, cat)| (*cat, code.as_str()))
            .collect();
        let images: Vec<RawMdImage> = self
            .images
            .iter()
            .map(|img| RawMdImage {
                file: img.file.clone(),
                detections: Some(
                    img.detections
                        .iter()
                        .map(|d| RawMdDetection {
                            category: code_of.get(&d.category).copied().unwrap_or("1").to_string(),
                            conf: d.confidence,
                            bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                        })
                        .collect(),
                ),
                failure: img.failure.clone(),
            })
            .collect();
        let doc = RawMdDoc {
            images,
            detection_categories: Some(
                self.category_map
                    .iter()
                    .map(|(k, v)| (k.clone(), v.name().to_string()))
                    .collect(),
            ),
            info: self.format_version.as_ref().map(|v| RawMdInfo {
                format_version: Some(v.clone()),
            }),
        };
        serde_json::to_value(doc).expect("detection file serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMdDoc {
    images: Vec<RawMdImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detection_categories: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    info: Option<RawMdInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMdInfo {
    #[serde(default)]
    format_version: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMdImage {
    file: String,
    #[serde(default)]
    detections: Option<Vec<RawMdDetection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMdDetection {
    category: String,
    conf: f64,
    bbox: [f64; 4],
}

fn default_category_map() -> BTreeMap<String, DetectionCategory> {
    BTreeMap::from([
        ("1".to_string(), DetectionCategory::Animal),
        ("2".to_string(), DetectionCategory::Person),
        ("3".to_string(), DetectionCategory::Vehicle),
    ])
}

/// Parses a MegaDetector batch-output document.
///
/// `source_name` is only used to label errors. Images carrying a `failure`
/// field yield zero detections and keep the note.
pub fn parse_megadetector_json(document: &[u8], source_name: &str) -> Result<DetectionFile> {
    let raw: RawMdDoc = serde_json::from_slice(document).map_err(|e| Error::parse(source_name, None, e.to_string()))?;

    let category_map = match raw.detection_categories {
        None => default_category_map(),
        Some(map) => map
            .into_iter()
            .map(|(code, name)| {
                DetectionCategory::from_name(&name)
                    .map(|c| (code.clone(), c))
                    .ok_or_else(|| {
                        Error::parse(
                            source_name,
                            None,
                            format!("unknown detection category {name:?} for code {code:?}"),
                        )
                    })
            })
            .collect::<Result<_>>()?,
    };

    let mut images = Vec::with_capacity(raw.images.len());
    for (index, img) in raw.images.into_iter().enumerate() {
        let err = |msg: String| Error::parse(source_name, Some(index), format!("{}: {msg}", img.file));
        let mut detections = Vec::new();
        if img.failure.is_none() {
            for d in img.detections.iter().flatten() {
                let category = *category_map
                    .get(&d.category)
                    .ok_or_else(|| err(format!("unknown category code {:?}", d.category)))?;
                let [x, y, w, h] = d.bbox;
                let det = DetectionRecord::new(img.file.clone(), category, d.conf, NormBox::new(x, y, w, h))
                    .map_err(|e| err(e.to_string()))?;
                detections.push(det);
            }
        }
        images.push(DetectionImage {
            file: img.file,
            detections,
            failure: img.failure,
        });
    }

    Ok(DetectionFile {
        images,
        category_map,
        format_version: raw.info.and_then(|i| i.format_version),
    })
}

/// Parsed COCO-CameraTraps annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    /// Images kept for evaluation, in document order; `gt_label` holds the species.
    pub images: Vec<ImageRecord>,
    pub label_space: LabelSpace,
    /// Original category id for each contiguous label id.
    pub source_category_ids: Vec<i64>,
    /// Images dropped because they carry more than one distinct species
    /// (`gt_label` unset).
    pub excluded_multi_species: Vec<ImageRecord>,
}

impl AnnotationSet {
    pub fn ground_truth(&self) -> BTreeMap<&str, u32> {
        self.images
            .iter()
            .filter_map(|i| i.gt_label.map(|l| (i.image_id.as_str(), l)))
            .collect()
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == image_id)
    }
}

#[derive(Debug, Deserialize)]
struct RawCoco {
    images: Vec<RawCocoImage>,
    annotations: Vec<RawCocoAnnotation>,
    categories: Vec<RawCocoCategory>,
}

#[derive(Debug, Deserialize)]
struct RawCocoImage {
    id: Value,
    file_name: String,
    width: Option<u32>,
    height: Option<u32>,
    #[serde(default)]
    location: Option<Value>,
    #[serde(default)]
    date_captured: Option<String>,
    #[serde(default)]
    split: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawCocoAnnotation {
    image_id: Value,
    category_id: i64,
}

#[derive(Debug, Deserialize)]
struct RawCocoCategory {
    id: i64,
    name: String,
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn split_tag(raw: &str) -> Option<SplitTag> {
    let raw = raw.to_ascii_lowercase();
    if raw.contains("trans") {
        Some(SplitTag::Trans)
    } else if raw.contains("cis") {
        Some(SplitTag::Cis)
    } else {
        None
    }
}

/// Lenient timestamp parsing over the formats seen in camera-trap metadata.
pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 6] = [
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y:%m:%d %H:%M:%S%.f",
        "%Y/%m/%d %H:%M:%S%.f",
        "%m/%d/%Y %H:%M:%S%.f",
        "%d.%m.%Y %H:%M:%S%.f",
    ];
    let raw = raw.trim();
    let raw = raw.strip_suffix('Z').unwrap_or(raw);
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// Parses a COCO-CameraTraps document.
///
/// Category ids are remapped to contiguous label ids in ascending source-id
/// order. Images with two or more distinct species are excluded and listed in
/// [`AnnotationSet::excluded_multi_species`]. An optional per-image `split`
/// field containing `cis` or `trans` sets the split tag.
pub fn parse_coco_cameratraps(document: &[u8], source_name: &str) -> Result<AnnotationSet> {
    let raw: RawCoco = serde_json::from_slice(document).map_err(|e| Error::parse(source_name, None, e.to_string()))?;

    let mut categories: Vec<&RawCocoCategory> = raw.categories.iter().collect();
    categories.sort_by_key(|c| c.id);
    for pair in categories.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::parse(
                source_name,
                None,
                format!("duplicate category id {}", pair[0].id),
            ));
        }
    }
    let names: Vec<&str> = categories.iter().map(|c| c.name.as_str()).collect();
    let label_space = LabelSpace::new(&names).map_err(|e| Error::parse(source_name, None, e.to_string()))?;
    let source_category_ids: Vec<i64> = categories.iter().map(|c| c.id).collect();
    let label_of: HashMap<i64, u32> = source_category_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i as u32))
        .collect();

    let mut images = Vec::with_capacity(raw.images.len());
    let mut index_of = HashMap::with_capacity(raw.images.len());
    for (index, img) in raw.images.iter().enumerate() {
        let err = |msg: String| Error::parse(source_name, Some(index), msg);
        let image_id = id_string(&img.id).ok_or_else(|| err("image id must be a string or number".into()))?;
        if index_of.insert(image_id.clone(), images.len()).is_some() {
            return Err(err(format!("duplicate image id {image_id:?}")));
        }
        let (width, height) = match (img.width, img.height) {
            (Some(w), Some(h)) if w >= 1 && h >= 1 => (w, h),
            _ => return Err(err(format!("image {image_id:?} lacks a positive width/height"))),
        };
        images.push(ImageRecord {
            image_id,
            file_name: img.file_name.clone(),
            location_id: img.location.as_ref().and_then(id_string).unwrap_or_default(),
            width,
            height,
            timestamp: img.date_captured.as_deref().and_then(parse_timestamp),
            gt_label: None,
            split_tag: img.split.as_deref().and_then(split_tag),
        });
    }

    let mut species: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); images.len()];
    for (index, ann) in raw.annotations.iter().enumerate() {
        let err = |msg: String| Error::parse(source_name, Some(index), msg);
        let image_id =
            id_string(&ann.image_id).ok_or_else(|| err("annotation image_id must be a string or number".into()))?;
        let &slot = index_of
            .get(&image_id)
            .ok_or_else(|| err(format!("annotation references missing image {image_id:?}")))?;
        let &label = label_of
            .get(&ann.category_id)
            .ok_or_else(|| err(format!("annotation references unknown category {}", ann.category_id)))?;
        species[slot].insert(label);
    }

    let mut kept = Vec::with_capacity(images.len());
    let mut excluded = Vec::new();
    for (mut img, labels) in images.into_iter().zip(species) {
        match labels.len() {
            0 => kept.push(img),
            1 => {
                img.gt_label = labels.first().copied();
                kept.push(img);
            }
            _ => excluded.push(img),
        }
    }

    Ok(AnnotationSet {
        images: kept,
        label_space,
        source_category_ids,
        excluded_multi_species: excluded,
    })
}

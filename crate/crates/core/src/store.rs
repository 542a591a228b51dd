//! On-disk embedding store.
//!
//! A store is a directory holding three files:
//!
//! * `manifest.json`: `{"dimension": D, "count": N, "dtype": "float32le", "variant": "..."}`
//! * `vectors.bin`: `N * D` little-endian `f32`, row-major, no per-row header
//! * `records.jsonl`: one `{"image_id", "label", "location"}` line per row, in row order

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EmbeddingMatrix, EmbeddingRecord, Variant};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VECTORS_FILE: &str = "vectors.bin";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const DTYPE_F32_LE: &str = "float32le";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dimension: usize,
    pub count: usize,
    pub dtype: String,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RecordLine {
    image_id: String,
    label: Option<u32>,
    location: String,
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub variant: Variant,
    /// Required when writing zero records; otherwise checked against the records.
    pub dimension: Option<usize>,
    /// Label id that must not appear (the reserved empty class of a retrieval database).
    pub reserved_label: Option<u32>,
}

impl StoreOptions {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            dimension: None,
            reserved_label: None,
        }
    }

    pub fn dimension(mut self, dimension: usize) -> Self {
        self.dimension = Some(dimension);
        self
    }

    pub fn reserve_label(mut self, label: u32) -> Self {
        self.reserved_label = Some(label);
        self
    }
}

#[derive(Debug, Clone)]
pub struct StoreHandle {
    pub path: PathBuf,
    pub manifest: Manifest,
}

impl StoreHandle {
    pub fn load(&self) -> Result<EmbeddingMatrix<f32>> {
        read_embedding_store(&self.path)
    }
}

pub fn write_embedding_store(
    dir: impl AsRef<Path>,
    records: &[EmbeddingRecord],
    options: &StoreOptions,
) -> Result<StoreHandle> {
    let dir = dir.as_ref();
    let dimension = match (options.dimension, records.first()) {
        (Some(d), _) => d,
        (None, Some(r)) => r.vector.len(),
        (None, None) => {
            return Err(Error::invalid(
                "cannot infer the dimension of an empty store; declare it",
            ))
        }
    };
    if dimension == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }

    let mut keys = HashSet::with_capacity(records.len());
    for (row, r) in records.iter().enumerate() {
        if r.vector.len() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                actual: r.vector.len(),
            });
        }
        if r.variant != options.variant {
            return Err(Error::invalid(format!(
                "record {} has variant {}, store variant is {}",
                r.image_id, r.variant, options.variant
            )));
        }
        if !keys.insert((r.image_id.as_str(), r.variant)) {
            return Err(Error::DuplicateKey(format!("({}, {})", r.image_id, r.variant)));
        }
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row });
        }
        if let (Some(reserved), Some(label)) = (options.reserved_label, r.label) {
            if reserved == label {
                return Err(Error::ReservedLabel {
                    image_id: r.image_id.clone(),
                    label,
                });
            }
        }
    }

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let vectors_path = dir.join(VECTORS_FILE);
    let mut out = BufWriter::new(File::create(&vectors_path).map_err(|e| Error::io(&vectors_path, e))?);
    for r in records {
        for v in &r.vector {
            out.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(&vectors_path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(&vectors_path, e))?;

    let records_path = dir.join(RECORDS_FILE);
    let mut out = BufWriter::new(File::create(&records_path).map_err(|e| Error::io(&records_path, e))?);
    for r in records {
        let line = RecordLine {
            image_id: r.image_id.clone(),
            label: r.label,
            location: r.location_id.clone(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::io(&records_path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(&records_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&records_path, e))?;

    // manifest last: a directory without one is an incomplete store
    let manifest = Manifest {
        dimension,
        count: records.len(),
        dtype: DTYPE_F32_LE.to_string(),
        variant: options.variant,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    Ok(StoreHandle {
        path: dir.to_path_buf(),
        manifest,
    })
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::CorruptManifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.dtype != DTYPE_F32_LE {
        return Err(Error::CorruptManifest {
            path,
            message: format!("unsupported dtype {:?}", manifest.dtype),
        });
    }
    if manifest.dimension == 0 {
        return Err(Error::CorruptManifest {
            path,
            message: "dimension must be positive".into(),
        });
    }
    Ok(manifest)
}

pub fn read_embedding_store(dir: impl AsRef<Path>) -> Result<EmbeddingMatrix<f32>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let (count, dimension) = (manifest.count, manifest.dimension);

    let vectors_path = dir.join(VECTORS_FILE);
    let bytes = fs::read(&vectors_path).map_err(|e| Error::io(&vectors_path, e))?;
    let expected = (count as u64) * (dimension as u64) * 4;
    if bytes.len() as u64 != expected {
        let actual = bytes.len() as u64;
        let implied_dimension =
            (count > 0 && actual.is_multiple_of(4 * count as u64)).then(|| (actual / (4 * count as u64)) as usize);
        return Err(Error::ByteCount {
            expected,
            actual,
            count,
            dimension,
            implied_dimension,
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let records_path = dir.join(RECORDS_FILE);
    let name = records_path.display().to_string();
    let reader = BufReader::new(File::open(&records_path).map_err(|e| Error::io(&records_path, e))?);
    let mut ids = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut locations = Vec::with_capacity(count);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&records_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| Error::parse(&name, Some(i), e.to_string()))?;
        ids.push(rec.image_id);
        labels.push(rec.label);
        locations.push(rec.location);
    }
    if ids.len() != count {
        return Err(Error::CorruptManifest {
            path: dir.join(MANIFEST_FILE),
            message: format!("manifest count {count} but {} has {} rows", RECORDS_FILE, ids.len()),
        });
    }
    EmbeddingMatrix::from_parts(dimension, data, ids, labels, locations)
}

//! Datasets, ingestion and on-disk formats.
//!
//! * IDX3 image files (big-endian header, 8-bit pixels).
//! * `raw_grid`: magic `OTG1`, then `u32` count, rows, cols and the weights as
//!   row-major `f64`, all little-endian.
//! * A tensor container used for model checkpoints: magic `OTWSCKPT`, `u32`
//!   version, a length-prefixed JSON header, the tensor section, and a CRC32
//!   of the tensor section.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, GridGeometry, MASS_TOLERANCE};

/// Positivity floor added to every pixel before normalization.
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    RandomR3,
    IdxImages,
    RawGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Number of measures to generate, or an upper bound on how many to read.
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub floor: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn random_r3(side: usize, count: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::RandomR3,
            count,
            rows: side,
            cols: side,
            floor: DEFAULT_FLOOR,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("dataset count must be at least 1"));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(Error::invalid(format!(
                "positivity floor {} must be positive",
                self.floor
            )));
        }
        Ok(())
    }
}

/// Adds `floor` to every value and normalizes to unit mass.
pub fn floor_and_normalize(
    raw: &[f64],
    floor: f64,
    geometry: Arc<GridGeometry>,
) -> Result<DiscreteMeasure> {
    DiscreteMeasure::normalized(raw.iter().map(|x| x + floor).collect(), geometry)
}

/// Pixels `r³` with `r ~ U[0, 1]`, floored and normalized.
pub fn gen_random_r3(spec: &DatasetSpec) -> Result<Vec<DiscreteMeasure>> {
    spec.validate()?;
    if spec.kind != DatasetKind::RandomR3 {
        return Err(Error::invalid(format!(
            "expected a random_r3 spec, got {:?}",
            spec.kind
        )));
    }
    let geometry = Arc::new(GridGeometry::new(spec.rows, spec.cols)?);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut raw = vec![0.0; geometry.len()];
    (0..spec.count)
        .map(|_| {
            for x in raw.iter_mut() {
                *x = rng.random::<f64>().powi(3);
            }
            floor_and_normalize(&raw, spec.floor, geometry.clone())
        })
        .collect()
}

/// ITU-R 601 luma for RGB sources.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Byte cursor reporting offsets in format errors.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Format {
                offset: self.pos,
                reason: format!(
                    "truncated while reading {what} ({len} bytes wanted, {} left)",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64_le(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_le(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fail(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }
}

const IDX3_MAGIC: u32 = 0x0000_0803;

/// Parses an IDX3 image file. At most `limit` images are converted.
pub fn parse_idx_images(bytes: &[u8], floor: f64, limit: usize) -> Result<Vec<DiscreteMeasure>> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.u32_be("magic")?;
    if magic != IDX3_MAGIC {
        return Err(cur.fail(
            0,
            format!("magic {magic:#010x} is not an IDX3 image file ({IDX3_MAGIC:#010x})"),
        ));
    }
    let count = cur.u32_be("image count")? as usize;
    let rows = cur.u32_be("row count")? as usize;
    let cols = cur.u32_be("column count")? as usize;
    let geometry = Arc::new(GridGeometry::new(rows, cols).map_err(|e| cur.fail(8, e.to_string()))?);
    let pixels = rows * cols;
    let mut raw = vec![0.0; pixels];
    (0..count.min(limit))
        .map(|k| {
            let image = cur.take(pixels, &format!("image {k}"))?;
            for (x, &p) in raw.iter_mut().zip(image) {
                *x = p as f64 / 255.0;
            }
            floor_and_normalize(&raw, floor, geometry.clone())
        })
        .collect()
}

pub fn load_idx_images(path: &Path, spec: &DatasetSpec) -> Result<Vec<DiscreteMeasure>> {
    spec.validate()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes, spec.floor, spec.count)
}

/// Encodes an IDX3 file from 8-bit images of one shape.
pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX3_MAGIC.to_be_bytes());
    for d in [images.len(), rows, cols] {
        out.extend_from_slice(
            &u32::try_from(d)
                .map_err(|_| Error::invalid("dimension exceeds u32"))?
                .to_be_bytes(),
        );
    }
    for (k, image) in images.iter().enumerate() {
        if image.len() != rows * cols {
            return Err(Error::invalid(format!(
                "image {k} has {} pixels, expected {}",
                image.len(),
                rows * cols
            )));
        }
        out.extend_from_slice(image);
    }
    Ok(out)
}

const RAW_GRID_MAGIC: &[u8; 4] = b"OTG1";

pub fn encode_raw_grid(measures: &[DiscreteMeasure]) -> Result<Vec<u8>> {
    let first = measures
        .first()
        .ok_or_else(|| Error::invalid("no measures to encode"))?;
    let geometry = first.geometry().clone();
    let mut out = Vec::with_capacity(16 + measures.len() * geometry.len() * 8);
    out.extend_from_slice(RAW_GRID_MAGIC);
    for d in [measures.len(), geometry.rows(), geometry.cols()] {
        out.extend_from_slice(
            &u32::try_from(d)
                .map_err(|_| Error::invalid("dimension exceeds u32"))?
                .to_le_bytes(),
        );
    }
    for (k, m) in measures.iter().enumerate() {
        if m.geometry().rows() != geometry.rows() || m.geometry().cols() != geometry.cols() {
            return Err(Error::invalid(format!(
                "measure {k} is not on the grid of measure 0"
            )));
        }
        for w in m.weights() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a raw grid. Records that are already strictly positive with unit
/// mass are kept bit-for-bit; anything else gets `floor` added and is
/// renormalized.
pub fn decode_raw_grid(bytes: &[u8], floor: f64) -> Result<Vec<DiscreteMeasure>> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4, "magic")? != RAW_GRID_MAGIC {
        return Err(cur.fail(0, "missing OTG1 magic"));
    }
    let count = cur.u32_le("record count")? as usize;
    let rows = cur.u32_le("row count")? as usize;
    let cols = cur.u32_le("column count")? as usize;
    let geometry = Arc::new(GridGeometry::new(rows, cols).map_err(|e| cur.fail(8, e.to_string()))?);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = cur.pos;
        let mut w = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            w.push(cur.f64_le(&format!("record {k}"))?);
        }
        if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(cur.fail(start, format!("record {k} has weight {bad}")));
        }
        let total: f64 = crate::sum::pairwise_sum(&w);
        let measure = if w.iter().all(|&x| x > 0.0) && (total - 1.0).abs() <= MASS_TOLERANCE {
            DiscreteMeasure::new(Array1::from(w), geometry.clone())?
        } else {
            floor_and_normalize(&w, floor, geometry.clone())?
        };
        out.push(measure);
    }
    if cur.pos != bytes.len() {
        return Err(cur.fail(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(out)
}

pub fn save_raw_grid(path: &Path, measures: &[DiscreteMeasure]) -> Result<()> {
    write_file(path, &encode_raw_grid(measures)?)
}

pub fn load_raw_grid(path: &Path, floor: f64) -> Result<Vec<DiscreteMeasure>> {
    decode_raw_grid(&fs::read(path).map_err(|e| Error::io(path, e))?, floor)
}

/// Binary PGM with intensities scaled so the heaviest cell is white.
pub fn encode_pgm(measure: &DiscreteMeasure) -> Vec<u8> {
    let g = measure.geometry();
    let top = measure.weights().fold(0.0f64, |a, &b| a.max(b));
    let mut out = format!("P5\n{} {}\n255\n", g.cols(), g.rows()).into_bytes();
    out.extend(measure.weights().iter().map(|&w| {
        if top > 0.0 {
            (w / top * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn save_pgm(path: &Path, measure: &DiscreteMeasure) -> Result<()> {
    write_file(path, &encode_pgm(measure))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// A named row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Consistency {
                tensor: name,
                reason: format!(
                    "dims {dims:?} hold {expected} values, payload has {}",
                    data.len()
                ),
            });
        }
        Ok(Self { name, dims, data })
    }
}

/// Header plus tensors. The header is free-form JSON owned by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

pub const CONTAINER_MAGIC: &[u8; 8] = b"OTWSCKPT";
pub const CONTAINER_VERSION: u32 = 1;

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Consistency {
                tensor: name.to_string(),
                reason: "missing from checkpoint".into(),
            })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::invalid(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let section = out.len();
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[section..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let corrupt = |e: Error| match e {
            Error::Format { offset, reason } => {
                Error::Corruption(format!("at byte {offset}: {reason}"))
            }
            other => other,
        };
        if cur.take(8, "magic").map_err(corrupt)? != CONTAINER_MAGIC {
            return Err(cur.fail(0, "not a checkpoint container"));
        }
        let version = cur.u32_le("version").map_err(corrupt)?;
        if version != CONTAINER_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CONTAINER_VERSION,
            });
        }
        let header_len = cur.u64_le("header length").map_err(corrupt)? as usize;
        let header_bytes = cur.take(header_len, "header").map_err(corrupt)?;
        let header: serde_json::Value = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Corruption(format!("header is not valid JSON: {e}")))?;
        let section = cur.pos;
        if bytes.len() < section + 4 {
            return Err(Error::Corruption(
                "file ends before the tensor section".into(),
            ));
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        if crc32fast::hash(&bytes[section..body_end]) != stored {
            return Err(Error::Corruption("tensor checksum mismatch".into()));
        }
        let mut cur = Cursor {
            bytes: &bytes[..body_end],
            pos: section,
        };
        let count = cur.u32_le("tensor count").map_err(corrupt)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = cur.u32_le("name length").map_err(corrupt)? as usize;
            let name = String::from_utf8(cur.take(name_len, "name").map_err(corrupt)?.to_vec())
                .map_err(|_| Error::Corruption("tensor name is not UTF-8".into()))?;
            let ndims = cur.u32_le("rank").map_err(corrupt)?;
            let dims = (0..ndims)
                .map(|_| cur.u64_le("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()
                .map_err(corrupt)?;
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| {
                    Error::Corruption(format!("tensor {name} has overflowing dims {dims:?}"))
                })?;
            let data = (0..len)
                .map(|_| cur.f64_le(&name))
                .collect::<Result<Vec<_>>>()
                .map_err(corrupt)?;
            tensors.push(Tensor { name, dims, data });
        }
        if cur.pos != body_end {
            return Err(Error::Corruption(format!(
                "{} unread bytes after tensors",
                body_end - cur.pos
            )));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

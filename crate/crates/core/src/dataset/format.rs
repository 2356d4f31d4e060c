//! `.civ` container: `CIV1` magic, little-endian `u32` header length, UTF-8
//! JSON header, then one float32 record per sample laid out as
//! `x (2Np+4) | y (4Np) | p (Np) | lat`.
//!
//! Inputs are stored in physical units (kg/kg, K, Pa, W/m²), outputs in W/m².

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thermo::ClimateTag;

pub const MAGIC: &[u8; 4] = b"CIV1";
pub const FORMAT_VERSION: u32 = 1;

/// Names and lengths of the blocks of the input vector.
pub const X_FIELDS: [&str; 6] = ["q", "T", "p_s", "S0", "SHF", "LHF"];
/// Output blocks, each one profile of layer energy fluxes.
pub const Y_FIELDS: [&str; 4] = ["moistening", "heating", "lw", "sw"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub n_levels: usize,
    pub n_samples: usize,
    pub climate_tag: ClimateTag,
    pub seed: u64,
    pub x_layout: Vec<FieldSpec>,
    pub y_layout: Vec<FieldSpec>,
}

impl DatasetHeader {
    pub fn new(n_levels: usize, n_samples: usize, climate_tag: ClimateTag, seed: u64) -> Self {
        Self {
            version: FORMAT_VERSION,
            n_levels,
            n_samples,
            climate_tag,
            seed,
            x_layout: x_layout(n_levels),
            y_layout: y_layout(n_levels),
        }
    }

    pub fn n_inputs(&self) -> usize {
        2 * self.n_levels + 4
    }

    pub fn n_outputs(&self) -> usize {
        4 * self.n_levels
    }

    /// Floats per sample record.
    pub fn record_len(&self) -> usize {
        self.n_inputs() + self.n_outputs() + self.n_levels + 1
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.version != FORMAT_VERSION {
            return Err(format!("unsupported version {}", self.version));
        }
        if self.n_levels < 2 || self.n_levels > 4096 {
            return Err(format!("n_levels {} out of range", self.n_levels));
        }
        if self.x_layout != x_layout(self.n_levels) {
            return Err("input layout does not match (q, T, p_s, S0, SHF, LHF)".into());
        }
        if self.y_layout != y_layout(self.n_levels) {
            return Err("output layout does not match (moistening, heating, lw, sw)".into());
        }
        Ok(())
    }
}

fn x_layout(np: usize) -> Vec<FieldSpec> {
    X_FIELDS
        .iter()
        .enumerate()
        .map(|(i, n)| FieldSpec {
            name: n.to_string(),
            len: if i < 2 { np } else { 1 },
        })
        .collect()
}

fn y_layout(np: usize) -> Vec<FieldSpec> {
    Y_FIELDS
        .iter()
        .map(|n| FieldSpec {
            name: n.to_string(),
            len: np,
        })
        .collect()
}

/// An in-memory dataset; `records` holds `n_samples * record_len` floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    records: Vec<f32>,
}

impl Dataset {
    pub fn empty(n_levels: usize, climate_tag: ClimateTag, seed: u64) -> Self {
        Self {
            header: DatasetHeader::new(n_levels, 0, climate_tag, seed),
            records: Vec::new(),
        }
    }

    pub fn from_records(header: DatasetHeader, records: Vec<f32>) -> Result<Self> {
        header.check().map_err(Error::SchemaMismatch)?;
        if records.len() != header.n_samples * header.record_len() {
            return Err(Error::SchemaMismatch(format!(
                "{} floats for {} records of length {}",
                records.len(),
                header.n_samples,
                header.record_len()
            )));
        }
        Ok(Self { header, records })
    }

    /// Appends one sample; lengths must match the layout.
    pub fn push(&mut self, x: &[f64], y: &[f64], p: &[f64], lat: f64) -> Result<()> {
        let h = &self.header;
        if x.len() != h.n_inputs() || y.len() != h.n_outputs() || p.len() != h.n_levels {
            return Err(Error::Shape(format!(
                "sample lengths x={}, y={}, p={} for Np={}",
                x.len(),
                y.len(),
                p.len(),
                h.n_levels
            )));
        }
        self.records
            .extend(x.iter().chain(y).chain(p).chain(std::iter::once(&lat)).map(|&v| v as f32));
        self.header.n_samples += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.header.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.header.n_samples == 0
    }

    pub fn n_levels(&self) -> usize {
        self.header.n_levels
    }

    pub fn climate(&self) -> ClimateTag {
        self.header.climate_tag
    }

    pub fn records(&self) -> &[f32] {
        &self.records
    }

    fn record(&self, i: usize) -> &[f32] {
        let n = self.header.record_len();
        &self.records[i * n..(i + 1) * n]
    }

    pub fn x(&self, i: usize) -> &[f32] {
        &self.record(i)[..self.header.n_inputs()]
    }

    pub fn y(&self, i: usize) -> &[f32] {
        let a = self.header.n_inputs();
        &self.record(i)[a..a + self.header.n_outputs()]
    }

    pub fn p(&self, i: usize) -> &[f32] {
        let a = self.header.n_inputs() + self.header.n_outputs();
        &self.record(i)[a..a + self.header.n_levels]
    }

    pub fn lat(&self, i: usize) -> f32 {
        let r = self.record(i);
        r[r.len() - 1]
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut records = Vec::with_capacity(indices.len() * self.header.record_len());
        for &i in indices {
            records.extend_from_slice(self.record(i));
        }
        let mut header = self.header.clone();
        header.n_samples = indices.len();
        Dataset { header, records }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.records.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.records {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::format(0, "missing CIV1 magic"));
        }
        let len_bytes: [u8; 4] = bytes
            .get(4..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::format(4, "truncated header length"))?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let header_end = 8usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::format(4, format!("header length {header_len} exceeds file size {}", bytes.len()))
            })?;
        let header: DatasetHeader = serde_json::from_slice(&bytes[8..header_end])
            .map_err(|e| Error::format(8, format!("invalid header: {e}")))?;
        header.check().map_err(|m| Error::format(8, m))?;

        let payload = &bytes[header_end..];
        let record_bytes = 4 * header.record_len();
        let expected = header
            .n_samples
            .checked_mul(record_bytes)
            .ok_or_else(|| Error::format(8, "sample count overflows"))?;
        if payload.len() != expected {
            let found = payload.len() / record_bytes;
            let offset = (header_end + found * record_bytes) as u64;
            return Err(Error::format(
                offset,
                format!(
                    "expected {} records ({expected} bytes), found {found} complete records ({} bytes)",
                    header.n_samples,
                    payload.len()
                ),
            ));
        }
        let records = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { header, records })
    }
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, data.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes)
}

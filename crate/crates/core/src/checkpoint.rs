//! Model checkpoints: a JSON header followed by one EMB1 record per tensor.
//!
//! ```text
//! "CKPT" | version: u32 = 1 | header_len: u32 | header JSON | payload
//! ```
//!
//! The header carries the model kind, its architecture description, the
//! optimizer step count, and an offset table locating each tensor's EMB1
//! record inside the payload. The record's tag is the tensor name.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{decode_record, encode_record};
use crate::error::{Error, Result};
use crate::nn::{Matrix2D, Parameters};

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Byte offset of the record from the start of the payload.
    pub offset: u64,
    /// Record length in bytes.
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub kind: String,
    pub architecture: serde_json::Value,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Matrix2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub architecture: serde_json::Value,
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params<P: Parameters<f32>>(
        kind: &str,
        architecture: serde_json::Value,
        step: u64,
        model: &P,
    ) -> Result<Self> {
        let tensors = model
            .params()
            .into_iter()
            .map(|t| {
                Ok(NamedTensor {
                    name: t.name,
                    value: Matrix2D::from_vec(t.shape.0, t.shape.1, t.data.to_vec())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Checkpoint {
            kind: kind.to_string(),
            architecture,
            step,
            tensors,
        })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix2D> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            if let Some((row, col)) = t.value.first_non_finite() {
                return Err(Error::InvalidInput(format!(
                    "tensor {} has a non-finite value at ({row}, {col})",
                    t.name
                )));
            }
            let offset = payload.len() as u64;
            let (rows, cols) = t.value.shape();
            encode_record(&mut payload, &t.name, rows, cols, t.value.as_slice());
            entries.push(TensorEntry {
                name: t.name.clone(),
                rows,
                cols,
                offset,
                length: payload.len() as u64 - offset,
            });
        }
        let header = CheckpointHeader {
            kind: self.kind.clone(),
            architecture: self.architecture.clone(),
            step: self.step,
            tensors: entries,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + header.len() + payload.len());
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Reads only the header, for introspection without loading tensors.
    pub fn decode_header(buf: &[u8]) -> Result<(CheckpointHeader, usize)> {
        if buf.len() < 12 {
            return Err(Error::Format("file too short for a checkpoint".into()));
        }
        if &buf[..4] != CKPT_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"CKPT\"",
                String::from_utf8_lossy(&buf[..4])
            )));
        }
        let version = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]);
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = u32::from_le_bytes([buf[8], buf[9], buf[10], buf[11]]) as usize;
        let end = 12 + len;
        if buf.len() < end {
            return Err(Error::Corrupt("checkpoint header is truncated".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&buf[12..end])?;
        Ok((header, end))
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let (header, start) = Self::decode_header(buf)?;
        let payload = &buf[start..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0u64;
        for e in &header.tensors {
            if e.offset != expected_offset {
                return Err(Error::Corrupt(format!(
                    "tensor {} at offset {} but previous record ends at {expected_offset}",
                    e.name, e.offset
                )));
            }
            let lo = e.offset as usize;
            let hi = lo
                .checked_add(e.length as usize)
                .filter(|&h| h <= payload.len())
                .ok_or_else(|| Error::Corrupt(format!("tensor {} runs past end of file", e.name)))?;
            let (rec, used) = decode_record(&payload[lo..hi])?;
            if used != hi - lo || rec.tag != e.name || rec.rows != e.rows || rec.dim != e.cols {
                return Err(Error::Corrupt(format!(
                    "record for {} disagrees with the offset table",
                    e.name
                )));
            }
            tensors.push(NamedTensor {
                name: rec.tag,
                value: Matrix2D::from_vec(rec.rows, rec.dim, rec.data)?,
            });
            expected_offset += e.length;
        }
        if expected_offset as usize != payload.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after the last tensor",
                payload.len() - expected_offset as usize
            )));
        }
        Ok(Checkpoint {
            kind: header.kind,
            architecture: header.architecture,
            step: header.step,
            tensors,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn read_header(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::decode_header(&bytes)?.0)
    }
}

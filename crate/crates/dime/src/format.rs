//! On-disk index format.
//!
//! The data file is a fixed 20-byte little-endian header followed by the
//! rows back to back:
//!
//! | offset | size | field                                      |
//! |-------:|-----:|--------------------------------------------|
//! | 0      | 4    | magic `DIME`                               |
//! | 4      | 2    | version (1)                                |
//! | 6      | 1    | dtype: 0 dense f32, 1 packed binary        |
//! | 7      | 1    | reserved, 0                                |
//! | 8      | 4    | dim                                        |
//! | 12     | 8    | count                                      |
//! | 20     | ...  | `count` rows of `4*dim` or `ceil(dim/8)` B |
//!
//! Row ids, the SHA-256 of the data section, and provenance live in the
//! sidecar `<stem>.manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use dime_core::{DType, EmbeddingMatrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::registry::atomic_write;

pub const MAGIC: [u8; 4] = *b"DIME";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub dtype: DType,
    pub dim: u32,
    pub count: u64,
}

impl Header {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4..6].copy_from_slice(&VERSION.to_le_bytes());
        h[6] = match self.dtype {
            DType::DenseF32 => 0,
            DType::PackedBinary => 1,
        };
        h[8..12].copy_from_slice(&self.dim.to_le_bytes());
        h[12..20].copy_from_slice(&self.count.to_le_bytes());
        h
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedFile(format!("{}: {} bytes, header needs {HEADER_LEN}", path.display(), bytes.len())));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::BadMagic(path.to_path_buf()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = match bytes[6] {
            0 => DType::DenseF32,
            1 => DType::PackedBinary,
            other => return Err(Error::CorruptIndex(format!("{}: unknown dtype {other}", path.display()))),
        };
        if bytes[7] != 0 {
            return Err(Error::CorruptIndex(format!("{}: reserved byte is {}", path.display(), bytes[7])));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        Ok(Self { dtype, dim, count })
    }

    pub fn data_len(&self) -> Option<usize> {
        usize::try_from(self.count).ok()?.checked_mul(self.dtype.row_bytes(self.dim as usize))
    }
}

/// Hex SHA-256 of the data section.
pub fn checksum(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// The sidecar written beside every data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub index_id: String,
    pub dataset_id: String,
    pub model: String,
    pub space: String,
    pub binarized: bool,
    pub dim: usize,
    pub count: usize,
    pub ids: Vec<String>,
    pub sha256: String,
    pub created_at: DateTime<Utc>,
}

/// Who built an index, recorded in its manifest.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub index_id: String,
    pub dataset_id: String,
    pub model: String,
    pub space: String,
    pub created_at: DateTime<Utc>,
}

/// `<dir>/<stem>.manifest.json` for a data file `<dir>/<stem>.<ext>`.
pub fn manifest_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("manifest.json")
}

pub fn encode(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let header = Header {
        dtype: m.dtype(),
        dim: u32::try_from(m.dim()).map_err(|_| Error::InvalidRequest("dimension exceeds u32".into()))?,
        count: m.count() as u64,
    };
    let data = m.data_bytes();
    let mut out = Vec::with_capacity(HEADER_LEN + data.len());
    out.extend_from_slice(&header.encode());
    out.extend_from_slice(&data);
    Ok(out)
}

/// Writes the data file and its manifest, each atomically, and returns the
/// data-section checksum.
pub fn write_index_file(m: &EmbeddingMatrix, path: &Path, prov: &Provenance) -> Result<IndexManifest> {
    let bytes = encode(m)?;
    let sha256 = checksum(&bytes[HEADER_LEN..]);
    let manifest = IndexManifest {
        index_id: prov.index_id.clone(),
        dataset_id: prov.dataset_id.clone(),
        model: prov.model.clone(),
        space: prov.space.clone(),
        binarized: m.dtype() == DType::PackedBinary,
        dim: m.dim(),
        count: m.count(),
        ids: m.ids().to_vec(),
        sha256,
        created_at: prov.created_at,
    };
    atomic_write(path, &bytes)?;
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    atomic_write(&manifest_path(path), &json)?;
    Ok(manifest)
}

pub fn read_manifest(data_path: &Path) -> Result<IndexManifest> {
    let path = manifest_path(data_path);
    let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::CorruptIndex(format!("{}: {e}", path.display())))
}

/// Reads and verifies a data file against its manifest.
pub fn read_index_file(path: &Path) -> Result<(EmbeddingMatrix, IndexManifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let header = Header::decode(&bytes, path)?;
    let manifest = read_manifest(path)?;
    let data = &bytes[HEADER_LEN..];
    let expected = header
        .data_len()
        .ok_or_else(|| Error::CorruptIndex(format!("{}: header size overflows", path.display())))?;
    if data.len() < expected {
        return Err(Error::TruncatedFile(format!(
            "{}: data section has {} bytes, header implies {expected}",
            path.display(),
            data.len()
        )));
    }
    if data.len() > expected {
        return Err(Error::CorruptIndex(format!("{}: {} trailing bytes", path.display(), data.len() - expected)));
    }
    let binarized = header.dtype == DType::PackedBinary;
    if manifest.dim != header.dim as usize
        || manifest.count as u64 != header.count
        || manifest.ids.len() != manifest.count
        || manifest.binarized != binarized
    {
        return Err(Error::CorruptIndex(format!("{}: manifest disagrees with header", path.display())));
    }
    if checksum(data) != manifest.sha256 {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }
    let matrix = EmbeddingMatrix::from_data_bytes(header.dtype, manifest.dim, manifest.ids.clone(), data)
        .map_err(|e| Error::CorruptIndex(format!("{}: {e}", path.display())))?;
    Ok((matrix, manifest))
}

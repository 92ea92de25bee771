//! Row-major embedding storage with an id per row.

use alloc::string::String;
use alloc::vec::Vec;

use crate::bits::{check_code, packed_len, PackedCode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DType {
    DenseF32,
    PackedBinary,
}

impl DType {
    /// Bytes occupied by one row of `dim` components.
    pub const fn row_bytes(self, dim: usize) -> usize {
        match self {
            DType::DenseF32 => dim * 4,
            DType::PackedBinary => packed_len(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rows {
    Dense(Vec<f32>),
    Packed(Vec<u8>),
}

/// A borrowed view of one stored row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Row<'a> {
    Dense(&'a [f32]),
    Packed(&'a [u8]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    rows: Rows,
}

impl EmbeddingMatrix {
    /// Checks `storage length == count * stride` and, for packed rows, that
    /// every row has clear padding bits.
    pub fn new(dim: usize, ids: Vec<String>, rows: Rows) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be at least 1"));
        }
        let count = ids.len();
        match &rows {
            Rows::Dense(values) => {
                if values.len() != count * dim {
                    return Err(Error::InvalidArgument("dense storage length != count * dim"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("dense storage holds a non-finite value"));
                }
            }
            Rows::Packed(bytes) => {
                let stride = packed_len(dim);
                if bytes.len() != count * stride {
                    return Err(Error::InvalidArgument("packed storage length != count * stride"));
                }
                for row in bytes.chunks_exact(stride) {
                    check_code(row, dim)?;
                }
            }
        }
        Ok(Self { dim, ids, rows })
    }

    pub fn empty(dtype: DType, dim: usize) -> Result<Self> {
        let rows = match dtype {
            DType::DenseF32 => Rows::Dense(Vec::new()),
            DType::PackedBinary => Rows::Packed(Vec::new()),
        };
        Self::new(dim, Vec::new(), rows)
    }

    pub fn dtype(&self) -> DType {
        match self.rows {
            Rows::Dense(_) => DType::DenseF32,
            Rows::Packed(_) => DType::PackedBinary,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &Rows {
        &self.rows
    }

    pub fn row_bytes(&self) -> usize {
        self.dtype().row_bytes(self.dim)
    }

    pub fn row(&self, i: usize) -> Option<Row<'_>> {
        if i >= self.count() {
            return None;
        }
        Some(match &self.rows {
            Rows::Dense(v) => Row::Dense(&v[i * self.dim..(i + 1) * self.dim]),
            Rows::Packed(b) => {
                let stride = packed_len(self.dim);
                Row::Packed(&b[i * stride..(i + 1) * stride])
            }
        })
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Little-endian serialization of the rows, back to back.
    pub fn data_bytes(&self) -> Vec<u8> {
        match &self.rows {
            Rows::Dense(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Rows::Packed(b) => b.clone(),
        }
    }

    /// Inverse of [`EmbeddingMatrix::data_bytes`].
    pub fn from_data_bytes(dtype: DType, dim: usize, ids: Vec<String>, data: &[u8]) -> Result<Self> {
        if data.len() != ids.len() * dtype.row_bytes(dim) {
            return Err(Error::InvalidArgument("data length != count * row stride"));
        }
        let rows = match dtype {
            DType::DenseF32 => Rows::Dense(
                data.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::PackedBinary => Rows::Packed(data.to_vec()),
        };
        Self::new(dim, ids, rows)
    }
}

/// Accumulates rows of one dtype before freezing them into a matrix.
#[derive(Debug)]
pub struct MatrixBuilder {
    dtype: DType,
    dim: usize,
    ids: Vec<String>,
    dense: Vec<f32>,
    packed: Vec<u8>,
}

impl MatrixBuilder {
    pub fn new(dtype: DType, dim: usize) -> Self {
        Self { dtype, dim, ids: Vec::new(), dense: Vec::new(), packed: Vec::new() }
    }

    /// Appends one embedding, binarizing it first for packed builders.
    pub fn push(&mut self, id: String, embedding: &[f32]) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, actual: embedding.len() });
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding holds a non-finite value"));
        }
        match self.dtype {
            DType::DenseF32 => self.dense.extend_from_slice(embedding),
            DType::PackedBinary => {
                self.packed.extend_from_slice(crate::bits::binarize_packed(embedding).bytes())
            }
        }
        self.ids.push(id);
        Ok(())
    }

    pub fn push_code(&mut self, id: String, code: &PackedCode) -> Result<()> {
        if self.dtype != DType::PackedBinary || code.dim() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, actual: code.dim() });
        }
        self.packed.extend_from_slice(code.bytes());
        self.ids.push(id);
        Ok(())
    }

    pub fn finish(self) -> Result<EmbeddingMatrix> {
        let rows = match self.dtype {
            DType::DenseF32 => Rows::Dense(self.dense),
            DType::PackedBinary => Rows::Packed(self.packed),
        };
        EmbeddingMatrix::new(self.dim, self.ids, rows)
    }
}

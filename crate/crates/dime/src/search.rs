//! Query-vector dispatch over loaded matrices, with optional row
//! partitioning across the rayon pool.

use dime_core::search::{knn_binary_partial, knn_dense_partial, merge_hits};
use dime_core::{binarize_packed, knn_binary, knn_dense, DType, EmbeddingMatrix, Neighbor, PackedCode};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::StoredRow;

/// Matrices with at least this many rows are scanned in parallel chunks.
pub const PARALLEL_MIN_ROWS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub enum QueryVector {
    Dense(Vec<f32>),
    Packed(PackedCode),
}

impl QueryVector {
    /// Adapts a model embedding to the matrix: packed matrices get the
    /// sign-binarized code.
    pub fn for_matrix(embedding: Vec<f32>, dtype: DType) -> Self {
        match dtype {
            DType::DenseF32 => QueryVector::Dense(embedding),
            DType::PackedBinary => QueryVector::Packed(binarize_packed(&embedding)),
        }
    }

    pub fn from_row(row: StoredRow) -> Self {
        match row {
            StoredRow::Dense(v) => QueryVector::Dense(v),
            StoredRow::Packed(c) => QueryVector::Packed(c),
        }
    }
}

/// Exact top-n. Large matrices are split into `chunks` row ranges scanned
/// concurrently; the merged result is identical to a single scan.
pub fn knn(m: &EmbeddingMatrix, q: &QueryVector, n: usize) -> Result<Vec<Neighbor>> {
    let chunks = if m.count() >= PARALLEL_MIN_ROWS { rayon::current_num_threads() } else { 1 };
    knn_chunked(m, q, n, chunks)
}

pub fn knn_chunked(m: &EmbeddingMatrix, q: &QueryVector, n: usize, chunks: usize) -> Result<Vec<Neighbor>> {
    match (m.dtype(), q) {
        (DType::DenseF32, QueryVector::Dense(_)) | (DType::PackedBinary, QueryVector::Packed(_)) => {}
        _ => return Err(Error::Incompatible("query and index disagree on binarization".into())),
    }
    if chunks <= 1 || m.count() < 2 {
        return Ok(match q {
            QueryVector::Dense(v) => knn_dense(m, v, n)?,
            QueryVector::Packed(c) => knn_binary(m, c, n)?,
        });
    }
    let step = m.count().div_ceil(chunks);
    let ranges: Vec<_> = (0..m.count()).step_by(step).map(|s| s..(s + step).min(m.count())).collect();
    let parts = ranges
        .into_par_iter()
        .map(|r| match q {
            QueryVector::Dense(v) => knn_dense_partial(m, v, n, r),
            QueryVector::Packed(c) => knn_binary_partial(m, c, n, r),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(merge_hits(m, parts, n)?)
}

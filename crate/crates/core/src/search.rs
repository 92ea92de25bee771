//! Exact top-n search over an [`EmbeddingMatrix`].
//!
//! Dense rows are ranked by squared Euclidean distance accumulated in
//! single precision, packed rows by Hamming distance. Ties are broken by
//! ascending item id (byte order), then by row position. Selection keeps a
//! bounded max-heap of size `n` over a full scan.
//!
//! Both metrics reduce to a `u32` ranking key: the Hamming count, or the
//! IEEE-754 bit pattern of the non-negative squared distance, whose integer
//! order matches its float order.

use alloc::collections::BinaryHeap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::bits::{check_code, hamming, packed_len, PackedCode};
use crate::error::{Error, Result};
use crate::matrix::{DType, EmbeddingMatrix, Rows};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Neighbor {
    pub item_id: String,
    /// Euclidean distance for dense indexes, differing bits for packed ones.
    pub distance: f64,
}

/// A scored row from a partial scan, before ids are materialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub row: usize,
    pub key: u32,
}

impl Hit {
    pub fn distance(self, dtype: DType) -> f64 {
        match dtype {
            DType::DenseF32 => libm::sqrt(f64::from(f32::from_bits(self.key))),
            DType::PackedBinary => f64::from(self.key),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Candidate<'a> {
    key: u32,
    id: &'a str,
    row: usize,
}

/// Squared Euclidean distance, summed left to right in `f32`.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

struct TopN<'a> {
    n: usize,
    heap: BinaryHeap<Candidate<'a>>,
}

impl<'a> TopN<'a> {
    fn new(n: usize) -> Self {
        Self { n, heap: BinaryHeap::with_capacity(n.saturating_add(1).min(4096)) }
    }

    #[inline]
    fn offer(&mut self, cand: Candidate<'a>) {
        if self.heap.len() < self.n {
            self.heap.push(cand);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if cand < *worst {
                *worst = cand;
            }
        }
    }

    fn into_sorted(self) -> Vec<Candidate<'a>> {
        self.heap.into_sorted_vec()
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1"));
    }
    Ok(())
}

fn check_range(m: &EmbeddingMatrix, rows: &Range<usize>) -> Result<()> {
    if rows.start > rows.end || rows.end > m.count() {
        return Err(Error::InvalidArgument("row range out of bounds"));
    }
    Ok(())
}

fn check_dense_query(m: &EmbeddingMatrix, q: &[f32]) -> Result<()> {
    if m.dtype() != DType::DenseF32 {
        return Err(Error::InvalidArgument("dense search over a packed matrix"));
    }
    if q.len() != m.dim() {
        return Err(Error::DimMismatch { expected: m.dim(), actual: q.len() });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("query holds a non-finite value"));
    }
    Ok(())
}

fn check_binary_query(m: &EmbeddingMatrix, q: &PackedCode) -> Result<()> {
    if m.dtype() != DType::PackedBinary {
        return Err(Error::InvalidArgument("binary search over a dense matrix"));
    }
    if q.dim() != m.dim() {
        return Err(Error::DimMismatch { expected: m.dim(), actual: q.dim() });
    }
    check_code(q.bytes(), q.dim())
}

fn scan_dense<'a>(m: &'a EmbeddingMatrix, q: &[f32], n: usize, rows: Range<usize>) -> Vec<Candidate<'a>> {
    let Rows::Dense(values) = m.rows() else { unreachable!("checked dtype") };
    let dim = m.dim();
    let ids = m.ids();
    let mut top = TopN::new(n);
    for row in rows {
        let r = &values[row * dim..(row + 1) * dim];
        let key = squared_l2(q, r).to_bits();
        top.offer(Candidate { key, id: &ids[row], row });
    }
    top.into_sorted()
}

fn scan_binary<'a>(m: &'a EmbeddingMatrix, q: &PackedCode, n: usize, rows: Range<usize>) -> Vec<Candidate<'a>> {
    let Rows::Packed(bytes) = m.rows() else { unreachable!("checked dtype") };
    let stride = packed_len(m.dim());
    let ids = m.ids();
    let qb = q.bytes();
    let mut top = TopN::new(n);
    for row in rows {
        let key = hamming(qb, &bytes[row * stride..(row + 1) * stride]);
        top.offer(Candidate { key, id: &ids[row], row });
    }
    top.into_sorted()
}

fn to_neighbors(m: &EmbeddingMatrix, cands: Vec<Candidate<'_>>) -> Vec<Neighbor> {
    let dtype = m.dtype();
    cands
        .into_iter()
        .map(|c| Neighbor {
            item_id: String::from(c.id),
            distance: Hit { row: c.row, key: c.key }.distance(dtype),
        })
        .collect()
}

/// The `min(n, count)` dense rows closest to `q`, nearest first.
pub fn knn_dense(m: &EmbeddingMatrix, q: &[f32], n: usize) -> Result<Vec<Neighbor>> {
    check_n(n)?;
    check_dense_query(m, q)?;
    Ok(to_neighbors(m, scan_dense(m, q, n, 0..m.count())))
}

/// The `min(n, count)` packed rows closest to `q` in Hamming distance.
pub fn knn_binary(m: &EmbeddingMatrix, q: &PackedCode, n: usize) -> Result<Vec<Neighbor>> {
    check_n(n)?;
    check_binary_query(m, q)?;
    Ok(to_neighbors(m, scan_binary(m, q, n, 0..m.count())))
}

/// Top-n over a sub-range of rows; combine partitions with [`merge_hits`].
pub fn knn_dense_partial(m: &EmbeddingMatrix, q: &[f32], n: usize, rows: Range<usize>) -> Result<Vec<Hit>> {
    check_n(n)?;
    check_dense_query(m, q)?;
    check_range(m, &rows)?;
    Ok(scan_dense(m, q, n, rows).into_iter().map(|c| Hit { row: c.row, key: c.key }).collect())
}

pub fn knn_binary_partial(m: &EmbeddingMatrix, q: &PackedCode, n: usize, rows: Range<usize>) -> Result<Vec<Hit>> {
    check_n(n)?;
    check_binary_query(m, q)?;
    check_range(m, &rows)?;
    Ok(scan_binary(m, q, n, rows).into_iter().map(|c| Hit { row: c.row, key: c.key }).collect())
}

/// Merges per-partition results into the global top-n. The output is
/// identical to a single full scan as long as the partitions cover every
/// row exactly once.
pub fn merge_hits<I>(m: &EmbeddingMatrix, parts: I, n: usize) -> Result<Vec<Neighbor>>
where
    I: IntoIterator<Item = Vec<Hit>>,
{
    check_n(n)?;
    let ids = m.ids();
    let mut top = TopN::new(n);
    for hit in parts.into_iter().flatten() {
        let id = ids.get(hit.row).ok_or(Error::InvalidArgument("hit row out of bounds"))?;
        top.offer(Candidate { key: hit.key, id, row: hit.row });
    }
    Ok(to_neighbors(m, top.into_sorted()))
}

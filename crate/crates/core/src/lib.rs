//! Pure retrieval kernels shared by the indexing and query paths.
//!
//! Everything here is `no_std` and only needs an allocator: feature-hashed
//! text embeddings, sign binarization with LSB-first bit packing, the
//! embedding matrix container, exact top-n search (squared Euclidean for
//! dense rows, Hamming for packed rows), distance statistics and
//! histograms, and the ranking metrics used for model comparison.

#![no_std]

extern crate alloc;

pub mod bits;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod search;
pub mod stats;
pub mod text;

pub use bits::{binarize, binarize_packed, hamming, pack_bits, packed_len, unpack_bits, PackedCode};
pub use error::{Error, Result};
pub use eval::{average_precision, precision_at_k, recall_at_k, EvalReport, QueryMetrics, Qrels};
pub use matrix::{DType, EmbeddingMatrix, MatrixBuilder, Row, Rows};
pub use search::{knn_binary, knn_binary_partial, knn_dense, knn_dense_partial, merge_hits, squared_l2, Hit, Neighbor};
pub use stats::{distance_stats, histogram, DistanceStats, Histogram};
pub use text::{fnv1a64, text_hash_embed, tokenize};

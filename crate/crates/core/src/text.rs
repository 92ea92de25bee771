//! Feature-hashed bag-of-words embedding.
//!
//! Text is lowercased and split on every run of non-alphanumeric
//! characters. Each token increments slot `fnv1a64(token) % dim`, and the
//! count vector is L2-normalized. Text without tokens maps to the zero
//! vector.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Lowercased alphanumeric tokens in order of appearance.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn text_hash_embed(text: &str, dim: usize) -> Result<Vec<f32>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("text hash dimension must be at least 1"));
    }
    let mut counts = vec![0u64; dim];
    for token in tokenize(text) {
        // dim fits in u64 on every supported target
        let slot = (fnv1a64(token.as_bytes()) % dim as u64) as usize;
        counts[slot] += 1;
    }
    let norm = libm::sqrt(counts.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>());
    if norm == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    Ok(counts.iter().map(|&c| (c as f64 / norm) as f32).collect())
}

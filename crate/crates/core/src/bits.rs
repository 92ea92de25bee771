//! Sign binarization and LSB-first bit packing.
//!
//! Bit `i` lives in octet `i >> 3` under mask `1 << (i & 7)`. Bits past the
//! logical dimension in the last octet are always zero, which lets Hamming
//! distance run over whole octets without masking.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Octets needed to hold `dim` bits.
#[inline]
pub const fn packed_len(dim: usize) -> usize {
    dim.div_ceil(8)
}

/// `true` iff the component is strictly positive. Zero maps to `false`.
pub fn binarize(values: &[f32]) -> Vec<bool> {
    values.iter().map(|&v| v > 0.0).collect()
}

/// A packed bit sequence with its logical length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedCode {
    bytes: Vec<u8>,
    dim: usize,
}

impl PackedCode {
    /// Wraps raw octets, checking the octet count and padding bits.
    pub fn from_bytes(bytes: Vec<u8>, dim: usize) -> Result<Self> {
        check_code(&bytes, dim)?;
        Ok(Self { bytes, dim })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Validates octet count and that padding bits are clear.
pub(crate) fn check_code(bytes: &[u8], dim: usize) -> Result<()> {
    if bytes.len() != packed_len(dim) {
        return Err(Error::MalformedCode);
    }
    let used = dim % 8;
    if used != 0 {
        let last = bytes[bytes.len() - 1];
        if last >> used != 0 {
            return Err(Error::MalformedCode);
        }
    }
    Ok(())
}

pub fn pack_bits(bits: &[bool]) -> PackedCode {
    let mut bytes = vec![0u8; packed_len(bits.len())];
    for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
        bytes[i >> 3] |= 1 << (i & 7);
    }
    PackedCode { bytes, dim: bits.len() }
}

pub fn unpack_bits(code: &PackedCode) -> Result<Vec<bool>> {
    check_code(&code.bytes, code.dim)?;
    Ok((0..code.dim)
        .map(|i| code.bytes[i >> 3] & (1 << (i & 7)) != 0)
        .collect())
}

/// `pack_bits(&binarize(values))` without the intermediate bit vector.
pub fn binarize_packed(values: &[f32]) -> PackedCode {
    let mut bytes = vec![0u8; packed_len(values.len())];
    for (i, &v) in values.iter().enumerate() {
        if v > 0.0 {
            bytes[i >> 3] |= 1 << (i & 7);
        }
    }
    PackedCode { bytes, dim: values.len() }
}

/// Number of differing bits between two equal-length octet slices.
#[inline]
pub fn hamming(a: &[u8], b: &[u8]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    let mut total = 0u32;
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        let x = u64::from_le_bytes(x.try_into().unwrap());
        let y = u64::from_le_bytes(y.try_into().unwrap());
        total += (x ^ y).count_ones();
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        total += (x ^ y).count_ones();
    }
    total
}

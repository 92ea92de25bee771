//! Summary statistics and fixed-width histograms over result distances.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistanceStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Histogram {
    /// `counts.len() + 1` non-decreasing edges spanning `[min, max]`.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn check_values(ds: &[f64]) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyInput);
    }
    if ds.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument("distance is not finite"));
    }
    Ok(())
}

fn min_max(ds: &[f64]) -> (f64, f64) {
    ds.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)))
}

pub fn distance_stats(ds: &[f64]) -> Result<DistanceStats> {
    check_values(ds)?;
    let (min, max) = min_max(ds);
    let mean = ds.iter().sum::<f64>() / ds.len() as f64;
    Ok(DistanceStats { min, max, mean })
}

/// Bins `ds` into `bins` equal-width buckets over `[min, max]`. The maximum
/// lands in the last bin. When every value is equal, all of them land in
/// bin 0 and every edge equals that value.
pub fn histogram(ds: &[f64], bins: usize) -> Result<Histogram> {
    check_values(ds)?;
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin"));
    }
    let (min, max) = min_max(ds);
    let mut counts = vec![0u64; bins];
    if max == min {
        counts[0] = ds.len() as u64;
        return Ok(Histogram { bin_edges: vec![min; bins + 1], counts });
    }
    let width = (max - min) / bins as f64;
    for &d in ds {
        let idx = libm::floor((d - min) / width) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    let mut bin_edges: Vec<f64> = (0..bins).map(|i| min + width * i as f64).collect();
    bin_edges.push(max);
    Ok(Histogram { bin_edges, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_basic() {
        let s = distance_stats(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s, DistanceStats { min: 0.0, max: 3.0, mean: 1.5 });
        let s = distance_stats(&[7.0]).unwrap();
        assert_eq!(s, DistanceStats { min: 7.0, max: 7.0, mean: 7.0 });
        assert_eq!(distance_stats(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn histogram_even_split() {
        let h = histogram(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(h.bin_edges, [0.0, 1.5, 3.0]);
        assert_eq!(h.counts, [2, 2]);
    }

    #[test]
    fn histogram_degenerate_range() {
        let h = histogram(&[5.0, 5.0, 5.0], 3).unwrap();
        assert_eq!(h.counts, [3, 0, 0]);
        assert_eq!(h.bin_edges, [5.0; 4]);
    }

    #[test]
    fn histogram_max_clamps_to_last_bin() {
        let h = histogram(&[0.0, 2.9, 3.0], 3).unwrap();
        assert_eq!(h.counts, [1, 0, 2]);
    }

    #[test]
    fn histogram_errors() {
        assert_eq!(histogram(&[], 3), Err(Error::EmptyInput));
        assert!(histogram(&[1.0], 0).is_err());
        assert!(histogram(&[f64::NAN], 1).is_err());
    }
}

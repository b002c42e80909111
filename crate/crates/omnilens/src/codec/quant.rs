//! Uniform coordinate quantization into shared bins.

use crate::error::{Error, Result};

/// Maps a pixel coordinate in `[0, extent]` to a bin in `[0, bins)` by
/// `floor(v / extent * bins)`, clamped so `v == extent` lands in the last bin.
pub fn quantize_coord(v: f64, extent: f64, bins: usize) -> Result<usize> {
    if extent <= 0.0 {
        return Err(Error::Range(format!("extent {extent} must be positive")));
    }
    if bins == 0 {
        return Err(Error::Range("bins must be positive".into()));
    }
    if !(0.0..=extent).contains(&v) || !v.is_finite() {
        return Err(Error::Range(format!("coordinate {v} outside [0, {extent}]")));
    }
    let b = (v / extent * bins as f64).floor() as usize;
    Ok(b.min(bins - 1))
}

/// Inverse of [`quantize_coord`]: returns the bin center
/// `(bin + 0.5) / bins * extent`.
pub fn dequantize_coord(bin: usize, extent: f64, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::Range("bins must be positive".into()));
    }
    if bin >= bins {
        return Err(Error::Range(format!("bin {bin} out of range 0..{bins}")));
    }
    if extent <= 0.0 {
        return Err(Error::Range(format!("extent {extent} must be positive")));
    }
    Ok((bin as f64 + 0.5) / bins as f64 * extent)
}

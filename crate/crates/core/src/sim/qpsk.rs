//! Gray-mapped, unit-energy QPSK.
//!
//! Bit pair `(b0, b1)` maps to `((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`, so
//! `00 -> (1 + j)/sqrt(2)` and neighbouring points differ in one bit.

use num_complex::Complex64;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

pub fn modulate(bits: &[u8]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("QPSK needs an even number of bits, got {}", bits.len())));
    }
    let level = |b: u8| if b == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    Ok(bits.chunks_exact(2).map(|p| Complex64::new(level(p[0]), level(p[1]))).collect())
}

/// Per-component sign decisions.
pub fn demodulate(symbols: &[Complex64]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|s| [u8::from(s.re < 0.0), u8::from(s.im < 0.0)])
        .collect()
}

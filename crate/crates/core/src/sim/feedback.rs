//! Quantised gain feedback over a binary symmetric channel.
//!
//! The real and imaginary parts of every gain are quantised by a mid-rise
//! uniform quantiser on `[-R, R]`, `R` being the largest gain modulus of the
//! group (sent as exact side information). Level indices are sent as natural
//! binary words and every bit is flipped independently with probability `pe`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CVector;
use crate::network::GainState;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Feedback {
    #[default]
    Perfect,
    Bsc { pe: f64, bits_real: u32, bits_imag: u32 },
}

impl Feedback {
    pub fn validate(&self) -> Result<()> {
        if let Feedback::Bsc { pe, bits_real, bits_imag } = *self {
            if !(0.0..=0.5).contains(&pe) {
                return Err(Error::InvalidArgument(format!("crossover probability {pe} outside [0, 0.5]")));
            }
            for b in [bits_real, bits_imag] {
                if !(1..=32).contains(&b) {
                    return Err(Error::InvalidArgument(format!("quantiser word length {b} outside 1..=32")));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            Feedback::Perfect => "perfect".into(),
            Feedback::Bsc { pe, bits_real, bits_imag } => format!("bsc-pe{pe}-{bits_real}+{bits_imag}"),
        }
    }
}

/// Uniform mid-rise quantiser with `2^bits` cells on `[-range, range]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    range: f64,
    bits: u32,
}

impl Quantizer {
    pub fn new(range: f64, bits: u32) -> Self {
        Self { range, bits }
    }

    fn levels(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn step(&self) -> f64 {
        2.0 * self.range / self.levels() as f64
    }

    pub fn index(&self, x: f64) -> u64 {
        if self.range <= 0.0 {
            return 0;
        }
        let k = ((x + self.range) / self.step()).floor();
        k.clamp(0.0, (self.levels() - 1) as f64) as u64
    }

    pub fn level(&self, index: u64) -> f64 {
        if self.range <= 0.0 {
            return 0.0;
        }
        -self.range + (index as f64 + 0.5) * self.step()
    }
}

fn flip_bits<R: Rng + ?Sized>(word: u64, bits: u32, pe: f64, rng: &mut R) -> u64 {
    if pe <= 0.0 {
        return word;
    }
    (0..bits).fold(word, |w, b| if rng.random::<f64>() < pe { w ^ (1 << b) } else { w })
}

/// Quantises every gain and passes its code words through the BSC.
pub fn quantize_feedback<R: Rng + ?Sized>(
    gains: &GainState,
    bits_real: u32,
    bits_imag: u32,
    pe: f64,
    rng: &mut R,
) -> Result<GainState> {
    Feedback::Bsc { pe, bits_real, bits_imag }.validate()?;
    let groups = gains
        .gains
        .iter()
        .map(|a| {
            let range = a.iter().map(|x| x.norm()).fold(0.0, f64::max);
            let (qr, qi) = (Quantizer::new(range, bits_real), Quantizer::new(range, bits_imag));
            CVector::from_iterator(
                a.len(),
                a.iter().map(|x| {
                    let re = flip_bits(qr.index(x.re), bits_real, pe, rng);
                    let im = flip_bits(qi.index(x.im), bits_imag, pe, rng);
                    Complex64::new(qr.level(re), qi.level(im))
                }),
            )
        })
        .collect();
    Ok(GainState::new(groups))
}

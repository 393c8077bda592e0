//! Binomial confidence intervals and the analytic QPSK reference curve.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

/// Two-sided 95% Wilson score interval for `errors` out of `trials`.
pub fn wilson_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::standard().inverse_cdf(0.975);
    let n = trials as f64;
    let p = errors as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Gaussian tail probability `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Bit error probability of Gray QPSK over AWGN at the given `Eb/N0` (linear).
pub fn qpsk_awgn_ber(ebn0: f64) -> f64 {
    q_function((2.0 * ebn0).sqrt())
}

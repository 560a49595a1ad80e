//! Unit conversions.
//!
//! Internally every frequency is an angular frequency in rad/ms and every
//! time is in ms. Configuration files quote ordinary frequencies in kHz and
//! decoherence rates in 1/s.

use std::f64::consts::TAU;

/// Ordinary frequency in kHz to angular frequency in rad/ms.
pub fn khz_to_angular(f_khz: f64) -> f64 {
    TAU * f_khz
}

/// Angular frequency in rad/ms to ordinary frequency in kHz.
pub fn angular_to_khz(omega: f64) -> f64 {
    omega / TAU
}

/// Rate in 1/s to rate in 1/ms.
pub fn per_s_to_per_ms(rate_per_s: f64) -> f64 {
    rate_per_s * 1e-3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let f = 1.32;
        assert!((angular_to_khz(khz_to_angular(f)) - f).abs() < 1e-15);
        assert!((per_s_to_per_ms(120.0) - 0.12).abs() < 1e-15);
    }
}

//! Physical constants and the handful of unit conversions used throughout.
//!
//! Frequencies, couplings and rates are carried as ordinary frequencies
//! (Hz, i.e. the "/2π" values quoted in device tables). Conversion to angular
//! units happens only at the boundaries that need it: Bose-Einstein
//! exponents, lifetimes, and the input-output SNR formula.

use std::f64::consts::PI;

/// Planck constant (J s), exact SI value.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = PLANCK / (2.0 * PI);
/// Boltzmann constant (J/K), exact SI value.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub const GHZ: f64 = 1e9;
pub const MHZ: f64 = 1e6;
pub const KHZ: f64 = 1e3;
pub const US: f64 = 1e-6;

/// Ordinary frequency (Hz) to angular frequency (rad/s).
#[inline]
pub fn angular(f_hz: f64) -> f64 {
    2.0 * PI * f_hz
}

/// A rate in ordinary-frequency units (Hz, "/2π") to the lifetime it implies (s).
#[inline]
pub fn lifetime_from_rate(rate_hz: f64) -> f64 {
    1.0 / angular(rate_hz)
}

/// A lifetime (s) to the corresponding rate in ordinary-frequency units (Hz).
#[inline]
pub fn rate_from_lifetime(t: f64) -> f64 {
    1.0 / (2.0 * PI * t)
}

/// The dimensionless Boltzmann exponent hf/k_BT.
#[inline]
pub fn boltzmann_exponent(f_hz: f64, temperature_k: f64) -> f64 {
    PLANCK * f_hz / (BOLTZMANN * temperature_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifetime_rate_roundtrip() {
        let t = 250e-6;
        let r = rate_from_lifetime(t);
        assert!((lifetime_from_rate(r) - t).abs() < 1e-18);
        // 1/T1 = 4000 s^-1 is 4000/2π Hz in /2π units.
        assert!((r - 4000.0 / (2.0 * PI)).abs() < 1e-9);
    }

    #[test]
    fn twenty_gigahertz_is_about_one_kelvin() {
        let x = boltzmann_exponent(20.0 * GHZ, 1.0);
        assert!((x - 0.96).abs() < 0.01, "{x}");
    }
}

//! Closed-form rates downstream of (χ, κ).
//!
//! Every formula takes and returns ordinary frequencies (Hz, the "/2π"
//! values). Conversions to 1/s or to lifetimes happen only in the functions
//! that say so.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cavity::DispersiveSystem;
use crate::units::{angular, boltzmann_exponent, lifetime_from_rate};

/// Exponent beyond which the occupation is reported as exactly 0.
const UNDERFLOW_EXPONENT: f64 = 700.0;
/// Allowed excess of T2E over 2T1 before the input is called unphysical.
pub const T2E_TOLERANCE: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RatesError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("T2E = {t2e:.4e} s exceeds 2·T1 = {two_t1:.4e} s by more than the tolerance")]
    Unphysical { t2e: f64, two_t1: f64 },
    #[error("spin-locking noise estimate is negative: 1/T_rho = {inv_t_rho:.4e} < 1/(2T1) = {inv_2t1:.4e} (1/s)")]
    NegativeNoise { inv_t_rho: f64, inv_2t1: f64 },
}

/// Rate-formula inputs: the dispersive system, a photon number and a temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateInputs {
    pub system: DispersiveSystem,
    pub nbar: f64,
    /// Kelvin.
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupation {
    pub value: f64,
    /// hf/k_BT exceeded the representable range and the value was set to 0.
    pub underflow: bool,
}

/// 1/(e^{hf/k_BT} − 1) with its underflow flag.
pub fn bose_einstein_flagged(f: f64, temperature: f64) -> Result<Occupation, RatesError> {
    if !(f > 0.0 && temperature > 0.0) {
        return Err(RatesError::InvalidInput(format!(
            "bose_einstein needs f > 0 and T > 0 (f = {f}, T = {temperature})"
        )));
    }
    let x = boltzmann_exponent(f, temperature);
    if x > UNDERFLOW_EXPONENT {
        return Ok(Occupation {
            value: 0.0,
            underflow: true,
        });
    }
    Ok(Occupation {
        value: 1.0 / x.exp_m1(),
        underflow: false,
    })
}

/// Thermal occupation 1/(e^{hf/k_BT} − 1).
pub fn bose_einstein(f: f64, temperature: f64) -> Result<f64, RatesError> {
    bose_einstein_flagged(f, temperature).map(|o| o.value)
}

/// ac Stark shift 2χn̄.
pub fn stark_shift(chi: f64, nbar: f64) -> f64 {
    2.0 * chi * nbar
}

/// Γ_m = 2n̄κχ²/(χ² + (κ/2)²).
pub fn meas_dephasing_rate(chi: f64, kappa: f64, nbar: f64) -> f64 {
    2.0 * nbar * kappa * chi * chi / (chi * chi + 0.25 * kappa * kappa)
}

/// Γ_φ = 4n̄κχ²/(4χ² + κ²).
pub fn thermal_dephasing_rate(chi: f64, kappa: f64, nbar: f64) -> f64 {
    4.0 * nbar * kappa * chi * chi / (4.0 * chi * chi + kappa * kappa)
}

/// Photon number implied by a thermal dephasing rate (inverse of
/// [`thermal_dephasing_rate`]).
pub fn nbar_from_thermal_dephasing(rate: f64, chi: f64, kappa: f64) -> f64 {
    rate * (4.0 * chi * chi + kappa * kappa) / (4.0 * kappa * chi * chi)
}

/// Frequency-noise spectral density seen by a spin-locked qubit,
/// (8n̄χ²κ²/(κ² + 4χ²))·κ/(Ω² + κ²), in Hz for Hz inputs. Multiply by 2π
/// for the value in 1/s.
pub fn spin_locking_psd(chi: f64, kappa: f64, nbar: f64, omega: f64) -> f64 {
    let a = 8.0 * nbar * chi * chi * kappa * kappa / (kappa * kappa + 4.0 * chi * chi);
    a * kappa / (omega * omega + kappa * kappa)
}

/// Residual photon number from a spin-locking decay time `t_rho` and T1
/// (seconds) at Rabi frequency `omega` (Hz). The measured noise
/// S_z = 2(1/T_ρ − 1/2T_1) is in 1/s and is compared with 2π times
/// [`spin_locking_psd`].
pub fn nbar_from_spin_locking(
    t_rho: f64,
    t1: f64,
    chi: f64,
    kappa: f64,
    omega: f64,
) -> Result<f64, RatesError> {
    if !(t_rho > 0.0 && t1 > 0.0) {
        return Err(RatesError::InvalidInput("t_rho and t1 must be positive".into()));
    }
    let (inv_t_rho, inv_2t1) = (1.0 / t_rho, 0.5 / t1);
    if inv_t_rho < inv_2t1 {
        return Err(RatesError::NegativeNoise { inv_t_rho, inv_2t1 });
    }
    let s_z = 2.0 * (inv_t_rho - inv_2t1);
    let per_photon = angular(spin_locking_psd(chi, kappa, 1.0, omega));
    if per_photon == 0.0 {
        return Err(RatesError::InvalidInput("chi = 0: photons leave no signature".into()));
    }
    Ok(s_z / per_photon)
}

/// Spin-locking decay time T_ρ (s) that a photon number `nbar` would produce:
/// the forward model of [`nbar_from_spin_locking`].
pub fn spin_locking_t_rho(nbar: f64, t1: f64, chi: f64, kappa: f64, omega: f64) -> f64 {
    let s_z = angular(spin_locking_psd(chi, kappa, nbar, omega));
    1.0 / (0.5 * s_z + 0.5 / t1)
}

/// Purcell scaling estimate κ(g/ω_r)²(ω/ω_r)⁵ (Hz), with the proportionality
/// constant taken as 1.
pub fn purcell_rate(kappa: f64, g: f64, omega_r: f64, omega: f64) -> f64 {
    kappa * (g / omega_r).powi(2) * (omega / omega_r).powi(5)
}

/// T1 (s) implied by [`purcell_rate`].
pub fn purcell_t1(kappa: f64, g: f64, omega_r: f64, omega: f64) -> f64 {
    lifetime_from_rate(purcell_rate(kappa, g, omega_r, omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "seconds", rename_all = "snake_case")]
pub enum PureDephasing {
    Finite(f64),
    /// T2E at (or within tolerance above) 2T1: lifetime limited.
    Infinite,
}

impl PureDephasing {
    pub fn seconds(self) -> f64 {
        match self {
            PureDephasing::Finite(t) => t,
            PureDephasing::Infinite => f64::INFINITY,
        }
    }
}

/// T_φ from 1/T_φ = 1/T2E − 1/(2T1).
pub fn pure_dephasing_time(t1: f64, t2e: f64) -> Result<PureDephasing, RatesError> {
    if !(t1 > 0.0 && t2e > 0.0) {
        return Err(RatesError::InvalidInput("t1 and t2e must be positive".into()));
    }
    let two_t1 = 2.0 * t1;
    if t2e > two_t1 * (1.0 + T2E_TOLERANCE) {
        return Err(RatesError::Unphysical { t2e, two_t1 });
    }
    if t2e >= two_t1 {
        return Ok(PureDephasing::Infinite);
    }
    Ok(PureDephasing::Finite(1.0 / (1.0 / t2e - 1.0 / two_t1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{GHZ, MHZ, US};
    use std::f64::consts::PI;

    #[test]
    fn bose_einstein_reference_points() {
        let n = bose_einstein(7.0 * GHZ, 0.05).unwrap();
        assert!((n / 1.2e-3 - 1.0).abs() < 0.05, "{n}");
        let n = bose_einstein(21.0 * GHZ, 0.05).unwrap();
        assert!(n > 1e-9 && n < 3e-9, "{n}");
        // hf = k_BT.
        let t = crate::units::PLANCK * 5.0 * GHZ / crate::units::BOLTZMANN;
        let n = bose_einstein(5.0 * GHZ, t).unwrap();
        assert!((n - 1.0 / (std::f64::consts::E - 1.0)).abs() < 1e-12);
        let o = bose_einstein_flagged(1e15, 0.01).unwrap();
        assert!(o.underflow && o.value == 0.0);
        assert!(bose_einstein(0.0, 1.0).is_err());
    }

    #[test]
    fn dephasing_reductions() {
        let kappa = 11.28 * MHZ;
        assert_eq!(meas_dephasing_rate(0.94 * MHZ, kappa, 0.0), 0.0);
        assert!((meas_dephasing_rate(kappa / 2.0, kappa, 3.0) - 3.0 * kappa).abs() < 1e-6);
        assert!((thermal_dephasing_rate(kappa / 2.0, kappa, 3.0) - 1.5 * kappa).abs() < 1e-6);
        let g = meas_dephasing_rate(0.94 * MHZ, kappa, 1.0);
        assert!((g / MHZ - 0.61).abs() < 0.01, "{g}");
    }

    #[test]
    fn stark_shift_device_c() {
        assert!((stark_shift(0.94 * MHZ, 14.0) / MHZ - 26.32).abs() < 0.01);
        assert_eq!(stark_shift(1.0, 0.0), 0.0);
    }

    #[test]
    fn psd_lorentzian_half_power() {
        let (chi, kappa) = (0.94 * MHZ, 11.28 * MHZ);
        let r = spin_locking_psd(chi, kappa, 0.1, 0.0) / spin_locking_psd(chi, kappa, 0.1, kappa);
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spin_locking_round_trip() {
        let (chi, kappa, omega, t1) = (0.94 * MHZ, 11.28 * MHZ, 2.0 * MHZ, 270.0 * US);
        for nbar in [0.0, 5e-4, 0.01] {
            let t_rho = spin_locking_t_rho(nbar, t1, chi, kappa, omega);
            let back = nbar_from_spin_locking(t_rho, t1, chi, kappa, omega).unwrap();
            assert!((back - nbar).abs() <= 1e-10 + 1e-9 * nbar);
        }
        assert_eq!(nbar_from_spin_locking(2.0 * t1, t1, chi, kappa, omega).unwrap(), 0.0);
        assert!(nbar_from_spin_locking(3.0 * t1, t1, chi, kappa, omega).is_err());
    }

    #[test]
    fn spin_locking_unit_conversion() {
        // With χ = κ/2: S_z = n̄κ²·κ/(Ω² + κ²) in Hz; at Ω = 0 that is n̄κ,
        // i.e. 2πn̄κ in 1/s.
        let kappa = 10.0 * MHZ;
        let nbar = 0.01;
        let t1 = f64::INFINITY;
        let t_rho = spin_locking_t_rho(nbar, t1, kappa / 2.0, kappa, 0.0);
        assert!((2.0 / t_rho - 2.0 * PI * nbar * kappa).abs() < 1e-6 * (2.0 / t_rho));
    }

    #[test]
    fn purcell_scaling() {
        let (kappa, g, wr) = (11.28 * MHZ, 507.0 * MHZ, 20.92 * GHZ);
        assert_eq!(purcell_rate(kappa, g, wr, wr), kappa * (g / wr).powi(2));
        let r = purcell_rate(kappa, g, wr, 5.0 * GHZ) / purcell_rate(kappa, g, wr, 2.5 * GHZ);
        assert!((r - 32.0).abs() < 1e-9);
        assert!(purcell_t1(kappa, g, wr, 5.36 * GHZ) > 10.0 * 350.0 * US);
    }

    #[test]
    fn pure_dephasing_cases() {
        assert_eq!(pure_dephasing_time(100e-6, 200e-6).unwrap(), PureDephasing::Infinite);
        assert_eq!(pure_dephasing_time(100e-6, 215e-6).unwrap(), PureDephasing::Infinite);
        assert!(pure_dephasing_time(100e-6, 230e-6).is_err());
        let t = pure_dephasing_time(270.0 * US, 275.0 * US).unwrap().seconds();
        assert!((t / US - 560.0).abs() < 5.0, "{}", t / US);
        // Device D: 1/(1/280 − 1/660) μs.
        let t = pure_dephasing_time(330.0 * US, 280.0 * US).unwrap().seconds();
        assert!((t / US - 486.3).abs() < 0.1, "{}", t / US);
    }

    #[test]
    fn rate_to_lifetime_boundary() {
        // A 1 ms dephasing time is a /2π rate of 1/(2π·1 ms).
        let rate = crate::units::rate_from_lifetime(1e-3);
        assert!((rate - 159.154_943).abs() < 1e-5);
        let nbar = nbar_from_thermal_dephasing(rate, 0.83 * MHZ, 14.01 * MHZ);
        assert!(nbar > 0.5e-3 && nbar < 2e-3, "{nbar}");
    }
}

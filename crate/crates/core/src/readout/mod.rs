//! Single-shot readout: IQ records, blob geometry, SNR and efficiency,
//! angular histograms and assignment errors, and a Monte Carlo generator.

mod histogram;
mod shots;
mod simulate;

pub use histogram::{
    angular_histogram, assignment_errors, optimal_threshold, shot_angle, AngularHistogram,
    AssignmentErrors, OriginPolicy,
};
pub use shots::{IqShot, Preparation, ShotSet};
pub use simulate::{
    simulate_repeated, simulate_shots, ConditionedShots, Populations, ReadoutScenario,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{BOLTZMANN, PLANCK};

#[derive(Debug, Error)]
pub enum ReadoutError {
    #[error("invalid readout input: {0}")]
    InvalidInput(String),
    #[error("quantum efficiency {0} outside [0, 0.5]")]
    EfficiencyOutOfRange(f64),
    #[error("histograms do not share binning")]
    BinningMismatch,
    #[error("threshold {0} rad outside the histogram domain [-π, π)")]
    ThresholdOutOfRange(f64),
    #[error("shot CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("shot I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Two pointer states with a common isotropic width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobModel {
    pub mu_g: [f64; 2],
    pub mu_e: [f64; 2],
    pub sigma: f64,
    /// Angle between the vectors μ_e and μ_g (radians, in [0, π]).
    pub theta_eg: f64,
}

impl BlobModel {
    pub fn new(mu_g: [f64; 2], mu_e: [f64; 2], sigma: f64) -> Result<Self, ReadoutError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ReadoutError::InvalidInput(format!("sigma = {sigma}")));
        }
        Ok(Self {
            mu_g,
            mu_e,
            sigma,
            theta_eg: angle_between(mu_g, mu_e),
        })
    }

    /// Places μ_g and μ_e symmetrically at ±θ/2 about `axis_angle`, at the
    /// radius for which the empirical SNR equals the theoretical SNR for the given
    /// efficiency and readout settings.
    pub fn from_physics(
        eta: f64,
        kappa: f64,
        nbar: f64,
        tau: f64,
        theta_eg: f64,
        sigma: f64,
        axis_angle: f64,
    ) -> Result<Self, ReadoutError> {
        if !(theta_eg > 0.0 && theta_eg <= std::f64::consts::PI) {
            return Err(ReadoutError::InvalidInput(format!("theta_eg = {theta_eg}")));
        }
        let snr = snr_theory(eta, kappa, nbar, tau, theta_eg)?;
        // |μ_e − μ_g| = 2r sin(θ/2) and SNR = |μ_e − μ_g|²/(2σ²).
        let r = sigma * (snr / 2.0).sqrt() / (theta_eg / 2.0).sin();
        let at = |a: f64| [r * a.cos(), r * a.sin()];
        Self::new(
            at(axis_angle - theta_eg / 2.0),
            at(axis_angle + theta_eg / 2.0),
            sigma,
        )
    }

    pub fn separation(&self) -> f64 {
        (self.mu_e[0] - self.mu_g[0]).hypot(self.mu_e[1] - self.mu_g[1])
    }
}

fn angle_between(a: [f64; 2], b: [f64; 2]) -> f64 {
    let na = a[0].hypot(a[1]);
    let nb = b[0].hypot(b[1]);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    cross.abs().atan2(dot)
}

/// |μ_e − μ_g|² / (2σ²).
pub fn snr_empirical(blob: &BlobModel) -> f64 {
    let d = blob.separation();
    d * d / (2.0 * blob.sigma * blob.sigma)
}

/// 8η(2πκ)n̄τ sin²(θ_eg/2), with κ in Hz (/2π units) and τ in seconds.
pub fn snr_theory(
    eta: f64,
    kappa: f64,
    nbar: f64,
    tau: f64,
    theta_eg: f64,
) -> Result<f64, ReadoutError> {
    if !(0.0..=0.5).contains(&eta) {
        return Err(ReadoutError::EfficiencyOutOfRange(eta));
    }
    let s = (theta_eg / 2.0).sin();
    Ok(8.0 * eta * crate::units::angular(kappa) * nbar * tau * s * s)
}

/// θ_eg implied by a symmetric pointer-state picture, 2·arctan(2χ/κ). Not
/// used for efficiency extraction, which always takes θ_eg from the blobs.
pub fn theta_from_dispersive(chi: f64, kappa: f64) -> f64 {
    2.0 * (2.0 * chi / kappa).abs().atan()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub eta: f64,
    /// System noise temperature h f_r / (k_B η), kelvin.
    pub t_sys: f64,
    pub snr: f64,
    pub flags: Vec<String>,
}

/// Quantum efficiency from equating empirical and theoretical SNR, and the
/// corresponding system noise temperature at `omega_r` (Hz).
pub fn efficiency(
    blob: &BlobModel,
    kappa: f64,
    nbar: f64,
    tau: f64,
    omega_r: f64,
) -> Result<Efficiency, ReadoutError> {
    if !(kappa > 0.0 && nbar > 0.0 && tau > 0.0 && omega_r > 0.0) {
        return Err(ReadoutError::InvalidInput(
            "kappa, nbar, tau and omega_r must be positive".into(),
        ));
    }
    let s = (blob.theta_eg / 2.0).sin();
    if s == 0.0 {
        return Err(ReadoutError::InvalidInput(
            "theta_eg = 0: pointer states are indistinguishable".into(),
        ));
    }
    let snr = snr_empirical(blob);
    let eta = snr / (8.0 * crate::units::angular(kappa) * nbar * tau * s * s);
    let mut flags = Vec::new();
    if eta > 0.5 {
        flags.push(format!(
            "unphysical: eta = {eta:.4} exceeds the quantum limit 0.5 (calibration error?)"
        ));
    }
    Ok(Efficiency {
        eta,
        t_sys: PLANCK * omega_r / (BOLTZMANN * eta),
        snr,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{GHZ, MHZ, US};
    use std::f64::consts::PI;

    #[test]
    fn snr_empirical_reductions() {
        let b = BlobModel::new([1.0, 0.0], [1.0, 0.0], 0.3).unwrap();
        assert_eq!(snr_empirical(&b), 0.0);
        let b = BlobModel::new([0.0, 0.0], [0.0, 2.0], 1.0).unwrap();
        assert!((snr_empirical(&b) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn snr_theory_uses_angular_kappa() {
        // 8 · 0.5 · 2π·1 Hz · 1 · 1 s · sin²(π/2) = 8π.
        let v = snr_theory(0.5, 1.0, 1.0, 1.0, PI).unwrap();
        assert!((v - 8.0 * PI).abs() < 1e-12);
        assert_eq!(snr_theory(0.08, 11.28 * MHZ, 14.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(snr_theory(0.08, 11.28 * MHZ, 14.0, 1e-6, 0.0).unwrap(), 0.0);
        assert!(snr_theory(0.6, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn snr_linear_in_tau_and_nbar() {
        let a = snr_theory(0.08, 11.28 * MHZ, 7.0, 2.5 * US, 0.4).unwrap();
        let b = snr_theory(0.08, 11.28 * MHZ, 14.0, 2.5 * US, 0.4).unwrap();
        let c = snr_theory(0.08, 11.28 * MHZ, 7.0, 5.0 * US, 0.4).unwrap();
        assert!((b / a - 2.0).abs() < 1e-12);
        assert!((c / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn efficiency_inverts_construction() {
        let (kappa, nbar, tau) = (11.28 * MHZ, 2.0, 1.0 * US);
        let blob = BlobModel::from_physics(0.04, kappa, nbar, tau, 0.7, 0.01, 0.3).unwrap();
        assert!((blob.theta_eg - 0.7).abs() < 1e-12);
        let e = efficiency(&blob, kappa, nbar, tau, 20.92 * GHZ).unwrap();
        assert!((e.eta / 0.04 - 1.0).abs() < 1e-8);
        assert!(e.flags.is_empty());
    }

    #[test]
    fn system_noise_temperature() {
        let (kappa, nbar, tau) = (11.28 * MHZ, 2.0, 1.0 * US);
        let blob = BlobModel::from_physics(0.08, kappa, nbar, tau, 0.7, 0.01, 0.0).unwrap();
        let e = efficiency(&blob, kappa, nbar, tau, 20.92 * GHZ).unwrap();
        assert!((e.t_sys - 12.55).abs() < 0.05, "{}", e.t_sys);
    }
}

//! Cavity mode frequency, coupling scaling and the perturbative dispersive
//! shift of a multilevel transmon.
//!
//! Sign convention: χ_j is the pull of the cavity frequency with the qubit in
//! |j⟩, and χ = (χ₁ − χ₀)/2. A transmon below the cavity gives χ < 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transmon::Spectrum;
use crate::units::{MHZ, SPEED_OF_LIGHT};

pub const DEFAULT_CHI_LEVELS: usize = 12;
pub const DEFAULT_POLE_GUARD: f64 = 50.0 * MHZ;
/// Extra levels used to check truncation of the dispersive sum.
const CONVERGENCE_EXTRA_LEVELS: usize = 3;
const CONVERGENCE_TOL: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CavityError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(
        "cavity frequency {omega_r:.6e} Hz within the guard band of the {lower}->{upper} transition at {transition:.6e} Hz"
    )]
    PoleProximity {
        lower: usize,
        upper: usize,
        transition: f64,
        omega_r: f64,
    },
    #[error("dispersive sum not converged: {n_levels} levels give {chi:.6e} Hz, {n_check} give {chi_check:.6e} Hz")]
    NotConverged {
        n_levels: usize,
        chi: f64,
        n_check: usize,
        chi_check: f64,
    },
    #[error("spectrum has {available} levels, {required} required")]
    TooFewLevels { available: usize, required: usize },
    #[error("target chi {target:.4e} Hz has the opposite sign to the model ({model_sign}) at this cavity frequency")]
    SignMismatch { target: f64, model_sign: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectangularCavity {
    /// In-plane dimensions, meters.
    pub a: f64,
    pub b: f64,
    /// Height, meters.
    pub z: f64,
}

impl RectangularCavity {
    pub fn validate(&self) -> Result<(), CavityError> {
        if !(self.a > 0.0 && self.b > 0.0 && self.z > 0.0) {
            return Err(CavityError::InvalidInput("cavity dimensions must be positive".into()));
        }
        if self.z > self.a.min(self.b) {
            return Err(CavityError::InvalidInput(
                "height must not exceed the in-plane dimensions".into(),
            ));
        }
        Ok(())
    }
}

/// Bare TE110 mode frequency (c/2)·√(1/a² + 1/b²), Hz.
pub fn te110_frequency(cavity: &RectangularCavity) -> Result<f64, CavityError> {
    cavity.validate()?;
    Ok(0.5 * SPEED_OF_LIGHT * (1.0 / (cavity.a * cavity.a) + 1.0 / (cavity.b * cavity.b)).sqrt())
}

/// Reference point of the g ∝ ω_r^{3/2} scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingModel {
    /// Coupling at `omega0`, Hz.
    pub g0: f64,
    /// Reference cavity frequency, Hz.
    pub omega0: f64,
}

pub fn scaled_coupling(model: &CouplingModel, omega_r: f64) -> f64 {
    model.g0 * (omega_r / model.omega0).powf(1.5)
}

/// Dispersive-regime parameters shared by the rate formulas and fits (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersiveSystem {
    pub chi: f64,
    pub kappa: f64,
    pub omega_r: f64,
    pub g: f64,
    pub omega_01: f64,
}

impl DispersiveSystem {
    pub fn validate(&self) -> Result<(), CavityError> {
        if !(self.kappa > 0.0) {
            return Err(CavityError::InvalidInput("kappa must be positive".into()));
        }
        if !(self.omega_r > 0.0) {
            return Err(CavityError::InvalidInput("omega_r must be positive".into()));
        }
        if !(self.chi.abs() < self.kappa * 1e3) {
            return Err(CavityError::InvalidInput("|chi| exceeds 1000 kappa".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiOptions {
    pub n_levels: usize,
    /// Minimum allowed | |ω_ij| − ω_r |, Hz.
    pub guard: f64,
}

impl Default for ChiOptions {
    fn default() -> Self {
        Self {
            n_levels: DEFAULT_CHI_LEVELS,
            guard: DEFAULT_POLE_GUARD,
        }
    }
}

/// A transition of |0⟩ or |1⟩ inside the guard band of `omega_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleFlag {
    pub lower: usize,
    pub upper: usize,
    pub transition: f64,
}

/// Transitions entering the sum (including the convergence-check levels)
/// that lie within the guard band, nearest first.
fn nearest_pole(spectrum: &Spectrum, omega_r: f64, n_levels: usize, guard: f64) -> Option<PoleFlag> {
    let n = (n_levels + CONVERGENCE_EXTRA_LEVELS).min(spectrum.n_levels());
    let mut best: Option<(f64, PoleFlag)> = None;
    for j in 0..2 {
        for i in 0..n {
            if i == j {
                continue;
            }
            let w = (spectrum.energies[i] - spectrum.energies[j]).abs();
            let d = (w - omega_r).abs();
            if d < guard && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((
                    d,
                    PoleFlag {
                        lower: i.min(j),
                        upper: i.max(j),
                        transition: w,
                    },
                ));
            }
        }
    }
    best.map(|(_, p)| p)
}

/// χ_j/g² summed over the lowest `n` levels.
fn pull_per_g2(spectrum: &Spectrum, j: usize, omega_r: f64, n: usize) -> f64 {
    let e = &spectrum.energies;
    (0..n)
        .filter(|&i| i != j)
        .map(|i| {
            let w = e[j] - e[i];
            let m = spectrum.charge_matrix[(i, j)];
            2.0 * w * m * m / (w * w - omega_r * omega_r)
        })
        .sum()
}

fn chi_per_g2(spectrum: &Spectrum, omega_r: f64, n: usize) -> f64 {
    0.5 * (pull_per_g2(spectrum, 1, omega_r, n) - pull_per_g2(spectrum, 0, omega_r, n))
}

/// χ = (χ₁ − χ₀)/2 at coupling `g` (Hz) and cavity frequency `omega_r` (Hz),
/// summing over `n_levels` levels, with the default pole guard.
pub fn chi_perturbative(
    spectrum: &Spectrum,
    g: f64,
    omega_r: f64,
    n_levels: usize,
) -> Result<f64, CavityError> {
    chi_with(
        spectrum,
        g,
        omega_r,
        &ChiOptions {
            n_levels,
            ..ChiOptions::default()
        },
    )
}

pub fn chi_with(
    spectrum: &Spectrum,
    g: f64,
    omega_r: f64,
    options: &ChiOptions,
) -> Result<f64, CavityError> {
    Ok(g * g * chi_unit(spectrum, omega_r, options)?)
}

/// χ per unit g² (1/Hz), with guard and truncation checks.
fn chi_unit(spectrum: &Spectrum, omega_r: f64, options: &ChiOptions) -> Result<f64, CavityError> {
    if !(omega_r > 0.0) {
        return Err(CavityError::InvalidInput("omega_r must be positive".into()));
    }
    let n = options.n_levels;
    let n_check = n + CONVERGENCE_EXTRA_LEVELS;
    if n < 2 || spectrum.n_levels() < n_check {
        return Err(CavityError::TooFewLevels {
            available: spectrum.n_levels(),
            required: n_check.max(2 + CONVERGENCE_EXTRA_LEVELS),
        });
    }
    if let Some(p) = nearest_pole(spectrum, omega_r, n, options.guard) {
        return Err(CavityError::PoleProximity {
            lower: p.lower,
            upper: p.upper,
            transition: p.transition,
            omega_r,
        });
    }
    let chi = chi_per_g2(spectrum, omega_r, n);
    let chi_check = chi_per_g2(spectrum, omega_r, n_check);
    if (chi - chi_check).abs() > CONVERGENCE_TOL * chi_check.abs() {
        return Err(CavityError::NotConverged {
            n_levels: n,
            chi,
            n_check,
            chi_check,
        });
    }
    Ok(chi)
}

/// The positive g reproducing `chi_target` (Hz) at `omega_r`.
pub fn solve_g_from_chi(
    spectrum: &Spectrum,
    chi_target: f64,
    omega_r: f64,
) -> Result<f64, CavityError> {
    let unit = chi_unit(spectrum, omega_r, &ChiOptions::default())?;
    if chi_target == 0.0 {
        return Ok(0.0);
    }
    if chi_target.signum() != unit.signum() {
        return Err(CavityError::SignMismatch {
            target: chi_target,
            model_sign: unit.signum(),
        });
    }
    Ok((chi_target / unit).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiScanPoint {
    pub omega_r: f64,
    pub g: f64,
    /// `None` when the point is flagged.
    pub chi: Option<f64>,
    pub pole: Option<PoleFlag>,
}

/// χ across cavity frequencies with g scaled as ω_r^{3/2}. Points inside a
/// guard band are flagged instead of evaluated. Output order follows the grid.
pub fn chi_scan(
    spectrum: &Spectrum,
    model: &CouplingModel,
    omega_grid: &[f64],
    options: &ChiOptions,
) -> Result<Vec<ChiScanPoint>, CavityError> {
    if omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CavityError::InvalidInput("grid must be strictly increasing".into()));
    }
    if spectrum.n_levels() < options.n_levels + CONVERGENCE_EXTRA_LEVELS {
        return Err(CavityError::TooFewLevels {
            available: spectrum.n_levels(),
            required: options.n_levels + CONVERGENCE_EXTRA_LEVELS,
        });
    }
    Ok(omega_grid
        .par_iter()
        .map(|&omega_r| {
            let g = scaled_coupling(model, omega_r);
            match nearest_pole(spectrum, omega_r, options.n_levels, options.guard) {
                Some(p) => ChiScanPoint {
                    omega_r,
                    g,
                    chi: None,
                    pole: Some(p),
                },
                None => ChiScanPoint {
                    omega_r,
                    g,
                    chi: Some(g * g * chi_per_g2(spectrum, omega_r, options.n_levels)),
                    pole: None,
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transmon::{diagonalize, TransmonParams};
    use crate::units::GHZ;

    fn device_c() -> Spectrum {
        diagonalize(&TransmonParams::new(15.4 * GHZ, 0.26 * GHZ, 0.25)).unwrap()
    }

    #[test]
    fn te110_reductions() {
        let a = 7e-3;
        let square = RectangularCavity { a, b: a, z: 1e-3 };
        let f = te110_frequency(&square).unwrap();
        assert!((f / (SPEED_OF_LIGHT / (2f64.sqrt() * a)) - 1.0).abs() < 1e-14);
        let double = RectangularCavity { a: 2.0 * a, b: 2.0 * a, z: 1e-3 };
        assert!((te110_frequency(&double).unwrap() / (f / 2.0) - 1.0).abs() < 1e-14);
        let c = RectangularCavity { a: 7.0e-3, b: 7.5e-3, z: 1e-3 };
        assert!((te110_frequency(&c).unwrap() / GHZ - 29.3).abs() < 0.05);
    }

    #[test]
    fn coupling_power_law() {
        let m = CouplingModel { g0: 250.0 * MHZ, omega0: 7.0 * GHZ };
        assert_eq!(scaled_coupling(&m, m.omega0), m.g0);
        assert!((scaled_coupling(&m, 4.0 * m.omega0) - 8.0 * m.g0).abs() < 1e-3);
        assert!((scaled_coupling(&m, 21.0 * GHZ) / GHZ - 1.299).abs() < 0.001);
    }

    #[test]
    fn chi_quadratic_in_g_and_negative_below_cavity() {
        let s = device_c();
        let chi = chi_perturbative(&s, 507.0 * MHZ, 20.92 * GHZ, 12).unwrap();
        assert!(chi < 0.0);
        let chi2 = chi_perturbative(&s, 2.0 * 507.0 * MHZ, 20.92 * GHZ, 12).unwrap();
        assert!((chi2 / chi - 4.0).abs() < 1e-12);
        assert_eq!(chi_perturbative(&s, 0.0, 20.92 * GHZ, 12).unwrap(), 0.0);
    }

    #[test]
    fn two_level_truncation_is_jaynes_cummings_with_counter_rotating_term() {
        let s = device_c();
        let omega_r = 20.92 * GHZ;
        let w = s.f01();
        let n01 = s.charge_matrix[(0, 1)];
        let expected = n01 * n01 * (1.0 / (w - omega_r) + 1.0 / (w + omega_r));
        assert!((chi_per_g2(&s, omega_r, 2) / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_stability() {
        let s = device_c();
        let a = chi_perturbative(&s, 507.0 * MHZ, 20.92 * GHZ, 9).unwrap();
        let b = chi_perturbative(&s, 507.0 * MHZ, 20.92 * GHZ, 12).unwrap();
        assert!((a / b - 1.0).abs() < 0.01);
    }

    #[test]
    fn solve_g_inverts_chi() {
        let s = device_c();
        let chi = chi_perturbative(&s, 507.0 * MHZ, 20.92 * GHZ, 12).unwrap();
        let g = solve_g_from_chi(&s, chi, 20.92 * GHZ).unwrap();
        assert!((g / (507.0 * MHZ) - 1.0).abs() < 1e-6);
        assert!(matches!(
            solve_g_from_chi(&s, -chi, 20.92 * GHZ),
            Err(CavityError::SignMismatch { .. })
        ));
    }

    #[test]
    fn pole_is_reported_and_flagged() {
        let s = device_c();
        let w12 = s.transition(1, 2);
        assert!(matches!(
            chi_perturbative(&s, 500.0 * MHZ, w12 + 1.0 * MHZ, 12),
            Err(CavityError::PoleProximity { lower: 1, upper: 2, .. })
        ));
        let m = CouplingModel { g0: 507.0 * MHZ, omega0: 20.92 * GHZ };
        let grid = [w12 - 200.0 * MHZ, w12, w12 + 200.0 * MHZ];
        let scan = chi_scan(&s, &m, &grid, &ChiOptions::default()).unwrap();
        assert!(scan[0].pole.is_none() && scan[2].pole.is_none());
        assert_eq!(scan[1].pole.map(|p| (p.lower, p.upper)), Some((1, 2)));
        assert!(scan[1].chi.is_none());
    }

    #[test]
    fn scan_scales_with_g0_squared() {
        let s = device_c();
        let m = CouplingModel { g0: 507.0 * MHZ, omega0: 20.92 * GHZ };
        let m2 = CouplingModel { g0: 2.0 * m.g0, ..m };
        let grid: Vec<f64> = (0..16).map(|k| (10.0 + k as f64) * GHZ).collect();
        let a = chi_scan(&s, &m, &grid, &ChiOptions::default()).unwrap();
        let b = chi_scan(&s, &m2, &grid, &ChiOptions::default()).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.omega_r, q.omega_r);
            if let (Some(x), Some(y)) = (p.chi, q.chi) {
                assert!((y / x - 4.0).abs() < 1e-12);
            }
        }
    }
}

//! Measurement-induced dephasing versus photon number,
//! Γ_m = 2n̄κχ²/(χ² + (κ/2)²).
//!
//! Only the slope s = 2κχ²/(χ² + κ²/4) is constrained by the data, so χ and
//! κ cannot both be determined. The default mode takes κ from elsewhere (a
//! CKP fit) and solves for |χ|.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{least_squares, Bounds, FitError, FitResult, LsqOptions, Residuals};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaMMode {
    /// κ known (Hz); fit the slope and convert to |χ|.
    FixedKappa(f64),
    /// Fit χ and κ together from the given starting point. The problem is
    /// rank one; the result is one point on a valley and carries a flag.
    Joint { chi: f64, kappa: f64 },
}

fn slope_of(chi: f64, kappa: f64) -> f64 {
    2.0 * kappa * chi * chi / (chi * chi + 0.25 * kappa * kappa)
}

/// Fits `(nbar, gamma_m)` pairs (Γ_m in Hz, /2π units). Reported parameters:
/// `slope`, `chi` (magnitude; the sign is not observable), `kappa`.
pub fn gamma_m_fit(points: &[(f64, f64)], mode: GammaMMode) -> Result<FitResult, FitError> {
    if points.iter().any(|(n, g)| !n.is_finite() || !g.is_finite()) {
        return Err(FitError::InvalidInput("non-finite point".into()));
    }
    if points.iter().any(|(n, _)| *n < 0.0) {
        return Err(FitError::InvalidInput("negative photon number".into()));
    }
    let informative = points.iter().filter(|(n, _)| *n > 0.0).count();
    if points.len() < 3 || informative == 0 {
        return Err(FitError::Underdetermined(format!(
            "{} points, {} with nbar > 0 (need 3 points, at least one with nbar > 0)",
            points.len(),
            informative
        )));
    }
    let snn: f64 = points.iter().map(|(n, _)| n * n).sum();
    let sng: f64 = points.iter().map(|(n, g)| n * g).sum();
    let slope = sng / snn;
    if slope < 0.0 {
        return Err(FitError::NegativeSlope(slope));
    }
    let ssr: f64 = points.iter().map(|(n, g)| (g - slope * n).powi(2)).sum();
    let dof = points.len() - 1;
    let slope_var = ssr / dof as f64 / snn;

    match mode {
        GammaMMode::FixedKappa(kappa) => {
            if !(kappa > 0.0) {
                return Err(FitError::InvalidInput("kappa must be positive".into()));
            }
            if slope >= 2.0 * kappa {
                return Err(FitError::Unidentifiable(format!(
                    "slope {slope:.4e} exceeds the maximum 2κ = {:.4e}",
                    2.0 * kappa
                )));
            }
            let chi = 0.5 * kappa * (slope / (2.0 * kappa - slope)).sqrt();
            // dχ/ds for error propagation.
            let dchi = if slope > 0.0 {
                0.5 * kappa * 0.5 * (slope / (2.0 * kappa - slope)).powf(-0.5) * 2.0 * kappa
                    / (2.0 * kappa - slope).powi(2)
            } else {
                f64::INFINITY
            };
            let var = [slope_var, dchi * dchi * slope_var, 0.0];
            let cov_sc = dchi * slope_var;
            let covariance = vec![
                vec![var[0], cov_sc, 0.0],
                vec![cov_sc, var[1], 0.0],
                vec![0.0, 0.0, 0.0],
            ];
            Ok(FitResult {
                names: vec!["slope".into(), "chi".into(), "kappa".into()],
                values: vec![slope, chi, kappa],
                std_errors: var.iter().map(|v| v.sqrt()).collect(),
                covariance,
                residual_norm: ssr.sqrt(),
                converged: true,
                iterations: 1,
                flags: vec!["kappa fixed".into()],
            })
        }
        GammaMMode::Joint { chi, kappa } => joint(points, chi.abs(), kappa, slope_var),
    }
}

struct JointProblem<'a> {
    points: &'a [(f64, f64)],
    scale: f64,
}

impl Residuals for JointProblem<'_> {
    fn n_params(&self) -> usize {
        2
    }
    fn n_residuals(&self) -> usize {
        self.points.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let s = slope_of(p[0], p[1]) * self.scale;
        for (o, (n, g)) in out.iter_mut().zip(self.points) {
            *o = (s * n - g) / self.scale;
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let (c, k) = (p[0], p[1]);
        let d = c * c + 0.25 * k * k;
        let ds_dc = 4.0 * k * c / d - 2.0 * k * c * c * 2.0 * c / (d * d);
        let ds_dk = 2.0 * c * c / d - 2.0 * k * c * c * 0.5 * k / (d * d);
        for (i, (n, _)) in self.points.iter().enumerate() {
            jac[(i, 0)] = ds_dc * n;
            jac[(i, 1)] = ds_dk * n;
        }
    }
}

fn joint(
    points: &[(f64, f64)],
    chi0: f64,
    kappa0: f64,
    slope_var: f64,
) -> Result<FitResult, FitError> {
    if !(chi0 > 0.0 && kappa0 > 0.0) {
        return Err(FitError::InvalidInput(
            "joint mode needs positive starting chi and kappa".into(),
        ));
    }
    let scale = kappa0;
    let problem = JointProblem { points, scale };
    let bounds = Bounds {
        lower: vec![0.0, 1e-9],
        upper: vec![f64::INFINITY, f64::INFINITY],
    };
    let sol = least_squares(
        &problem,
        &[chi0 / scale, kappa0 / scale],
        Some(&bounds),
        &LsqOptions::default(),
    )?;
    let chi = sol.params[0] * scale;
    let kappa = sol.params[1] * scale;
    // The pseudo-inverse covariance only describes the identifiable direction.
    let jac = DMatrix::from_row_slice(
        3,
        2,
        &[0.0, 0.0, scale, 0.0, 0.0, scale],
    );
    let mut result = FitResult::from_transformed(
        &["slope", "chi", "kappa"],
        vec![slope_of(chi, kappa), chi, kappa],
        &jac,
        &sol,
        scale,
    );
    result.covariance[0][0] = slope_var;
    result.std_errors[0] = slope_var.sqrt();
    result
        .flags
        .push("sloppy: only the slope 2κχ²/(χ²+κ²/4) is identifiable".into());
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::MHZ;

    fn points(chi: f64, kappa: f64) -> Vec<(f64, f64)> {
        (0..8)
            .map(|i| {
                let n = 0.1 * i as f64;
                (n, slope_of(chi, kappa) * n)
            })
            .collect()
    }

    #[test]
    fn exact_points_fixed_kappa() {
        let (chi, kappa) = (0.94 * MHZ, 11.28 * MHZ);
        let fit = gamma_m_fit(&points(chi, kappa), GammaMMode::FixedKappa(kappa)).unwrap();
        assert!((fit.get("slope") / slope_of(chi, kappa) - 1.0).abs() < 1e-8);
        assert!((fit.get("chi") / chi - 1.0).abs() < 1e-8);
    }

    #[test]
    fn joint_mode_lands_on_the_slope_valley() {
        let (chi, kappa) = (0.94 * MHZ, 11.28 * MHZ);
        let fit = gamma_m_fit(
            &points(chi, kappa),
            GammaMMode::Joint {
                chi: 0.8 * MHZ,
                kappa: 12.0 * MHZ,
            },
        )
        .unwrap();
        let s = slope_of(fit.get("chi"), fit.get("kappa"));
        assert!((s / slope_of(chi, kappa) - 1.0).abs() < 1e-8);
        assert!(fit.has_flag("sloppy"));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            gamma_m_fit(&[(0.0, 0.0)], GammaMMode::FixedKappa(1.0)),
            Err(FitError::Underdetermined(_))
        ));
        let pts = [(0.1, -1.0), (0.2, -2.0), (0.3, -3.0)];
        assert!(matches!(
            gamma_m_fit(&pts, GammaMMode::FixedKappa(1.0)),
            Err(FitError::NegativeSlope(_))
        ));
    }

    #[test]
    fn half_kappa_reduction() {
        // Γ_m = n̄κ at χ = κ/2 (the maximum over κ at fixed χ).
        let kappa = 10.0;
        assert!((slope_of(kappa / 2.0, kappa) - kappa).abs() < 1e-12);
    }
}

//! Transmon spectrum in the charge basis.
//!
//! H = 4E_C (n̂ − n_g)² − (E_J/2) Σ (|n⟩⟨n+1| + h.c.), truncated to charge
//! states −n_cut..=n_cut. All energies are ordinary frequencies (Hz).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{least_squares, Bounds, LsqOptions, Residuals};

/// Levels returned by [`diagonalize`]: enough for a 12-level dispersive sum
/// plus its +3 convergence check.
pub const DEFAULT_LEVELS: usize = 16;
pub const DEFAULT_N_CUT: usize = 20;
const MAX_N_CUT: usize = 640;
/// Doubling n_cut may move no returned level by more than this fraction of f01.
const CONVERGENCE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransmonError {
    #[error("invalid transmon parameters: {0}")]
    InvalidParams(String),
    #[error("spectrum not converged at n_cut = {n_cut} (level shift {shift:.3e} of f01)")]
    NotConverged { n_cut: usize, shift: f64 },
    #[error("spectrum has {available} levels, {required} required")]
    TooFewLevels { available: usize, required: usize },
    #[error("transitions violate transmon ordering: {0}")]
    NotTransmonOrdered(String),
    #[error("fit residual {relative:.3e} (relative to f01) too large for a transmon")]
    ResidualTooLarge { relative: f64 },
    #[error("E_J/E_C fit failed: {0}")]
    Fit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmonParams {
    /// E_J/h in Hz.
    pub e_j: f64,
    /// E_C/h in Hz.
    pub e_c: f64,
    pub n_g: f64,
    pub n_cut: usize,
}

impl TransmonParams {
    pub fn new(e_j: f64, e_c: f64, n_g: f64) -> Self {
        Self {
            e_j,
            e_c,
            n_g,
            n_cut: DEFAULT_N_CUT,
        }
    }

    pub fn with_n_g(mut self, n_g: f64) -> Self {
        self.n_g = n_g;
        self
    }

    pub fn validate(&self) -> Result<(), TransmonError> {
        if !(self.e_j > 0.0 && self.e_j.is_finite()) {
            return Err(TransmonError::InvalidParams(format!("e_j = {}", self.e_j)));
        }
        if !(self.e_c > 0.0 && self.e_c.is_finite()) {
            return Err(TransmonError::InvalidParams(format!("e_c = {}", self.e_c)));
        }
        if !self.n_g.is_finite() {
            return Err(TransmonError::InvalidParams("n_g not finite".into()));
        }
        if self.n_cut < 5 {
            return Err(TransmonError::InvalidParams(format!(
                "n_cut = {} (minimum 5)",
                self.n_cut
            )));
        }
        Ok(())
    }

    /// Charge-basis Hamiltonian in Hz, basis index k ↔ charge k − n_cut.
    pub fn hamiltonian(&self) -> DMatrix<f64> {
        hamiltonian(self.e_j, self.e_c, self.n_g, self.n_cut)
    }

    /// Charge operator n̂ (diagonal), same basis as [`Self::hamiltonian`].
    pub fn charge_operator(&self) -> DVector<f64> {
        charge_diagonal(self.n_cut)
    }
}

pub(crate) fn charge_diagonal(n_cut: usize) -> DVector<f64> {
    let dim = 2 * n_cut + 1;
    DVector::from_fn(dim, |k, _| k as f64 - n_cut as f64)
}

fn hamiltonian(e_j: f64, e_c: f64, n_g: f64, n_cut: usize) -> DMatrix<f64> {
    let dim = 2 * n_cut + 1;
    // Only the fractional part of n_g matters; reducing it keeps the diagonal
    // symmetric about the truncation centre, so truncation error does not
    // depend on which period n_g was given in.
    let n_g = n_g - n_g.round();
    let mut h = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let n = k as f64 - n_cut as f64;
        h[(k, k)] = 4.0 * e_c * (n - n_g) * (n - n_g);
        if k + 1 < dim {
            h[(k, k + 1)] = -0.5 * e_j;
            h[(k + 1, k)] = -0.5 * e_j;
        }
    }
    h
}

/// Eigen-decomposition sorted ascending. Columns of the returned matrix are
/// eigenvectors in the charge basis, with a deterministic sign (largest
/// component positive).
pub(crate) fn sorted_eigensystem(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));
    let dim = eigenvalues.len();
    let mut vecs = DMatrix::zeros(dim, dim);
    let mut vals = Vec::with_capacity(dim);
    for (col, &k) in order.iter().enumerate() {
        vals.push(eigenvalues[k]);
        let v = eigenvectors.column(k);
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, x)| if x.abs() > acc.1 + 1e-12 { (i, x.abs()) } else { acc });
        let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
        vecs.set_column(col, &(v * sign));
    }
    (vals, vecs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Ascending, ground state at exactly 0 (Hz).
    pub energies: Vec<f64>,
    /// ⟨i|n̂|j⟩ in the eigenbasis (real, symmetric).
    pub charge_matrix: DMatrix<f64>,
    /// The parameters used; `n_cut` is the converged truncation.
    pub params: TransmonParams,
    pub warnings: Vec<String>,
}

impl Spectrum {
    pub fn n_levels(&self) -> usize {
        self.energies.len()
    }

    /// |⟨i|n̂|j⟩|.
    pub fn charge_element(&self, i: usize, j: usize) -> f64 {
        self.charge_matrix[(i, j)].abs()
    }

    pub fn charge_elements(&self) -> DMatrix<f64> {
        self.charge_matrix.abs()
    }

    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.energies[j] - self.energies[i]
    }

    pub fn f01(&self) -> f64 {
        self.transition(0, 1)
    }
}

fn spectrum_at(params: &TransmonParams, n_levels: usize) -> (Vec<f64>, DMatrix<f64>) {
    let (vals, vecs) = sorted_eigensystem(params.hamiltonian());
    let n = n_levels.min(vals.len());
    let e0 = vals[0];
    let energies: Vec<f64> = vals[..n].iter().map(|e| e - e0).collect();
    let low = vecs.columns(0, n).into_owned();
    let charge = params.charge_operator();
    let nv = DMatrix::from_fn(low.nrows(), n, |r, c| charge[r] * low[(r, c)]);
    let mut m = low.transpose() * nv;
    for i in 0..n {
        for j in 0..i {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
    (energies, m)
}

/// Diagonalizes with [`DEFAULT_LEVELS`] returned levels.
pub fn diagonalize(params: &TransmonParams) -> Result<Spectrum, TransmonError> {
    diagonalize_levels(params, DEFAULT_LEVELS)
}

/// Diagonalizes and returns the lowest `n_levels`, doubling `n_cut` until the
/// returned energies are stable to 1e-9 of f01.
pub fn diagonalize_levels(
    params: &TransmonParams,
    n_levels: usize,
) -> Result<Spectrum, TransmonError> {
    params.validate()?;
    let mut warnings = Vec::new();
    if params.e_j / params.e_c < 1.0 {
        warnings.push(format!(
            "E_J/E_C = {:.3} is below 1; transmon-regime accuracy not guaranteed",
            params.e_j / params.e_c
        ));
    }
    let mut p = *params;
    let mut current = spectrum_at(&p, n_levels);
    let mut last_shift = f64::INFINITY;
    loop {
        let mut next_p = p;
        next_p.n_cut = p.n_cut * 2;
        if next_p.n_cut > MAX_N_CUT {
            return Err(TransmonError::NotConverged {
                n_cut: p.n_cut,
                shift: last_shift,
            });
        }
        let next = spectrum_at(&next_p, n_levels);
        let f01 = next.0[1];
        let shift = current
            .0
            .iter()
            .zip(&next.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / f01;
        if shift <= CONVERGENCE_TOL {
            // Report the smaller basis: it is the one certified by the check.
            let (energies, charge_matrix) = current;
            return Ok(Spectrum {
                energies,
                charge_matrix,
                params: p,
                warnings,
            });
        }
        last_shift = shift;
        p = next_p;
        current = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub f01: f64,
    pub f12: f64,
    pub f23: f64,
}

impl TransitionSet {
    pub fn validate(&self) -> Result<(), TransmonError> {
        let all = [self.f01, self.f12, self.f23];
        if all.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(TransmonError::NotTransmonOrdered(format!(
                "non-positive transition in {all:?}"
            )));
        }
        if !(self.f12 < self.f01 && self.f23 < self.f12) {
            return Err(TransmonError::NotTransmonOrdered(format!(
                "expected f23 < f12 < f01, got {all:?}"
            )));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.f01, self.f12, self.f23]
    }
}

pub fn transitions(spectrum: &Spectrum) -> Result<TransitionSet, TransmonError> {
    if spectrum.n_levels() < 4 {
        return Err(TransmonError::TooFewLevels {
            available: spectrum.n_levels(),
            required: 4,
        });
    }
    let e = &spectrum.energies;
    Ok(TransitionSet {
        f01: e[1] - e[0],
        f12: e[2] - e[1],
        f23: e[3] - e[2],
    })
}

/// Outcome of [`fit_ej_ec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EjEcFit {
    pub params: TransmonParams,
    /// Model minus measured, Hz.
    pub residuals: [f64; 3],
    /// ‖residuals‖ / f01.
    pub relative_residual: f64,
    pub iterations: usize,
}

/// Residual norm (relative to f01) above which the input is declared non-transmon.
const FIT_RESIDUAL_LIMIT: f64 = 1e-2;
/// Fit parameters are carried in GHz so the optimizer sees O(1) numbers.
const FIT_SCALE: f64 = 1e9;

struct TransitionResiduals {
    target: [f64; 3],
    n_g: f64,
}

impl TransitionResiduals {
    fn model(&self, p: &[f64]) -> Option<[f64; 3]> {
        let params = TransmonParams::new(p[0] * FIT_SCALE, p[1] * FIT_SCALE, self.n_g);
        let spectrum = diagonalize_levels(&params, 4).ok()?;
        Some(transitions(&spectrum).ok()?.as_array())
    }
}

impl Residuals for TransitionResiduals {
    fn n_params(&self) -> usize {
        2
    }
    fn n_residuals(&self) -> usize {
        3
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        match self.model(p) {
            Some(m) => {
                for k in 0..3 {
                    out[k] = (m[k] - self.target[k]) / self.target[0];
                }
            }
            None => out.fill(f64::NAN),
        }
    }
}

/// Least-squares (E_J, E_C) from measured f01, f12, f23 at fixed n_g.
pub fn fit_ej_ec(measured: &TransitionSet, n_g: f64) -> Result<EjEcFit, TransmonError> {
    measured.validate()?;
    // Asymptotic transmon relations: f01 ≈ √(8 E_J E_C) − E_C, f12 − f01 ≈ −E_C.
    let e_c0 = (measured.f01 - measured.f12).max(1e-3 * measured.f01);
    let e_j0 = (measured.f01 + e_c0).powi(2) / (8.0 * e_c0);
    let problem = TransitionResiduals {
        target: measured.as_array(),
        n_g,
    };
    let init = [e_j0 / FIT_SCALE, e_c0 / FIT_SCALE];
    let bounds = Bounds {
        lower: vec![init[0] * 1e-2, init[1] * 1e-2],
        upper: vec![init[0] * 1e2, init[1] * 1e2],
    };
    let options = LsqOptions {
        gradient_tolerance: 1e-10,
        step_tolerance: 1e-12,
        ..LsqOptions::default()
    };
    let sol = least_squares(&problem, &init, Some(&bounds), &options)
        .map_err(|e| TransmonError::Fit(e.to_string()))?;
    let relative_residual = sol.residual_norm();
    if relative_residual > FIT_RESIDUAL_LIMIT {
        return Err(TransmonError::ResidualTooLarge {
            relative: relative_residual,
        });
    }
    let params = TransmonParams::new(sol.params[0] * FIT_SCALE, sol.params[1] * FIT_SCALE, n_g);
    let r = &sol.residuals;
    Ok(EjEcFit {
        params,
        residuals: [
            r[0] * measured.f01,
            r[1] * measured.f01,
            r[2] * measured.f01,
        ],
        relative_residual,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::GHZ;

    fn device_c() -> TransmonParams {
        TransmonParams::new(15.4 * GHZ, 0.26 * GHZ, 0.25)
    }

    #[test]
    fn ground_state_is_zero() {
        let s = diagonalize(&device_c()).unwrap();
        assert_eq!(s.energies[0], 0.0);
        assert!(s.energies.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(s.n_levels(), DEFAULT_LEVELS);
    }

    #[test]
    fn device_c_f01_matches_asymptotic_formula() {
        let s = diagonalize(&device_c()).unwrap();
        let asymptotic = (8.0 * 15.4 * 0.26f64).sqrt() * GHZ - 0.26 * GHZ;
        assert!((s.f01() / asymptotic - 1.0).abs() < 0.01);
        assert!((s.f01() / (5.36 * GHZ) - 1.0).abs() < 0.02);
    }

    #[test]
    fn anharmonicity_close_to_minus_ec() {
        let t = transitions(&diagonalize(&device_c()).unwrap()).unwrap();
        let expected = t.f01 - 0.26 * GHZ;
        assert!((t.f12 / expected - 1.0).abs() < 0.1);
        let s = diagonalize(&device_c()).unwrap();
        assert_eq!(t.f01 + t.f12, s.energies[2] - s.energies[0]);
    }

    #[test]
    fn charge_matrix_symmetric_selection_rule() {
        let s = diagonalize(&device_c()).unwrap();
        let m = &s.charge_matrix;
        assert_eq!(m, &m.transpose());
        assert!(s.charge_element(0, 1) > 10.0 * s.charge_element(0, 3));
    }

    #[test]
    fn truncation_is_converged_at_default_cut() {
        let a = spectrum_at(&device_c(), 12).0;
        let mut big = device_c();
        big.n_cut = 40;
        let b = spectrum_at(&big, 12).0;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9 * a[1]);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = device_c();
        p.e_c = 0.0;
        assert!(diagonalize(&p).is_err());
        let mut p = device_c();
        p.n_cut = 4;
        assert!(diagonalize(&p).is_err());
    }

    #[test]
    fn cooper_pair_box_regime_warns() {
        let p = TransmonParams::new(0.5 * GHZ, 1.0 * GHZ, 0.25);
        let s = diagonalize(&p).unwrap();
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn fit_round_trip_device_c() {
        let s = diagonalize(&device_c()).unwrap();
        let t = transitions(&s).unwrap();
        let fit = fit_ej_ec(&t, 0.25).unwrap();
        assert!((fit.params.e_j / (15.4 * GHZ) - 1.0).abs() < 1e-3);
        assert!((fit.params.e_c / (0.26 * GHZ) - 1.0).abs() < 1e-3);
        assert!(fit.relative_residual < 1e-6);
    }

    #[test]
    fn fit_rejects_wrong_ordering() {
        let t = TransitionSet {
            f01: 5e9,
            f12: 5.2e9,
            f23: 4.9e9,
        };
        assert!(matches!(
            fit_ej_ec(&t, 0.25),
            Err(TransmonError::NotTransmonOrdered(_))
        ));
    }
}

//! Nonlinear least squares and the measurement-specific fit models.

mod blob;
mod ckp;
mod decay;
mod gamma_m;
mod lorentzian;
mod lsq;
mod ramsey;
mod trace;

pub use blob::{blob_fit, BlobComponent, BlobFit};
pub use ckp::{ckp_joint_fit, ckp_model, CkpModel};
pub use decay::{decay_fit, decay_model, DecayKind};
pub use gamma_m::{gamma_m_fit, GammaMMode};
pub use lorentzian::{lorentzian, lorentzian_peak};
pub use lsq::{
    finite_difference_jacobian, least_squares, Bounds, LsqOptions, LsqSolution, Residuals,
    Termination,
};
pub use ramsey::{ramsey_fit, ramsey_fit_with, ramsey_model, RamseyOptions};
pub use trace::{Trace, TraceError};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid fit input: {0}")]
    InvalidInput(String),
    #[error("model produced non-finite residuals at the initial point")]
    NonFinite,
    #[error("fit did not converge after {iterations} iterations: {reason}")]
    NotConverged { iterations: usize, reason: String },
    #[error("underdetermined: {0}")]
    Underdetermined(String),
    #[error("parameter not identifiable: {0}")]
    Unidentifiable(String),
    #[error("fitted slope {0:.4e} is negative")]
    NegativeSlope(f64),
    #[error(
        "beat frequencies {f1:.6e} and {f2:.6e} Hz closer than the resolution {resolution:.3e} Hz; use a single beat"
    )]
    BeatCollision { f1: f64, f2: f64, resolution: f64 },
    #[error("components collapsed: means {distance:.3e} apart with sigma {sigma:.3e}")]
    ComponentCollapse { distance: f64, sigma: f64 },
    #[error("degenerate data: {0}")]
    Degenerate(String),
}

/// Named parameters with covariance, as produced by every fit model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// ‖r‖ in the units of the (weighted) data.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Non-fatal diagnostics (extrapolated time constant, χ consistent with 0, ...).
    pub flags: Vec<String>,
}

impl FitResult {
    /// Value of the named parameter. Panics on an unknown name, which is a
    /// programming error rather than a data condition.
    pub fn get(&self, name: &str) -> f64 {
        self.values[self.index(name)]
    }

    pub fn std_error(&self, name: &str) -> f64 {
        self.std_errors[self.index(name)]
    }

    pub fn try_get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    fn index(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no fit parameter named {name:?}"))
    }

    pub fn has_flag(&self, prefix: &str) -> bool {
        self.flags.iter().any(|f| f.starts_with(prefix))
    }

    /// Builds a result whose reported parameters are `values = T(p)` for the
    /// optimizer's internal vector `p`, propagating covariance through the
    /// Jacobian `dT/dp` (rows: reported, columns: internal).
    pub(crate) fn from_transformed(
        names: &[&str],
        values: Vec<f64>,
        transform_jacobian: &DMatrix<f64>,
        sol: &LsqSolution,
        residual_scale: f64,
    ) -> Self {
        let cov_internal = sol.covariance();
        let cov = transform_jacobian * cov_internal * transform_jacobian.transpose();
        let n = values.len();
        let covariance: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect())
            .collect();
        let std_errors = (0..n).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            values,
            std_errors,
            covariance,
            residual_norm: sol.residual_norm() * residual_scale,
            converged: sol.converged(),
            iterations: sol.iterations,
            flags: Vec::new(),
        }
    }

    /// Reported parameters are `offset + scale ⊙ p`.
    pub(crate) fn from_affine(
        names: &[&str],
        offset: &[f64],
        scale: &[f64],
        sol: &LsqSolution,
        residual_scale: f64,
    ) -> Self {
        let values = sol
            .params
            .iter()
            .zip(offset.iter().zip(scale))
            .map(|(p, (o, s))| o + s * p)
            .collect();
        let jac = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(scale));
        Self::from_transformed(names, values, &jac, sol, residual_scale)
    }
}

/// Residuals of `model(x, p) - y`, optionally divided by sigma, for a
/// single-trace fit in normalized coordinates.
pub(crate) struct CurveProblem<'a, F, J>
where
    F: Fn(f64, &[f64]) -> f64,
    J: Fn(f64, &[f64], &mut [f64]),
{
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub weights: Option<&'a [f64]>,
    pub n_params: usize,
    pub model: F,
    /// Analytic gradient of the model with respect to the parameters.
    pub gradient: J,
}

impl<F, J> Residuals for CurveProblem<'_, F, J>
where
    F: Fn(f64, &[f64]) -> f64,
    J: Fn(f64, &[f64], &mut [f64]),
{
    fn n_params(&self) -> usize {
        self.n_params
    }
    fn n_residuals(&self) -> usize {
        self.x.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let w = self.weights.map_or(1.0, |w| w[k]);
            *o = w * ((self.model)(self.x[k], p) - self.y[k]);
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let mut g = vec![0.0; self.n_params];
        for k in 0..self.x.len() {
            (self.gradient)(self.x[k], p, &mut g);
            let w = self.weights.map_or(1.0, |w| w[k]);
            for j in 0..self.n_params {
                jac[(k, j)] = w * g[j];
            }
        }
    }
}

/// Affine normalization of a trace to O(1) coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Normalization {
    pub x0: f64,
    pub xs: f64,
    pub y0: f64,
    pub ys: f64,
}

impl Normalization {
    pub fn of(x: &[f64], y: &[f64], center_x: bool) -> Self {
        let (xmin, xmax) = min_max(x);
        let (ymin, ymax) = min_max(y);
        let xs = if xmax > xmin { xmax - xmin } else { xmax.abs().max(1.0) };
        let ys = if ymax > ymin { ymax - ymin } else { ymax.abs().max(1.0) };
        Self {
            x0: if center_x { 0.5 * (xmin + xmax) } else { 0.0 },
            xs,
            y0: 0.5 * (ymin + ymax),
            ys,
        }
    }

    pub fn x(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| (x - self.x0) / self.xs).collect()
    }

    pub fn y(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|y| (y - self.y0) / self.ys).collect()
    }
}

pub(crate) fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

/// Per-point weights `ys/σ` for residuals expressed in normalized y units.
pub(crate) fn weights(trace: &Trace, ys: f64) -> Option<Vec<f64>> {
    trace
        .sigma
        .as_ref()
        .map(|s| s.iter().map(|sig| ys / sig).collect())
}

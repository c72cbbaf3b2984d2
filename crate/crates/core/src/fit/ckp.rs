//! Joint fit of the qubit frequency versus cavity-drive frequency, measured
//! with the qubit in |g⟩ and in |e⟩.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{least_squares, Bounds, FitError, FitResult, LsqOptions, LsqSolution, Residuals, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkpModel {
    /// Undriven qubit frequency, Hz.
    pub omega01: f64,
    /// Signed dispersive shift, Hz.
    pub chi: f64,
    /// Cavity linewidth, Hz.
    pub kappa: f64,
    /// Bare cavity frequency, Hz.
    pub omega_r: f64,
    /// Drive strength squared, Hz; n̄(ω_d) = κ·amp2 / ((κ/2)² + Δ²).
    pub amp2: f64,
}

impl CkpModel {
    /// Intra-cavity photon number at drive frequency `omega_d` with the
    /// qubit in |e⟩ (`excited`) or |g⟩.
    pub fn nbar(&self, omega_d: f64, excited: bool) -> f64 {
        let pull = if excited { self.chi } else { -self.chi };
        let delta = omega_d - (self.omega_r + pull);
        self.kappa * self.amp2 / (0.25 * self.kappa * self.kappa + delta * delta)
    }

    /// Stark-shifted qubit frequency ω01 + 2χ n̄(ω_d).
    pub fn qubit_frequency(&self, omega_d: f64, excited: bool) -> f64 {
        self.omega01 + 2.0 * self.chi * self.nbar(omega_d, excited)
    }

    fn to_array(self) -> [f64; 5] {
        [self.omega01, self.chi, self.kappa, self.omega_r, self.amp2]
    }
}

/// Model value for one trace; the |g⟩ trace is pulled to ω_r − χ and the
/// |e⟩ trace to ω_r + χ.
pub fn ckp_model(omega_d: f64, model: &CkpModel, excited: bool) -> f64 {
    model.qubit_frequency(omega_d, excited)
}

fn value_and_gradient(x: f64, p: &[f64], excited: bool, g: Option<&mut [f64]>) -> f64 {
    let (w01, chi, kappa, wr, a) = (p[0], p[1], p[2], p[3], p[4]);
    let sgn = if excited { -1.0 } else { 1.0 };
    let delta = x - wr + sgn * chi;
    let d = 0.25 * kappa * kappa + delta * delta;
    let s = 2.0 * chi * kappa * a / d;
    if let Some(g) = g {
        g[0] = 1.0;
        g[1] = 2.0 * kappa * a / d - s / d * 2.0 * delta * sgn;
        g[2] = 2.0 * chi * a / d - s / d * 0.5 * kappa;
        g[3] = 2.0 * s * delta / d;
        g[4] = 2.0 * chi * kappa / d;
    }
    w01 + s
}

struct JointProblem {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    /// Index where the |e⟩ trace starts.
    split: usize,
}

impl Residuals for JointProblem {
    fn n_params(&self) -> usize {
        5
    }
    fn n_residuals(&self) -> usize {
        self.x.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for k in 0..self.x.len() {
            out[k] = self.w[k] * (value_and_gradient(self.x[k], p, k >= self.split, None) - self.y[k]);
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let mut g = [0.0; 5];
        for k in 0..self.x.len() {
            value_and_gradient(self.x[k], p, k >= self.split, Some(&mut g));
            for j in 0..5 {
                jac[(k, j)] = self.w[k] * g[j];
            }
        }
    }
}

/// Fits one parameter set to both traces. Reported parameters: `omega01`,
/// `chi`, `kappa`, `omega_r`, `amp2`. `amp2` is not sign-constrained, so
/// exchanging the traces yields exactly −χ; a negative `amp2` (unphysical
/// photon number) is reported in `flags`.
pub fn ckp_joint_fit(
    trace_g: &Trace,
    trace_e: &Trace,
    init: &CkpModel,
) -> Result<FitResult, FitError> {
    for t in [trace_g, trace_e] {
        t.validate()
            .map_err(|e| FitError::InvalidInput(e.to_string()))?;
        if t.len() < 3 {
            return Err(FitError::InvalidInput("each CKP trace needs at least 3 points".into()));
        }
    }
    if !(init.kappa > 0.0) {
        return Err(FitError::InvalidInput("initial kappa must be positive".into()));
    }
    // Work in units of the initial linewidth about the initial frequencies.
    let scale = init.kappa;
    let x0 = init.omega_r;
    let y0 = init.omega01;
    let mut x = Vec::with_capacity(trace_g.len() + trace_e.len());
    let mut y = Vec::with_capacity(x.capacity());
    let mut w = Vec::with_capacity(x.capacity());
    let weighted = trace_g.sigma.is_some();
    if weighted != trace_e.sigma.is_some() {
        return Err(FitError::InvalidInput(
            "either both CKP traces carry sigma or neither does".into(),
        ));
    }
    for t in [trace_g, trace_e] {
        for i in 0..t.len() {
            x.push((t.x[i] - x0) / scale);
            y.push((t.y[i] - y0) / scale);
            w.push(t.sigma.as_ref().map_or(1.0, |s| scale / s[i]));
        }
    }
    let problem = JointProblem {
        x,
        y,
        w,
        split: trace_g.len(),
    };
    let p0 = init.to_array();
    let start = [
        (p0[0] - y0) / scale,
        p0[1] / scale,
        p0[2] / scale,
        (p0[3] - x0) / scale,
        p0[4] / scale,
    ];
    let mirrored = [start[0], -start[1], start[2], start[3], -start[4]];
    let mut lower = vec![f64::NEG_INFINITY; 5];
    lower[2] = 1e-6;
    let bounds = Bounds {
        lower,
        upper: vec![f64::INFINITY; 5],
    };
    let options = LsqOptions::default();
    // The label-mirrored start makes the result independent of which sign of
    // χ the caller guessed.
    let mut best: Option<LsqSolution> = None;
    let mut last_err = None;
    for s in [start, mirrored] {
        match least_squares(&problem, &s, Some(&bounds), &options) {
            Ok(sol) => {
                if best
                    .as_ref()
                    .is_none_or(|b| sol.residual_norm() < b.residual_norm())
                {
                    best = Some(sol);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let sol = match best {
        Some(s) => s,
        None => return Err(last_err.expect("at least one start ran")),
    };
    let mut result = FitResult::from_affine(
        &["omega01", "chi", "kappa", "omega_r", "amp2"],
        &[y0, 0.0, 0.0, x0, 0.0],
        &[scale; 5],
        &sol,
        if weighted { 1.0 } else { scale },
    );
    if result.get("chi").abs() <= 2.0 * result.std_error("chi") {
        result.flags.push("chi consistent with zero".into());
    }
    if result.get("amp2") < 0.0 {
        result
            .flags
            .push("stark sign inconsistent: amp2 < 0 (traces exchanged?)".into());
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{GHZ, MHZ};

    fn truth() -> CkpModel {
        CkpModel {
            omega01: 5.36 * GHZ,
            chi: -0.94 * MHZ,
            kappa: 11.28 * MHZ,
            omega_r: 20.92 * GHZ,
            amp2: 25.0 * MHZ,
        }
    }

    fn traces(m: &CkpModel) -> (Trace, Trace) {
        let x: Vec<f64> = (0..101)
            .map(|i| m.omega_r - 2.0 * m.kappa + 4.0 * m.kappa * i as f64 / 100.0)
            .collect();
        (
            Trace::from_fn(x.clone(), |v| ckp_model(v, m, false)).unwrap(),
            Trace::from_fn(x, |v| ckp_model(v, m, true)).unwrap(),
        )
    }

    fn guess(m: &CkpModel) -> CkpModel {
        CkpModel {
            omega01: m.omega01 + 0.3 * MHZ,
            chi: -0.5 * MHZ,
            kappa: 9.0 * MHZ,
            omega_r: m.omega_r + 1.0 * MHZ,
            amp2: 10.0 * MHZ,
        }
    }

    #[test]
    fn noiseless_round_trip() {
        let m = truth();
        let (g, e) = traces(&m);
        let fit = ckp_joint_fit(&g, &e, &guess(&m)).unwrap();
        assert!((fit.get("chi") / m.chi - 1.0).abs() < 1e-6);
        assert!((fit.get("kappa") / m.kappa - 1.0).abs() < 1e-6);
        assert!((fit.get("omega_r") - m.omega_r).abs() < 1e-6 * m.kappa);
        assert!((fit.get("omega01") - m.omega01).abs() < 1e-6 * m.kappa);
        assert!((fit.get("amp2") / m.amp2 - 1.0).abs() < 1e-6);
        assert!(fit.flags.is_empty(), "{:?}", fit.flags);
    }

    #[test]
    fn exchanging_traces_negates_chi() {
        let m = truth();
        let (g, e) = traces(&m);
        let a = ckp_joint_fit(&g, &e, &guess(&m)).unwrap();
        let b = ckp_joint_fit(&e, &g, &guess(&m)).unwrap();
        assert!((a.get("chi") + b.get("chi")).abs() < 1e-6 * m.chi.abs());
        assert!((a.get("kappa") / b.get("kappa") - 1.0).abs() < 1e-6);
        assert!((a.get("omega_r") - b.get("omega_r")).abs() < 1e-6 * m.kappa);
        assert!(b.has_flag("stark sign inconsistent"));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = [0.1, -0.08, 1.0, 0.05, 2.0];
        let mut g = [0.0; 5];
        for excited in [false, true] {
            for x in [-1.3, 0.0, 0.7] {
                value_and_gradient(x, &p, excited, Some(&mut g));
                for j in 0..5 {
                    let h = 1e-6;
                    let mut a = p;
                    let mut b = p;
                    a[j] += h;
                    b[j] -= h;
                    let fd = (value_and_gradient(x, &a, excited, None)
                        - value_and_gradient(x, &b, excited, None))
                        / (2.0 * h);
                    assert!((fd - g[j]).abs() < 1e-7 * (1.0 + g[j].abs()), "{j}");
                }
            }
        }
    }
}

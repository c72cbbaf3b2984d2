//! Damped Gauss-Newton (Levenberg-Marquardt) least squares with box bounds.
//!
//! Minimizes `½‖r(p)‖²`. Damping follows Nielsen's gain-ratio update with
//! Marquardt's diagonal scaling (running maximum of the column norms of `J`,
//! as in MINPACK), so the iteration is invariant to the units each parameter
//! happens to be expressed in.

use nalgebra::{DMatrix, DVector};

use super::FitError;

/// A residual vector and, optionally, its Jacobian.
pub trait Residuals {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]);

    /// Fills the `n_residuals × n_params` Jacobian. The default uses central
    /// differences with a relative step.
    fn jacobian(&self, params: &[f64], jac: &mut DMatrix<f64>) {
        finite_difference_jacobian(self, params, jac);
    }
}

pub fn finite_difference_jacobian<R: Residuals + ?Sized>(
    problem: &R,
    params: &[f64],
    jac: &mut DMatrix<f64>,
) {
    let m = problem.n_residuals();
    let mut p = params.to_vec();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for j in 0..params.len() {
        let h = f64::EPSILON.cbrt() * params[j].abs().max(1e-8);
        p[j] = params[j] + h;
        problem.residuals(&p, &mut plus);
        p[j] = params[j] - h;
        problem.residuals(&p, &mut minus);
        p[j] = params[j];
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    fn project(&self, p: &mut [f64]) {
        for (x, (lo, hi)) in p.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Tolerance on the scaled gradient (cosine between `r` and each column of `J`).
    pub gradient_tolerance: f64,
    /// Tolerance on the scaled step relative to the scaled parameter vector.
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-8,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient and step both below tolerance.
    Converged,
    /// Residual vanished to within rounding.
    ExactFit,
    /// Damping grew without bound while the gradient stayed small: the
    /// minimum is resolved to machine precision.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl LsqSolution {
    pub fn converged(&self) -> bool {
        !matches!(self.termination, Termination::MaxIterations)
    }

    pub fn residual_norm(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum::<f64>().sqrt()
    }

    /// Parameter covariance `s²(JᵀJ)⁺` with `s² = ‖r‖²/(m − n)`. Unidentifiable
    /// directions get zero variance from the pseudo-inverse; callers that
    /// care should inspect [`LsqSolution::rank`].
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.residuals.len();
        let n = self.params.len();
        let dof = m.saturating_sub(n);
        let s2 = if dof > 0 {
            self.residuals.iter().map(|r| r * r).sum::<f64>() / dof as f64
        } else {
            0.0
        };
        let jtj = self.jacobian.transpose() * &self.jacobian;
        let inv = pseudo_inverse_symmetric(&jtj);
        let mut cov = inv * s2;
        // Symmetrize rounding noise away.
        for i in 0..n {
            for j in 0..i {
                let a = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = a;
                cov[(j, i)] = a;
            }
        }
        cov
    }

    pub fn rank(&self) -> usize {
        let jtj = self.jacobian.transpose() * &self.jacobian;
        let eig = jtj.symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        eig.eigenvalues
            .iter()
            .filter(|&&v| v > max * 1e-14 * self.params.len() as f64)
            .count()
    }
}

fn pseudo_inverse_symmetric(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = max * 1e-14 * n as f64;
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam > cutoff {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / lam;
        }
    }
    inv
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Runs Levenberg-Marquardt from `init`. `init` must lie within `bounds`.
pub fn least_squares<R: Residuals + ?Sized>(
    problem: &R,
    init: &[f64],
    bounds: Option<&Bounds>,
    options: &LsqOptions,
) -> Result<LsqSolution, FitError> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    if init.len() != n {
        return Err(FitError::InvalidInput(format!(
            "expected {n} initial parameters, got {}",
            init.len()
        )));
    }
    if m == 0 {
        return Err(FitError::InvalidInput("no residuals".into()));
    }
    if let Some(b) = bounds {
        if b.lower.len() != n || b.upper.len() != n {
            return Err(FitError::InvalidInput("bounds length mismatch".into()));
        }
        if !b.contains(init) {
            return Err(FitError::InvalidInput("initial parameters outside bounds".into()));
        }
    }

    let mut p = init.to_vec();
    let mut r = vec![0.0; m];
    problem.residuals(&p, &mut r);
    if r.iter().any(|x| !x.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let mut cost = sum_sq(&r);
    let mut jac = DMatrix::zeros(m, n);
    problem.jacobian(&p, &mut jac);

    let mut scale = vec![0.0f64; n];
    let mut lambda = options.initial_damping;
    let mut nu = 2.0;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut iterations = 0;

    let finish = |p: Vec<f64>, r: Vec<f64>, jac: DMatrix<f64>, iterations, termination| {
        Ok(LsqSolution {
            params: p,
            residuals: r,
            jacobian: jac,
            iterations,
            termination,
        })
    };

    let exact_floor = |r: &[f64], jac: &DMatrix<f64>, p: &[f64]| {
        // Residual indistinguishable from rounding of the model values.
        let jscale: f64 = jac.iter().map(|x| x.abs()).fold(0.0, f64::max)
            * p.iter().map(|x| x.abs()).fold(0.0, f64::max);
        sum_sq(r).sqrt() <= 1e-14 * jscale.max(f64::MIN_POSITIVE) * (r.len() as f64).sqrt()
    };

    if cost == 0.0 {
        return finish(p, r, jac, 0, Termination::ExactFit);
    }

    while iterations < options.max_iterations {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let rv = DVector::from_column_slice(&r);
        let grad = &jt * &rv;

        let rnorm = cost.sqrt();
        let mut gmax: f64 = 0.0;
        for j in 0..n {
            let cn = jac.column(j).norm();
            scale[j] = scale[j].max(cn * cn);
            if cn > 0.0 && rnorm > 0.0 {
                gmax = gmax.max(grad[j].abs() / (cn * rnorm));
            }
        }
        if rnorm == 0.0 || exact_floor(&r, &jac, &p) {
            return finish(p, r, jac, iterations, Termination::ExactFit);
        }

        // Inner loop: find an acceptable damped step.
        let mut accepted = false;
        let mut step_small = false;
        loop {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lambda * scale[j].max(1e-300);
            }
            let delta = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    // Singular normal equations: retry with heavier damping.
                    lambda *= nu;
                    nu *= 2.0;
                    if lambda > 1e20 {
                        break;
                    }
                    continue;
                }
            };
            for j in 0..n {
                trial[j] = p[j] + delta[j];
            }
            if let Some(b) = bounds {
                b.project(&mut trial);
            }
            let step: Vec<f64> = (0..n).map(|j| trial[j] - p[j]).collect();
            let dnorm: f64 = (0..n)
                .map(|j| scale[j] * step[j] * step[j])
                .sum::<f64>()
                .sqrt();
            let pnorm: f64 = (0..n)
                .map(|j| scale[j] * p[j] * p[j])
                .sum::<f64>()
                .sqrt();
            step_small = dnorm <= options.step_tolerance * (pnorm + options.step_tolerance);

            problem.residuals(&trial, &mut r_trial);
            let new_cost = if r_trial.iter().all(|x| x.is_finite()) {
                sum_sq(&r_trial)
            } else {
                f64::INFINITY
            };
            // Predicted reduction of the linear model for the (projected) step.
            let sv = DVector::from_column_slice(&step);
            let js = &jac * &sv;
            let predicted = cost - (rv.clone() + js).norm_squared();
            let actual = cost - new_cost;
            if predicted > 0.0 && actual > 0.0 {
                let rho = actual / predicted;
                p.copy_from_slice(&trial);
                r.copy_from_slice(&r_trial);
                cost = new_cost;
                lambda *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                accepted = true;
                break;
            }
            if step_small {
                break;
            }
            lambda *= nu;
            nu *= 2.0;
            if lambda > 1e20 {
                break;
            }
        }

        if accepted {
            problem.jacobian(&p, &mut jac);
            if step_small && gradient_small(&jac, &r, options.gradient_tolerance) {
                return finish(p, r, jac, iterations, Termination::Converged);
            }
            if cost == 0.0 {
                return finish(p, r, jac, iterations, Termination::ExactFit);
            }
        } else {
            // No decrease possible: either at the minimum to machine precision
            // or stuck on a degenerate problem.
            let term = if gmax <= options.gradient_tolerance.sqrt() || step_small {
                Termination::Stalled
            } else {
                Termination::MaxIterations
            };
            if term == Termination::MaxIterations {
                return Err(FitError::NotConverged {
                    iterations,
                    reason: "damping diverged with a non-vanishing gradient".into(),
                });
            }
            return finish(p, r, jac, iterations, term);
        }
    }
    Err(FitError::NotConverged {
        iterations,
        reason: "iteration limit reached".into(),
    })
}

fn gradient_small(jac: &DMatrix<f64>, r: &[f64], tol: f64) -> bool {
    let rnorm = sum_sq(r).sqrt();
    if rnorm == 0.0 {
        return true;
    }
    let rv = DVector::from_column_slice(r);
    (0..jac.ncols()).all(|j| {
        let col = jac.column(j);
        let cn = col.norm();
        cn == 0.0 || (col.dot(&rv)).abs() / (cn * rnorm) <= tol
    })
}

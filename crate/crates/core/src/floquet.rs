//! Floquet analysis of a transmon under a classical charge drive
//! H(t) = H₀ + A cos(2π f_d t) n̂, in the full charge basis.
//!
//! The one-period propagator is built from a fourth-order commutator-free
//! Magnus scheme (two exponentials per step at the Gauss points). Because
//! the drive is even about T/2 and H is real symmetric, the second half of
//! the period is the transpose of the first: U(T) = Pᵀ P with P = U(T/2).

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transmon::{
    charge_diagonal, diagonalize_levels, sorted_eigensystem, TransmonError, TransmonParams,
    DEFAULT_LEVELS,
};

pub type C64 = Complex<f64>;

pub const DEFAULT_STEPS: usize = 128;
pub const MIN_STEPS: usize = 64;
pub const MAX_STEPS: usize = 8192;
pub const DEFAULT_BRANCHES: usize = 12;
const UNITARITY_TOL: f64 = 1e-9;
/// Eigenphase change allowed under step doubling, relative to f_d.
const STEP_TOL: f64 = 1e-8;
const DEGENERACY_TOL: f64 = 1e-12;
pub const CONFIDENCE_FLOOR: f64 = 0.5;
const REFINE_POINTS: usize = 21;

#[derive(Debug, Error)]
pub enum FloquetError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Transmon(#[from] TransmonError),
    #[error("propagator unitarity defect {defect:.3e}")]
    NotUnitary { defect: f64 },
    #[error("eigenphases still move by {change:.3e}·f_d at {n_steps} steps")]
    NotConverged { n_steps: usize, change: f64 },
    #[error("eigen-decomposition of the propagator failed")]
    Eigen,
    #[error("cannot bracket a Stark shift of {target:.6e} Hz (reached {reached:.6e} Hz at amplitude {amplitude:.6e} Hz)")]
    Bracketing {
        target: f64,
        reached: f64,
        amplitude: f64,
    },
    #[error("branches {i} and {j} have no interior gap minimum on this grid")]
    NoLocalMinimum { i: usize, j: usize },
    #[error("branch {0} not tracked in this sweep")]
    MissingBranch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    /// Coefficient of cos(2π f_d t) n̂, Hz.
    pub amplitude: f64,
    /// Drive frequency f_d, Hz.
    pub omega_d: f64,
}

impl DriveConfig {
    /// Amplitude 2g√n̄ from a coupling and a cavity photon number.
    pub fn from_photons(g: f64, nbar: f64, omega_d: f64) -> Self {
        Self {
            amplitude: 2.0 * g * nbar.sqrt(),
            omega_d,
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.omega_d
    }

    pub fn validate(&self) -> Result<(), FloquetError> {
        if !(self.omega_d > 0.0 && self.omega_d.is_finite()) {
            return Err(FloquetError::InvalidInput(format!("omega_d = {}", self.omega_d)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(FloquetError::InvalidInput(format!("amplitude = {}", self.amplitude)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Fourth-order commutator-free Magnus.
    #[default]
    Cf4,
    /// Piecewise-constant drive sampled at step midpoints (second order).
    Midpoint,
}

/// Folds `e` into [−f_d/2, f_d/2).
pub fn fold(e: f64, omega_d: f64) -> f64 {
    let r = e - omega_d * (e / omega_d + 0.5).floor();
    if r >= 0.5 * omega_d {
        r - omega_d
    } else {
        r
    }
}

/// Static problem in a fixed charge basis: H₀ shifted so the ground energy
/// is 0, its eigenbasis, and n̂.
struct StaticProblem {
    h0: DMatrix<f64>,
    energies: Vec<f64>,
    states: DMatrix<f64>,
    charge: DVector<f64>,
}

impl StaticProblem {
    fn new(params: &TransmonParams) -> Self {
        let mut h0 = params.hamiltonian();
        let (mut energies, states) = sorted_eigensystem(h0.clone());
        let e0 = energies[0];
        for k in 0..h0.nrows() {
            h0[(k, k)] -= e0;
        }
        energies.iter_mut().for_each(|e| *e -= e0);
        Self {
            h0,
            energies,
            states,
            charge: charge_diagonal(params.n_cut),
        }
    }

    fn dim(&self) -> usize {
        self.h0.nrows()
    }

    /// exp(−2πi·dt·(w·H₀ + c·n̂)).
    fn step(&self, dt: f64, w: f64, c: f64) -> DMatrix<C64> {
        let mut h = &self.h0 * w;
        for k in 0..self.dim() {
            h[(k, k)] += c * self.charge[k];
        }
        let SymmetricEigen {
            eigenvalues,
            eigenvectors,
        } = SymmetricEigen::new(h);
        let v = eigenvectors.map(C64::from);
        let mut dv = v.transpose();
        for (r, lambda) in eigenvalues.iter().enumerate() {
            let phase = C64::from_polar(1.0, -2.0 * PI * dt * lambda);
            for x in dv.row_mut(r).iter_mut() {
                *x *= phase;
            }
        }
        v * dv
    }

    fn half_period(&self, drive: &DriveConfig, n_steps: usize, scheme: Scheme) -> DMatrix<C64> {
        let period = drive.period();
        let dt = period / n_steps as f64;
        let cosine = |t: f64| drive.amplitude * (2.0 * PI * drive.omega_d * t).cos();
        let mut p = DMatrix::<C64>::identity(self.dim(), self.dim());
        for k in 0..n_steps / 2 {
            let t = k as f64 * dt;
            match scheme {
                Scheme::Midpoint => {
                    p = self.step(dt, 1.0, cosine(t + 0.5 * dt)) * p;
                }
                Scheme::Cf4 => {
                    let r3 = 3f64.sqrt();
                    let (c1, c2) = (0.5 - r3 / 6.0, 0.5 + r3 / 6.0);
                    let (a1, a2) = ((3.0 - 2.0 * r3) / 12.0, (3.0 + 2.0 * r3) / 12.0);
                    let (f1, f2) = (cosine(t + c1 * dt), cosine(t + c2 * dt));
                    p = self.step(dt, 0.5, a2 * f1 + a1 * f2) * p;
                    p = self.step(dt, 0.5, a1 * f1 + a2 * f2) * p;
                }
            }
        }
        p
    }

    fn propagator(
        &self,
        drive: &DriveConfig,
        n_steps: usize,
        scheme: Scheme,
    ) -> Result<DMatrix<C64>, FloquetError> {
        let p = self.half_period(drive, n_steps, scheme);
        let u = p.transpose() * p;
        let defect = unitarity_defect(&u);
        if !(defect < UNITARITY_TOL) {
            return Err(FloquetError::NotUnitary { defect });
        }
        Ok(u)
    }

    /// Overlap |⟨k|v⟩|² with the undriven eigenstate k.
    fn weight(&self, k: usize, v: &DVector<C64>) -> f64 {
        self.states
            .column(k)
            .iter()
            .zip(v.iter())
            .map(|(a, b)| b * *a)
            .sum::<C64>()
            .norm_sqr()
    }
}

/// Charge basis used for Floquet problems: the truncation that converges
/// the static spectrum, and never below the requested one.
fn floquet_params(params: &TransmonParams) -> Result<TransmonParams, FloquetError> {
    let converged = diagonalize_levels(params, DEFAULT_LEVELS)?;
    let mut p = *params;
    p.n_cut = p.n_cut.max(converged.params.n_cut);
    Ok(p)
}

fn check_steps(n_steps: usize) -> Result<(), FloquetError> {
    if n_steps < MIN_STEPS || n_steps % 2 != 0 {
        return Err(FloquetError::InvalidInput(format!(
            "n_steps = {n_steps} (must be even and at least {MIN_STEPS})"
        )));
    }
    Ok(())
}

/// max |(U†U − I)_ij|.
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let mut g = u.adjoint() * u;
    for k in 0..g.nrows() {
        g[(k, k)] -= C64::from(1.0);
    }
    g.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// One-period propagator with the fourth-order scheme, in the charge basis
/// of `params` (index k ↔ charge k − n_cut).
pub fn period_propagator(
    params: &TransmonParams,
    drive: &DriveConfig,
    n_steps: usize,
) -> Result<DMatrix<C64>, FloquetError> {
    period_propagator_with(params, drive, n_steps, Scheme::Cf4)
}

pub fn period_propagator_with(
    params: &TransmonParams,
    drive: &DriveConfig,
    n_steps: usize,
    scheme: Scheme,
) -> Result<DMatrix<C64>, FloquetError> {
    params.validate()?;
    drive.validate()?;
    check_steps(n_steps)?;
    StaticProblem::new(params).propagator(drive, n_steps, scheme)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quasienergies {
    /// Ascending, in [−f_d/2, f_d/2).
    pub energies: Vec<f64>,
    /// Floquet states at t = 0, one column per quasienergy.
    pub states: DMatrix<C64>,
    /// Index pairs whose eigenphases are closer than the resolution limit.
    pub degenerate: Vec<(usize, usize)>,
}

/// ε = −arg(λ)/(2πT) for each eigenvalue λ of the one-period propagator.
pub fn quasienergies(u: &DMatrix<C64>, omega_d: f64) -> Result<Quasienergies, FloquetError> {
    if !u.is_square() || u.nrows() == 0 {
        return Err(FloquetError::InvalidInput("propagator must be square".into()));
    }
    if !(omega_d > 0.0) {
        return Err(FloquetError::InvalidInput(format!("omega_d = {omega_d}")));
    }
    let defect = unitarity_defect(u);
    if !(defect < UNITARITY_TOL) {
        return Err(FloquetError::NotUnitary { defect });
    }
    let (q, t) = Schur::try_new(u.clone(), 1e-15, 10_000)
        .ok_or(FloquetError::Eigen)?
        .unpack();
    let raw: Vec<f64> = (0..t.nrows())
        .map(|k| fold(-t[(k, k)].arg() * omega_d / (2.0 * PI), omega_d))
        .collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let energies: Vec<f64> = order.iter().map(|&k| raw[k]).collect();
    let states = DMatrix::from_fn(q.nrows(), q.ncols(), |r, c| q[(r, order[c])]);
    let mut degenerate = Vec::new();
    let n = energies.len();
    for k in 0..n {
        let next = (k + 1) % n;
        if next == k {
            break;
        }
        let d = fold(energies[next] - energies[k], omega_d).abs();
        if d < DEGENERACY_TOL * omega_d && !degenerate.contains(&(next.min(k), next.max(k))) {
            degenerate.push((k.min(next), k.max(next)));
        }
    }
    Ok(Quasienergies {
        energies,
        states,
        degenerate,
    })
}

/// Largest circular distance from each value of `a` to its nearest value in `b`.
fn phase_change(a: &[f64], b: &[f64], omega_d: f64) -> f64 {
    a.iter()
        .map(|x| {
            b.iter()
                .map(|y| fold(x - y, omega_d).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

fn solve(
    problem: &StaticProblem,
    drive: &DriveConfig,
    n_steps: usize,
) -> Result<Quasienergies, FloquetError> {
    quasienergies(&problem.propagator(drive, n_steps, Scheme::Cf4)?, drive.omega_d)
}

/// Doubles the step count from `start` until no eigenphase moves by more
/// than 1e-8·f_d; returns the accepted (smaller) count and its quasienergies.
fn converged_steps(
    problem: &StaticProblem,
    drive: &DriveConfig,
    start: usize,
) -> Result<(usize, Quasienergies), FloquetError> {
    let mut n = start;
    let mut current = solve(problem, drive, n)?;
    loop {
        if 2 * n > MAX_STEPS {
            return Err(FloquetError::NotConverged {
                n_steps: n,
                change: f64::NAN,
            });
        }
        let next = solve(problem, drive, 2 * n)?;
        let change = phase_change(&current.energies, &next.energies, drive.omega_d) / drive.omega_d;
        if change <= STEP_TOL {
            return Ok((n, current));
        }
        if 4 * n > MAX_STEPS {
            return Err(FloquetError::NotConverged {
                n_steps: 2 * n,
                change,
            });
        }
        n *= 2;
        current = next;
    }
}

/// Quasienergies with the step count chosen by doubling from [`DEFAULT_STEPS`].
pub fn converged_quasienergies(
    params: &TransmonParams,
    drive: &DriveConfig,
) -> Result<(usize, Quasienergies), FloquetError> {
    params.validate()?;
    drive.validate()?;
    converged_steps(&StaticProblem::new(params), drive, DEFAULT_STEPS)
}

/// Index of the Floquet state with the largest weight on undriven state `k`.
fn label(problem: &StaticProblem, q: &Quasienergies, k: usize) -> usize {
    (0..q.energies.len())
        .map(|m| (m, problem.weight(k, &q.states.column(m).into_owned())))
        .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
        .0
}

fn stark_of(problem: &StaticProblem, drive: &DriveConfig, n_steps: usize) -> Result<f64, FloquetError> {
    let q = solve(problem, drive, n_steps)?;
    let (m0, m1) = (label(problem, &q, 0), label(problem, &q, 1));
    let bare = problem.energies[1] - problem.energies[0];
    Ok(fold(q.energies[m1] - q.energies[m0] - bare, drive.omega_d))
}

/// Drive-induced shift of the 0–1 transition, (ε₁ − ε₀) − (E₁ − E₀) folded
/// into the canonical window, with Floquet states labeled by their largest
/// undriven overlap. Signed (negative when the transition is pushed down).
pub fn stark_shift(
    params: &TransmonParams,
    drive: &DriveConfig,
    n_steps: usize,
) -> Result<f64, FloquetError> {
    params.validate()?;
    drive.validate()?;
    check_steps(n_steps)?;
    let p = floquet_params(params)?;
    stark_of(&StaticProblem::new(&p), drive, n_steps)
}

/// Second-order estimate: the 0–1 shift is (A/2)²·S with
/// S = Σ_i |n_1i|² 2ω_1i/(ω_1i² − f_d²) − Σ_i |n_0i|² 2ω_0i/(ω_0i² − f_d²),
/// ω_ji = E_j − E_i.
fn perturbative_coefficient(problem: &StaticProblem, omega_d: f64) -> f64 {
    let level = |j: usize| -> f64 {
        let vj = problem.states.column(j);
        (0..problem.dim())
            .filter(|&i| i != j)
            .map(|i| {
                let vi = problem.states.column(i);
                let n_ij: f64 = (0..problem.dim())
                    .map(|k| vj[k] * problem.charge[k] * vi[k])
                    .sum();
                let w = problem.energies[j] - problem.energies[i];
                n_ij * n_ij * 2.0 * w / (w * w - omega_d * omega_d)
            })
            .sum()
    };
    level(1) - level(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub amplitude: f64,
    /// Achieved (signed) Stark shift, Hz.
    pub stark: f64,
    pub evaluations: usize,
}

/// Drive amplitude whose Stark shift magnitude equals `target_stark`
/// (Hz, ≥ 0) to 0.1%, evaluated at the offset charge of `params`.
pub fn calibrate_drive_amplitude(
    params: &TransmonParams,
    omega_d: f64,
    target_stark: f64,
) -> Result<Calibration, FloquetError> {
    params.validate()?;
    DriveConfig {
        amplitude: 0.0,
        omega_d,
    }
    .validate()?;
    if !(target_stark >= 0.0 && target_stark.is_finite()) {
        return Err(FloquetError::InvalidInput(format!("target_stark = {target_stark}")));
    }
    if target_stark == 0.0 {
        return Ok(Calibration {
            amplitude: 0.0,
            stark: 0.0,
            evaluations: 0,
        });
    }
    let p = floquet_params(params)?;
    let problem = StaticProblem::new(&p);
    let mut evaluations = 0;
    let mut shift = |a: f64| -> Result<f64, FloquetError> {
        evaluations += 1;
        stark_of(
            &problem,
            &DriveConfig {
                amplitude: a,
                omega_d,
            },
            DEFAULT_STEPS,
        )
    };
    let s = perturbative_coefficient(&problem, omega_d).abs();
    let guess = if s > 0.0 {
        2.0 * (target_stark / s).sqrt()
    } else {
        omega_d * 1e-3
    };
    // Work in x = A², where the shift is close to linear.
    let mut lo = (0.0, -target_stark);
    let mut a = guess;
    let mut hi = None;
    for _ in 0..40 {
        let st = shift(a)?;
        let r = st.abs() - target_stark;
        if r.abs() <= 1e-3 * target_stark {
            return Ok(Calibration {
                amplitude: a,
                stark: st,
                evaluations,
            });
        }
        if r > 0.0 {
            hi = Some((a * a, r));
            break;
        }
        lo = (a * a, r);
        a *= 1.5;
        if a > 10.0 * omega_d {
            return Err(FloquetError::Bracketing {
                target: target_stark,
                reached: st.abs(),
                amplitude: a / 1.5,
            });
        }
    }
    let Some(mut hi) = hi else {
        return Err(FloquetError::Bracketing {
            target: target_stark,
            reached: f64::NAN,
            amplitude: a,
        });
    };
    // Illinois regula falsi on A².
    let mut side = 0i8;
    for _ in 0..60 {
        let x = (lo.0 * hi.1 - hi.0 * lo.1) / (hi.1 - lo.1);
        let a = x.sqrt();
        let st = shift(a)?;
        let r = st.abs() - target_stark;
        if r.abs() <= 1e-3 * target_stark {
            return Ok(Calibration {
                amplitude: a,
                stark: st,
                evaluations,
            });
        }
        if r > 0.0 {
            hi = (x, r);
            if side == 1 {
                lo.1 *= 0.5;
            }
            side = 1;
        } else {
            lo = (x, r);
            if side == -1 {
                hi.1 *= 0.5;
            }
            side = -1;
        }
    }
    Err(FloquetError::Bracketing {
        target: target_stark,
        reached: f64::NAN,
        amplitude: hi.0.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasienergySweep {
    pub ng_grid: Vec<f64>,
    /// `branches[b][k]`: quasienergy (Hz, canonical window) of branch b,
    /// labeled by undriven state b at the first grid point.
    pub branches: Vec<Vec<f64>>,
    /// `overlaps[b][k]`: overlap of branch b's state with its state at the
    /// previous grid point (with the undriven state at k = 0).
    pub overlaps: Vec<Vec<f64>>,
    /// (branch, grid index) pairs assigned with confidence below 0.5.
    pub ambiguous: Vec<(usize, usize)>,
    pub params: TransmonParams,
    pub drive: DriveConfig,
    pub n_steps: usize,
    #[serde(skip)]
    states: Vec<Vec<State>>,
}

impl QuasienergySweep {
    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Rows `ng,branch_index,quasienergy_hz,overlap_confidence`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["ng", "branch_index", "quasienergy_hz", "overlap_confidence"])?;
        for (k, ng) in self.ng_grid.iter().enumerate() {
            for b in 0..self.branches.len() {
                w.serialize((ng, b, self.branches[b][k], self.overlaps[b][k]))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Charge-basis state at a given offset charge. The Hamiltonian reduces n_g
/// to [−1/2, 1/2), so basis index k holds absolute charge k − n_cut + shift
/// with shift = round(n_g); overlaps across grid points realign by charge.
#[derive(Debug, Clone, PartialEq)]
struct State {
    vector: DVector<C64>,
    shift: i64,
}

fn overlap(a: &State, b: &State) -> f64 {
    let d = b.shift - a.shift;
    let n = a.vector.len() as i64;
    (0..n)
        .filter_map(|k| {
            let ka = k + d;
            (0..n).contains(&ka).then(|| a.vector[ka as usize].conj() * b.vector[k as usize])
        })
        .sum::<C64>()
        .norm_sqr()
}

/// Greedy maximum-overlap matching: `weights[b][m]` for reference b and
/// candidate m. Returns the candidate and weight for each reference.
fn assign(weights: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = weights
        .iter()
        .enumerate()
        .flat_map(|(b, row)| row.iter().enumerate().map(move |(m, &w)| (b, m, w)))
        .collect();
    pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut out = vec![None; weights.len()];
    let mut taken = vec![false; weights.first().map_or(0, Vec::len)];
    for (b, m, w) in pairs {
        if out[b].is_none() && !taken[m] {
            out[b] = Some((m, w));
            taken[m] = true;
        }
    }
    out.into_iter().map(|x| x.unwrap_or((0, 0.0))).collect()
}

struct Point {
    energies: Vec<f64>,
    states: Vec<State>,
}

fn point(
    template: &TransmonParams,
    drive: &DriveConfig,
    n_steps: usize,
    ng: f64,
) -> Result<(Point, StaticProblem), FloquetError> {
    let problem = StaticProblem::new(&template.with_n_g(ng));
    let q = solve(&problem, drive, n_steps)?;
    let shift = ng.round() as i64;
    let states = (0..q.energies.len())
        .map(|m| State {
            vector: q.states.column(m).into_owned(),
            shift,
        })
        .collect();
    Ok((
        Point {
            energies: q.energies,
            states,
        },
        problem,
    ))
}

/// Quasienergy branches over an offset-charge grid at fixed drive. Branch b
/// starts on the Floquet state with the largest overlap with undriven state
/// b and is continued by maximum overlap with its state at the previous
/// grid point. Propagators are computed in parallel; tracking is serial.
pub fn sweep_ng(
    template: &TransmonParams,
    drive: &DriveConfig,
    ng_grid: &[f64],
    n_branches: usize,
) -> Result<QuasienergySweep, FloquetError> {
    template.validate()?;
    drive.validate()?;
    if ng_grid.len() < 3 || ng_grid.iter().any(|x| !x.is_finite()) {
        return Err(FloquetError::InvalidInput("n_g grid needs at least 3 finite points".into()));
    }
    let params = floquet_params(template)?;
    let dim = 2 * params.n_cut + 1;
    if n_branches == 0 || n_branches > dim {
        return Err(FloquetError::InvalidInput(format!(
            "n_branches = {n_branches} (basis has {dim} states)"
        )));
    }
    let (n_steps, _) = converged_steps(
        &StaticProblem::new(&params.with_n_g(ng_grid[0])),
        drive,
        DEFAULT_STEPS,
    )?;
    let points = ng_grid
        .par_iter()
        .map(|&ng| point(&params, drive, n_steps, ng))
        .collect::<Result<Vec<_>, _>>()?;

    let mut branches = vec![Vec::with_capacity(ng_grid.len()); n_branches];
    let mut overlaps = vec![Vec::with_capacity(ng_grid.len()); n_branches];
    let mut ambiguous = Vec::new();
    let mut states = Vec::with_capacity(ng_grid.len());
    let mut previous: Vec<State> = Vec::new();
    for (k, (pt, problem)) in points.iter().enumerate() {
        let weights: Vec<Vec<f64>> = (0..n_branches)
            .map(|b| {
                pt.states
                    .iter()
                    .map(|v| {
                        if k == 0 {
                            problem.weight(b, &v.vector)
                        } else {
                            overlap(&previous[b], v)
                        }
                    })
                    .collect()
            })
            .collect();
        let chosen = assign(&weights);
        let mut current = Vec::with_capacity(n_branches);
        for (b, &(m, w)) in chosen.iter().enumerate() {
            branches[b].push(pt.energies[m]);
            overlaps[b].push(w);
            if w < CONFIDENCE_FLOOR {
                ambiguous.push((b, k));
            }
            current.push(pt.states[m].clone());
        }
        states.push(current.clone());
        previous = current;
    }
    Ok(QuasienergySweep {
        ng_grid: ng_grid.to_vec(),
        branches,
        overlaps,
        ambiguous,
        params,
        drive: *drive,
        n_steps,
        states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anticrossing {
    pub i: usize,
    pub j: usize,
    /// Smallest folded |ε_i − ε_j| on the refined grid, Hz.
    pub gap: f64,
    pub ng_at_min: f64,
    /// Weight of undriven state j in branch i's Floquet state at the
    /// minimum, normalized within the {i, j} pair.
    pub mixing: f64,
    /// gap·2√(p(1−p)): the off-diagonal coupling of the two-level
    /// reduction, equal to the gap when the pair is exactly resonant.
    pub resonant_gap: f64,
}

/// Minimum folded splitting between branches i and j. The coarse minimum
/// must be interior; it is then refined with a 21-point sweep across the two
/// neighbouring grid intervals (ten times finer), tracking both branches.
pub fn anticrossing_gap(
    sweep: &QuasienergySweep,
    i: usize,
    j: usize,
) -> Result<Anticrossing, FloquetError> {
    for b in [i, j] {
        if b >= sweep.n_branches() {
            return Err(FloquetError::MissingBranch(b));
        }
    }
    if i == j {
        return Err(FloquetError::InvalidInput("i and j must differ".into()));
    }
    let w = sweep.drive.omega_d;
    let d: Vec<f64> = sweep.branches[i]
        .iter()
        .zip(&sweep.branches[j])
        .map(|(a, b)| fold(a - b, w).abs())
        .collect();
    let k = (1..d.len() - 1)
        .filter(|&k| d[k] <= d[k - 1] && d[k] <= d[k + 1])
        .min_by(|&a, &b| d[a].total_cmp(&d[b]))
        .ok_or(FloquetError::NoLocalMinimum { i, j })?;

    let (lo, hi) = (sweep.ng_grid[k - 1], sweep.ng_grid[k + 1]);
    let fine: Vec<f64> = (0..REFINE_POINTS)
        .map(|m| lo + (hi - lo) * m as f64 / (REFINE_POINTS - 1) as f64)
        .collect();
    let points = fine
        .par_iter()
        .map(|&ng| point(&sweep.params, &sweep.drive, sweep.n_steps, ng))
        .collect::<Result<Vec<_>, _>>()?;
    let mut prev = [sweep.states[k - 1][i].clone(), sweep.states[k - 1][j].clone()];
    let mut best: Option<Anticrossing> = None;
    for (ng, (pt, problem)) in fine.iter().zip(&points) {
        let weights: Vec<Vec<f64>> = prev
            .iter()
            .map(|r| pt.states.iter().map(|v| overlap(r, v)).collect())
            .collect();
        let chosen = assign(&weights);
        let (mi, mj) = (chosen[0].0, chosen[1].0);
        let gap = fold(pt.energies[mi] - pt.energies[mj], w).abs();
        if best.is_none_or(|b| gap < b.gap) {
            let vi = &pt.states[mi];
            let (wi, wj) = (problem.weight(i, &vi.vector), problem.weight(j, &vi.vector));
            let mixing = if wi + wj > 0.0 { wj / (wi + wj) } else { 0.0 };
            best = Some(Anticrossing {
                i,
                j,
                gap,
                ng_at_min: *ng,
                mixing,
                resonant_gap: gap * 2.0 * (mixing * (1.0 - mixing)).sqrt(),
            });
        }
        prev = [pt.states[mi].clone(), pt.states[mj].clone()];
    }
    Ok(best.expect("refined grid is non-empty"))
}

/// Smallest anticrossing between branch `i` and any other tracked branch,
/// or `None` when no pair has an interior minimum.
pub fn closest_anticrossing(
    sweep: &QuasienergySweep,
    i: usize,
) -> Result<Option<Anticrossing>, FloquetError> {
    let mut best: Option<Anticrossing> = None;
    for j in (0..sweep.n_branches()).filter(|&j| j != i) {
        match anticrossing_gap(sweep, i, j) {
            Ok(a) if best.is_none_or(|b| a.gap < b.gap) => best = Some(a),
            Ok(_) | Err(FloquetError::NoLocalMinimum { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{GHZ, MHZ};

    fn device_c() -> TransmonParams {
        TransmonParams::new(15.4 * GHZ, 0.26 * GHZ, 0.25)
    }

    #[test]
    fn fold_window() {
        let w = 10.0;
        assert_eq!(fold(5.0, w), -5.0);
        assert_eq!(fold(-5.0, w), -5.0);
        assert_eq!(fold(4.999, w), 4.999);
        assert!((fold(23.0, w) - 3.0).abs() < 1e-12);
        assert!((fold(-17.0, w) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_has_zero_quasienergies() {
        let q = quasienergies(&DMatrix::identity(5, 5), 1e9).unwrap();
        assert!(q.energies.iter().all(|e| e.abs() < 1e-6));
        assert_eq!(q.degenerate.len(), 5);
    }

    #[test]
    fn global_phase_shifts_all_quasienergies() {
        let p = TransmonParams { n_cut: 10, ..device_c() };
        let drive = DriveConfig {
            amplitude: 2.0 * GHZ,
            omega_d: 20.92 * GHZ,
        };
        let u = period_propagator(&p, &drive, 128).unwrap();
        let a = quasienergies(&u, drive.omega_d).unwrap();
        let phi = 0.3;
        let b = quasienergies(&(u * C64::from_polar(1.0, -phi)), drive.omega_d).unwrap();
        let shift = phi * drive.omega_d / (2.0 * PI);
        assert!(phase_change(
            &a.energies.iter().map(|e| e + shift).collect::<Vec<_>>(),
            &b.energies,
            drive.omega_d
        ) < 1e-6 * drive.omega_d);
    }

    #[test]
    fn static_limit_folds_undriven_energies() {
        let p = floquet_params(&device_c()).unwrap();
        let drive = DriveConfig {
            amplitude: 0.0,
            omega_d: 20.92 * GHZ,
        };
        let problem = StaticProblem::new(&p);
        let q = solve(&problem, &drive, 64).unwrap();
        let folded: Vec<f64> = problem.energies.iter().map(|e| fold(*e, drive.omega_d)).collect();
        assert!(phase_change(&folded[..DEFAULT_LEVELS], &q.energies, drive.omega_d) < 1e-9 * drive.omega_d);
    }

    #[test]
    fn propagator_is_unitary_and_schemes_agree() {
        let p = TransmonParams { n_cut: 10, ..device_c() };
        let drive = DriveConfig {
            amplitude: 4.0 * GHZ,
            omega_d: 20.92 * GHZ,
        };
        let cf4 = period_propagator(&p, &drive, 256).unwrap();
        assert!(unitarity_defect(&cf4) < 1e-9);
        let mid = period_propagator_with(&p, &drive, 4096, Scheme::Midpoint).unwrap();
        let a = quasienergies(&cf4, drive.omega_d).unwrap();
        let b = quasienergies(&mid, drive.omega_d).unwrap();
        assert!(phase_change(&a.energies[..], &b.energies, drive.omega_d) < 1e-5 * drive.omega_d);
    }

    #[test]
    fn cf4_is_fourth_order() {
        let p = TransmonParams { n_cut: 10, ..device_c() };
        let drive = DriveConfig {
            amplitude: 6.0 * GHZ,
            omega_d: 20.92 * GHZ,
        };
        let problem = StaticProblem::new(&p);
        let e = |n| solve(&problem, &drive, n).unwrap().energies;
        let reference = e(2048);
        let err = |n| phase_change(&e(n), &reference, drive.omega_d);
        let ratio = err(64) / err(128);
        assert!(ratio > 12.0 && ratio < 20.0, "error ratio {ratio}");
    }

    #[test]
    fn half_period_symmetry_matches_full_product() {
        let p = TransmonParams { n_cut: 8, ..device_c() };
        let drive = DriveConfig {
            amplitude: 3.0 * GHZ,
            omega_d: 20.92 * GHZ,
        };
        let problem = StaticProblem::new(&p);
        let n = 64;
        let dt = drive.period() / n as f64;
        let cosine = |t: f64| drive.amplitude * (2.0 * PI * drive.omega_d * t).cos();
        let mut full = DMatrix::<C64>::identity(problem.dim(), problem.dim());
        for k in 0..n {
            full = problem.step(dt, 1.0, cosine((k as f64 + 0.5) * dt)) * full;
        }
        let symmetric = problem.propagator(&drive, n, Scheme::Midpoint).unwrap();
        assert!((full - symmetric).iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn stark_shift_is_quadratic_at_small_amplitude() {
        let p = device_c();
        let wd = 20.92 * GHZ;
        let s = |a| {
            stark_shift(
                &p,
                &DriveConfig {
                    amplitude: a,
                    omega_d: wd,
                },
                DEFAULT_STEPS,
            )
            .unwrap()
        };
        let (s1, s2) = (s(0.25 * GHZ), s(0.5 * GHZ));
        assert!(s1 < 0.0);
        assert!((s2 / s1 - 4.0).abs() < 0.05, "ratio {}", s2 / s1);
        let problem = StaticProblem::new(&floquet_params(&p).unwrap());
        let predicted = 0.25 * (0.25 * GHZ) * (0.25 * GHZ) * perturbative_coefficient(&problem, wd);
        assert!((s1 / predicted - 1.0).abs() < 0.05, "{s1} vs {predicted}");
    }

    #[test]
    fn calibration_hits_target_and_scales_as_square_root() {
        let p = device_c();
        let wd = 20.92 * GHZ;
        assert_eq!(calibrate_drive_amplitude(&p, wd, 0.0).unwrap().amplitude, 0.0);
        let c10 = calibrate_drive_amplitude(&p, wd, 10.0 * MHZ).unwrap();
        assert!((c10.stark.abs() / (10.0 * MHZ) - 1.0).abs() < 0.01);
        let c40 = calibrate_drive_amplitude(&p, wd, 40.0 * MHZ).unwrap();
        assert!((c40.amplitude / c10.amplitude / 2.0 - 1.0).abs() < 0.2);
    }

    #[test]
    fn zero_drive_sweep_is_periodic_and_static() {
        let p = device_c();
        let drive = DriveConfig {
            amplitude: 0.0,
            omega_d: 20.92 * GHZ,
        };
        let grid: Vec<f64> = (0..11).map(|k| 0.1 * k as f64).collect();
        let s = sweep_ng(&p, &drive, &grid, 4).unwrap();
        let last = grid.len() - 1;
        for b in 0..4 {
            assert!(fold(s.branches[b][0] - s.branches[b][last], drive.omega_d).abs() < 1e-9 * drive.omega_d);
            for (k, ng) in grid.iter().enumerate() {
                let spec = diagonalize_levels(&p.with_n_g(*ng), 8).unwrap();
                let e = fold(spec.energies[b], drive.omega_d);
                assert!(fold(s.branches[b][k] - e, drive.omega_d).abs() < 1e-9 * drive.omega_d);
            }
        }
        assert!(s.ambiguous.is_empty());
    }

    #[test]
    fn csv_has_one_row_per_branch_and_point() {
        let drive = DriveConfig {
            amplitude: 0.0,
            omega_d: 20.92 * GHZ,
        };
        let s = sweep_ng(&device_c(), &drive, &[0.0, 0.1, 0.2], 2).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.starts_with("ng,branch_index,quasienergy_hz,overlap_confidence"));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = device_c();
        let drive = DriveConfig {
            amplitude: 1.0 * GHZ,
            omega_d: 20.92 * GHZ,
        };
        assert!(period_propagator(&p, &drive, 32).is_err());
        assert!(period_propagator(&p, &drive, 129).is_err());
        assert!(period_propagator(&p, &DriveConfig { omega_d: 0.0, ..drive }, 128).is_err());
        assert!(calibrate_drive_amplitude(&p, 20.92 * GHZ, -1.0).is_err());
        assert!(sweep_ng(&p, &drive, &[0.0, 0.1], 2).is_err());
    }

    #[test]
    fn zero_drive_gap_is_the_grid_limited_crossing() {
        // E_10 sits near 2f_d: branch 0 crosses it exactly, so the reported
        // gap is set by the refined grid spacing, not by any coupling.
        let drive = DriveConfig {
            amplitude: 0.0,
            omega_d: 20.92 * GHZ,
        };
        let grid: Vec<f64> = (0..51).map(|k| -0.5 + 0.02 * k as f64).collect();
        let s = sweep_ng(&device_c(), &drive, &grid, 11).unwrap();
        let a = closest_anticrossing(&s, 0).unwrap().unwrap();
        assert_eq!(a.j, 10);
        assert!((a.ng_at_min.abs() - 0.2).abs() < 0.01);
        assert!(a.mixing < 1e-12);
        assert!(a.gap < 10.0 * MHZ);
    }

    #[test]
    fn reversed_grid_gives_same_low_branches() {
        let p = device_c();
        let drive = DriveConfig {
            amplitude: 1.0 * GHZ,
            omega_d: 20.92 * GHZ,
        };
        let grid: Vec<f64> = (0..51).map(|k| -0.5 + 0.02 * k as f64).collect();
        let rev: Vec<f64> = grid.iter().rev().copied().collect();
        let a = sweep_ng(&p, &drive, &grid, 3).unwrap();
        let b = sweep_ng(&p, &drive, &rev, 3).unwrap();
        for br in 0..3 {
            for k in 0..grid.len() {
                let d = fold(a.branches[br][k] - b.branches[br][grid.len() - 1 - k], drive.omega_d);
                assert!(d.abs() < 1e-9 * drive.omega_d, "branch {br} point {k}");
            }
        }
    }

    #[test]
    fn anticrossing_requires_interior_minimum() {
        let drive = DriveConfig {
            amplitude: 0.0,
            omega_d: 20.92 * GHZ,
        };
        // On [0, 1/2] levels 0 and 1 are closest at the n_g = 1/2 endpoint.
        let grid: Vec<f64> = (0..11).map(|k| 0.05 * k as f64).collect();
        let s = sweep_ng(&device_c(), &drive, &grid, 2).unwrap();
        assert!(matches!(
            anticrossing_gap(&s, 0, 1),
            Err(FloquetError::NoLocalMinimum { .. })
        ));
        assert!(matches!(anticrossing_gap(&s, 0, 5), Err(FloquetError::MissingBranch(5))));
    }
}

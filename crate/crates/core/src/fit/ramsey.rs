//! Ramsey fringes with one or two beat frequencies under a common
//! exponential envelope.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    least_squares, weights, Bounds, CurveProblem, FitError, FitResult, LsqOptions, LsqSolution,
    Normalization, Trace,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyOptions {
    /// Starting points tried for two beats (a single beat uses one).
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for RamseyOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            seed: 0,
        }
    }
}

/// `exp(−t/t2) · Σ_k a_k cos(2π f_k t + φ_k) + offset`, with
/// `beats[k] = (f_k, a_k, φ_k)`.
pub fn ramsey_model(t: f64, t2: f64, beats: &[(f64, f64, f64)], offset: f64) -> f64 {
    let s: f64 = beats
        .iter()
        .map(|(f, a, phi)| a * (2.0 * PI * f * t + phi).cos())
        .sum();
    (-t / t2).exp() * s + offset
}

// Internal layout: [t2, offset, (f, α, β) per beat] with
// a cos(θ + φ) = α cos θ + β sin θ, α = a cos φ, β = −a sin φ.
fn model(t: f64, p: &[f64]) -> f64 {
    let e = (-t / p[0]).exp();
    let mut s = 0.0;
    for b in p[2..].chunks_exact(3) {
        let th = 2.0 * PI * b[0] * t;
        s += b[1] * th.cos() + b[2] * th.sin();
    }
    e * s + p[1]
}

fn gradient(t: f64, p: &[f64], g: &mut [f64]) {
    let e = (-t / p[0]).exp();
    let mut s = 0.0;
    for (k, b) in p[2..].chunks_exact(3).enumerate() {
        let th = 2.0 * PI * b[0] * t;
        let (sn, cs) = th.sin_cos();
        s += b[1] * cs + b[2] * sn;
        let o = 2 + 3 * k;
        g[o] = e * 2.0 * PI * t * (-b[1] * sn + b[2] * cs);
        g[o + 1] = e * cs;
        g[o + 2] = e * sn;
    }
    g[0] = e * t / (p[0] * p[0]) * s;
    g[1] = 1.0;
}

pub fn ramsey_fit(trace: &Trace, n_beats: usize) -> Result<FitResult, FitError> {
    ramsey_fit_with(trace, n_beats, &RamseyOptions::default())
}

/// Reported parameters: `t2_star`, `offset`, and per beat k (1-based, in
/// ascending frequency) `frequency_k`, `amplitude_k` (≥ 0), `phase_k`.
pub fn ramsey_fit_with(
    trace: &Trace,
    n_beats: usize,
    options: &RamseyOptions,
) -> Result<FitResult, FitError> {
    trace
        .validate()
        .map_err(|e| FitError::InvalidInput(e.to_string()))?;
    if !(1..=2).contains(&n_beats) {
        return Err(FitError::InvalidInput(format!("n_beats must be 1 or 2, got {n_beats}")));
    }
    let n_params = 2 + 3 * n_beats;
    if trace.len() < 2 * n_params {
        return Err(FitError::InvalidInput(format!(
            "{} points are too few for {n_beats} beat(s)",
            trace.len()
        )));
    }
    let norm = Normalization::of(&trace.x, &trace.y, false);
    let x = norm.x(&trace.x);
    let y = norm.y(&trace.y);
    let span = x[x.len() - 1] - x[0];
    let dt_max = x.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let nyquist = 0.5 / dt_max;
    let resolution = 1.0 / span;

    let peaks = periodogram_peaks(&x, &y, nyquist, resolution, 4);
    if peaks.is_empty() {
        return Err(FitError::Degenerate("no oscillation found in the trace".into()));
    }
    let starts = build_starts(&x, &y, &peaks, n_beats, span, resolution, options);

    let w = weights(trace, norm.ys);
    let problem = CurveProblem {
        x: &x,
        y: &y,
        weights: w.as_deref(),
        n_params,
        model,
        gradient,
    };
    let mut lower = vec![f64::NEG_INFINITY; n_params];
    let mut upper = vec![f64::INFINITY; n_params];
    lower[0] = 1e-3 * dt_max;
    upper[0] = 1e4 * span;
    for k in 0..n_beats {
        lower[2 + 3 * k] = 0.0;
        upper[2 + 3 * k] = nyquist;
    }
    let bounds = Bounds { lower, upper };
    let opts = LsqOptions::default();
    let outcomes: Vec<Result<LsqSolution, FitError>> = starts
        .par_iter()
        .map(|s| {
            let mut s = s.clone();
            for (v, (lo, hi)) in s.iter_mut().zip(bounds.lower.iter().zip(&bounds.upper)) {
                *v = v.clamp(*lo, *hi);
            }
            least_squares(&problem, &s, Some(&bounds), &opts)
        })
        .collect();
    // Lowest residual wins; ties go to the earliest start.
    let mut best: Option<LsqSolution> = None;
    let mut last_err = None;
    for o in outcomes {
        match o {
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
    let Some(mut sol) = best else {
        return Err(last_err.expect("at least one start"));
    };

    // Order beats by frequency.
    if n_beats == 2 && sol.params[2] > sol.params[5] {
        let p = sol.params.clone();
        sol.params[2..5].copy_from_slice(&p[5..8]);
        sol.params[5..8].copy_from_slice(&p[2..5]);
        let j = sol.jacobian.clone();
        for c in 0..3 {
            sol.jacobian.set_column(2 + c, &j.column(5 + c));
            sol.jacobian.set_column(5 + c, &j.column(2 + c));
        }
    }
    if n_beats == 2 {
        let (f1, f2) = (sol.params[2], sol.params[5]);
        let a1 = sol.params[3].hypot(sol.params[4]);
        let a2 = sol.params[6].hypot(sol.params[7]);
        // A vanishing component has no meaningful frequency; only two real
        // beats can collide.
        let significant = 1e-6 * a1.max(a2);
        if (f2 - f1).abs() < resolution && a1 > significant && a2 > significant {
            return Err(FitError::BeatCollision {
                f1: f1 / norm.xs,
                f2: f2 / norm.xs,
                resolution: resolution / norm.xs,
            });
        }
    }
    Ok(report(&sol, n_beats, &norm, w.is_some()))
}

fn report(sol: &LsqSolution, n_beats: usize, norm: &Normalization, weighted: bool) -> FitResult {
    let p = &sol.params;
    let n = p.len();
    let mut names: Vec<String> = vec!["t2_star".into(), "offset".into()];
    let mut values = vec![p[0] * norm.xs, norm.y0 + norm.ys * p[1]];
    let mut jac = DMatrix::zeros(n, n);
    jac[(0, 0)] = norm.xs;
    jac[(1, 1)] = norm.ys;
    for k in 0..n_beats {
        let o = 2 + 3 * k;
        let (f, al, be) = (p[o], p[o + 1], p[o + 2]);
        let a = al.hypot(be);
        names.push(format!("frequency_{}", k + 1));
        names.push(format!("amplitude_{}", k + 1));
        names.push(format!("phase_{}", k + 1));
        values.push(f / norm.xs);
        values.push(a * norm.ys);
        values.push((-be).atan2(al));
        jac[(o, o)] = 1.0 / norm.xs;
        if a > 0.0 {
            jac[(o + 1, o + 1)] = norm.ys * al / a;
            jac[(o + 1, o + 2)] = norm.ys * be / a;
            jac[(o + 2, o + 1)] = be / (a * a);
            jac[(o + 2, o + 2)] = -al / (a * a);
        }
    }
    let names_ref: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut result = FitResult::from_transformed(
        &names_ref,
        values,
        &jac,
        sol,
        if weighted { 1.0 } else { norm.ys },
    );
    for k in 0..n_beats {
        let a = result.values[3 + 3 * k];
        if a <= 2.0 * result.std_errors[3 + 3 * k] {
            result.flags.push(format!("amplitude_{} consistent with zero", k + 1));
        }
    }
    result
}

/// Local maxima of the (oversampled) periodogram of the demeaned data,
/// strongest first, refined by parabolic interpolation.
fn periodogram_peaks(
    x: &[f64],
    y: &[f64],
    nyquist: f64,
    resolution: f64,
    max_peaks: usize,
) -> Vec<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let df = resolution / 4.0;
    let n_f = (nyquist / df).floor() as usize + 1;
    let power: Vec<f64> = (0..n_f)
        .into_par_iter()
        .map(|i| {
            let f = i as f64 * df;
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().zip(y) {
                let (s, c) = (2.0 * PI * f * t).sin_cos();
                re += (v - mean) * c;
                im += (v - mean) * s;
            }
            re * re + im * im
        })
        .collect();
    let mut maxima: Vec<(f64, f64)> = Vec::new();
    for i in 0..n_f {
        let left = if i > 0 { power[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < n_f { power[i + 1] } else { f64::NEG_INFINITY };
        if power[i] > left && power[i] >= right {
            let f = if i > 0 && i + 1 < n_f {
                let denom = left - 2.0 * power[i] + right;
                let shift = if denom < 0.0 { 0.5 * (left - right) / denom } else { 0.0 };
                (i as f64 + shift) * df
            } else {
                i as f64 * df
            };
            maxima.push((power[i], f));
        }
    }
    maxima.sort_by(|a, b| b.0.total_cmp(&a.0));
    maxima.into_iter().take(max_peaks).map(|(_, f)| f).collect()
}

/// Linear least squares for (offset, α_k, β_k) at fixed frequencies and envelope.
fn linear_amplitudes(x: &[f64], y: &[f64], freqs: &[f64], t2: f64) -> Vec<f64> {
    let m = 1 + 2 * freqs.len();
    let a = DMatrix::from_fn(x.len(), m, |r, c| {
        if c == 0 {
            return 1.0;
        }
        let k = (c - 1) / 2;
        let th = 2.0 * PI * freqs[k] * x[r];
        let e = (-x[r] / t2).exp();
        if (c - 1) % 2 == 0 {
            e * th.cos()
        } else {
            e * th.sin()
        }
    });
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    match svd.solve(&b, 1e-12) {
        Ok(sol) => sol.iter().cloned().collect(),
        Err(_) => vec![0.0; m],
    }
}

fn build_starts(
    x: &[f64],
    y: &[f64],
    peaks: &[f64],
    n_beats: usize,
    span: f64,
    resolution: f64,
    options: &RamseyOptions,
) -> Vec<Vec<f64>> {
    let t2_guesses = [0.5 * span, 0.25 * span, span, 2.0 * span];
    let mut freq_sets: Vec<Vec<f64>> = Vec::new();
    if n_beats == 1 {
        freq_sets.push(vec![peaks[0]]);
    } else {
        for i in 0..peaks.len() {
            for j in i + 1..peaks.len() {
                freq_sets.push(vec![peaks[i], peaks[j]]);
            }
        }
        if freq_sets.is_empty() {
            freq_sets.push(vec![peaks[0], peaks[0] + 2.0 * resolution]);
        }
    }
    let n_starts = if n_beats == 1 { 1 } else { options.n_starts.max(1) };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    (0..n_starts)
        .map(|s| {
            let mut freqs = freq_sets[s % freq_sets.len()].clone();
            let t2 = t2_guesses[(s / freq_sets.len()) % t2_guesses.len()];
            if s >= freq_sets.len() * t2_guesses.len() {
                for f in &mut freqs {
                    *f = (*f + rng.random_range(-0.5..0.5) * resolution).max(0.0);
                }
            }
            let lin = linear_amplitudes(x, y, &freqs, t2);
            let mut p = vec![t2, lin[0]];
            for (k, f) in freqs.iter().enumerate() {
                p.extend_from_slice(&[*f, lin[1 + 2 * k], lin[2 + 2 * k]]);
            }
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times() -> Vec<f64> {
        (0..401).map(|i| 200e-6 * i as f64 / 400.0).collect()
    }

    #[test]
    fn single_beat_exact() {
        let t = Trace::from_fn(times(), |v| ramsey_model(v, 100e-6, &[(0.2e6, 0.45, 0.3)], 0.5))
            .unwrap();
        let fit = ramsey_fit(&t, 1).unwrap();
        assert!((fit.get("t2_star") / 100e-6 - 1.0).abs() < 1e-8);
        assert!((fit.get("frequency_1") / 0.2e6 - 1.0).abs() < 1e-8);
        assert!((fit.get("amplitude_1") / 0.45 - 1.0).abs() < 1e-8);
        assert!((fit.get("phase_1") - 0.3).abs() < 1e-8);
        assert!((fit.get("offset") / 0.5 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn two_beats_exact() {
        let beats = [(0.2e6, 0.3, -0.4), (0.5e6, 0.2, 1.1)];
        let t = Trace::from_fn(times(), |v| ramsey_model(v, 80e-6, &beats, 0.5)).unwrap();
        let fit = ramsey_fit(&t, 2).unwrap();
        for (k, (f, a, phi)) in beats.iter().enumerate() {
            let i = k + 1;
            assert!((fit.get(&format!("frequency_{i}")) / f - 1.0).abs() < 1e-8);
            assert!((fit.get(&format!("amplitude_{i}")) / a - 1.0).abs() < 1e-8);
            assert!((fit.get(&format!("phase_{i}")) - phi).abs() < 1e-8);
        }
        assert!((fit.get("t2_star") / 80e-6 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = [0.7, 0.1, 3.0, 0.4, -0.2, 5.5, 0.1, 0.3];
        let mut g = [0.0; 8];
        for t in [0.0, 0.3, 0.9] {
            gradient(t, &p, &mut g);
            for j in 0..8 {
                let h = 1e-6;
                let (mut a, mut b) = (p, p);
                a[j] += h;
                b[j] -= h;
                let fd = (model(t, &a) - model(t, &b)) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "{j}");
            }
        }
    }
}

use serde::{Deserialize, Serialize};

use super::{
    least_squares, weights, Bounds, CurveProblem, FitError, FitResult, LsqOptions, Normalization,
    Trace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    /// Energy relaxation, τ = T1.
    T1,
    /// Hahn echo, τ = T2E.
    Echo,
    /// Spin-locked decay, τ = T_ρ.
    SpinLock,
}

impl DecayKind {
    pub fn label(self) -> &'static str {
        match self {
            DecayKind::T1 => "t1",
            DecayKind::Echo => "t2e",
            DecayKind::SpinLock => "t_rho",
        }
    }
}

/// `amplitude · exp(−t/τ) + offset`.
pub fn decay_model(t: f64, tau: f64, amplitude: f64, offset: f64) -> f64 {
    amplitude * (-t / tau).exp() + offset
}

fn model(t: f64, p: &[f64]) -> f64 {
    decay_model(t, p[0], p[1], p[2])
}

fn gradient(t: f64, p: &[f64], g: &mut [f64]) {
    let e = (-t / p[0]).exp();
    g[0] = p[1] * e * t / (p[0] * p[0]);
    g[1] = e;
    g[2] = 1.0;
}

/// Single-exponential fit; `x` in seconds. Reported parameters:
/// `time_constant`, `amplitude`, `offset`.
pub fn decay_fit(trace: &Trace, kind: DecayKind) -> Result<FitResult, FitError> {
    trace
        .validate()
        .map_err(|e| FitError::InvalidInput(e.to_string()))?;
    if trace.len() < 4 {
        return Err(FitError::InvalidInput("decay fit needs at least 4 points".into()));
    }
    let (ymin, ymax) = super::min_max(&trace.y);
    if ymax == ymin {
        return Err(FitError::Unidentifiable(
            "constant trace: amplitude is zero and the time constant undefined".into(),
        ));
    }
    let norm = Normalization::of(&trace.x, &trace.y, false);
    let x = norm.x(&trace.x);
    let y = norm.y(&trace.y);
    let init = initial_guess(&x, &y);
    let bounds = Bounds {
        lower: vec![1e-6, f64::NEG_INFINITY, f64::NEG_INFINITY],
        upper: vec![1e6, f64::INFINITY, f64::INFINITY],
    };
    let w = weights(trace, norm.ys);
    let problem = CurveProblem {
        x: &x,
        y: &y,
        weights: w.as_deref(),
        n_params: 3,
        model,
        gradient,
    };
    let sol = least_squares(&problem, &init, Some(&bounds), &LsqOptions::default())?;
    let mut result = FitResult::from_affine(
        &["time_constant", "amplitude", "offset"],
        &[0.0, 0.0, norm.y0],
        &[norm.xs, norm.ys, norm.ys],
        &sol,
        if w.is_some() { 1.0 } else { norm.ys },
    );
    let amp = result.get("amplitude");
    if amp.abs() <= 2.0 * result.std_error("amplitude") {
        return Err(FitError::Unidentifiable(format!(
            "amplitude {amp:.3e} consistent with zero; time constant undefined"
        )));
    }
    let tau = result.get("time_constant");
    let span = trace.x[trace.len() - 1] - trace.x[0];
    let dx = trace.x[1] - trace.x[0];
    if tau > span || tau < dx {
        result.flags.push(format!(
            "extrapolated: {} = {tau:.3e} s outside the sampled range [{dx:.3e}, {span:.3e}] s",
            kind.label()
        ));
    }
    result.flags.push(format!("kind: {}", kind.label()));
    Ok(result)
}

fn initial_guess(x: &[f64], y: &[f64]) -> [f64; 3] {
    let n = x.len();
    let tail = (n / 10).max(1);
    let offset = y[n - tail..].iter().sum::<f64>() / tail as f64;
    let amplitude = y[0] - offset;
    // First crossing of amplitude/e, linearly interpolated.
    let target = amplitude / std::f64::consts::E;
    let mut tau = (x[n - 1] - x[0]) / 3.0;
    for k in 1..n {
        let (a, b) = (y[k - 1] - offset, y[k] - offset);
        if (a - target) * (b - target) <= 0.0 && a != b {
            let f = (a - target) / (a - b);
            tau = (x[k - 1] + f * (x[k] - x[k - 1]) - x[0]).max(1e-3);
            break;
        }
    }
    [tau, amplitude, offset]
}

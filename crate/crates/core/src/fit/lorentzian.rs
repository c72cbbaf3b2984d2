use super::{
    least_squares, min_max, weights, Bounds, CurveProblem, FitError, FitResult, LsqOptions,
    Normalization, Trace,
};

/// `offset + amplitude / (1 + (2(x − center)/fwhm)²)`.
pub fn lorentzian(x: f64, center: f64, fwhm: f64, amplitude: f64, offset: f64) -> f64 {
    let u = 2.0 * (x - center) / fwhm;
    offset + amplitude / (1.0 + u * u)
}

fn model(x: f64, p: &[f64]) -> f64 {
    lorentzian(x, p[0], p[1], p[2], p[3])
}

fn gradient(x: f64, p: &[f64], g: &mut [f64]) {
    let (c, w, a) = (p[0], p[1], p[2]);
    let u = 2.0 * (x - c) / w;
    let l = 1.0 / (1.0 + u * u);
    g[0] = 4.0 * a * u * l * l / w;
    g[1] = 2.0 * a * u * u * l * l / w;
    g[2] = l;
    g[3] = 1.0;
}

/// Fits a single Lorentzian peak or dip. Parameters: `center`, `width`
/// (full width at half maximum), `amplitude`, `offset`.
pub fn lorentzian_peak(trace: &Trace) -> Result<FitResult, FitError> {
    trace
        .validate()
        .map_err(|e| FitError::InvalidInput(e.to_string()))?;
    if trace.len() < 5 {
        return Err(FitError::InvalidInput(format!(
            "Lorentzian fit needs at least 5 points, got {}",
            trace.len()
        )));
    }
    let norm = Normalization::of(&trace.x, &trace.y, true);
    let x = norm.x(&trace.x);
    let y = norm.y(&trace.y);
    let init = initial_guess(&x, &y);
    let (xmin, xmax) = min_max(&x);
    let span = xmax - xmin;
    let dx_min = x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let bounds = Bounds {
        lower: vec![xmin, 1e-3 * dx_min, f64::NEG_INFINITY, f64::NEG_INFINITY],
        upper: vec![xmax, 100.0 * span, f64::INFINITY, f64::INFINITY],
    };
    let w = weights(trace, norm.ys);
    let problem = CurveProblem {
        x: &x,
        y: &y,
        weights: w.as_deref(),
        n_params: 4,
        model,
        gradient,
    };
    let sol = least_squares(&problem, &init, Some(&bounds), &LsqOptions::default())?;
    let residual_scale = if w.is_some() { 1.0 } else { norm.ys };
    let mut result = FitResult::from_affine(
        &["center", "width", "amplitude", "offset"],
        &[norm.x0, 0.0, 0.0, norm.y0],
        &[norm.xs, norm.xs, norm.ys, norm.ys],
        &sol,
        residual_scale,
    );
    if result.get("amplitude").abs() <= 2.0 * result.std_error("amplitude") {
        result.flags.push("amplitude consistent with zero".into());
    }
    Ok(result)
}

fn initial_guess(x: &[f64], y: &[f64]) -> [f64; 4] {
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let (imax, ymax) = y
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    let (imin, ymin) = y
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
    let (ipk, ypk) = if ymax - median >= median - ymin {
        (imax, ymax)
    } else {
        (imin, ymin)
    };
    let amplitude = ypk - median;
    let half = median + 0.5 * amplitude;
    // Walk out from the extremum to the half-maximum crossings.
    let above = |v: f64| (v - half) * amplitude.signum() > 0.0;
    let mut lo = ipk;
    while lo > 0 && above(y[lo - 1]) {
        lo -= 1;
    }
    let mut hi = ipk;
    while hi + 1 < y.len() && above(y[hi + 1]) {
        hi += 1;
    }
    let dx = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    let width = (x[hi] - x[lo]).max(dx);
    [x[ipk], width, amplitude, median]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, a: f64, b: f64) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exact_lorentzian_recovered() {
        let x = grid(201, 20.90e9, 20.94e9);
        let truth = [20.921e9, 3.1e6, -0.8, 1.2];
        let t = Trace::from_fn(x, |v| lorentzian(v, truth[0], truth[1], truth[2], truth[3]))
            .unwrap();
        let fit = lorentzian_peak(&t).unwrap();
        for (name, want) in ["center", "width", "amplitude", "offset"].iter().zip(truth) {
            let got = fit.get(name);
            assert!((got / want - 1.0).abs() < 1e-8, "{name}: {got} vs {want}");
        }
    }

    #[test]
    fn flat_trace_has_zero_amplitude() {
        let t = Trace::from_fn(grid(50, 0.0, 1.0), |_| 3.0).unwrap();
        match lorentzian_peak(&t) {
            Ok(fit) => assert!(fit.get("amplitude").abs() < 1e-9),
            Err(e) => assert!(matches!(e, FitError::NotConverged { .. })),
        }
    }

    #[test]
    fn too_few_points() {
        let t = Trace::from_fn(grid(4, 0.0, 1.0), |v| v).unwrap();
        assert!(matches!(lorentzian_peak(&t), Err(FitError::InvalidInput(_))));
    }
}

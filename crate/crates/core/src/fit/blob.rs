//! Isotropic Gaussian mixture fit of IQ shots by expectation-maximization,
//! with a two-pass 4σ trim to keep leakage tails out of the final estimate.

use serde::{Deserialize, Serialize};

use super::FitError;
use crate::readout::{BlobModel, IqShot, ShotSet};

const TRIM_SIGMAS: f64 = 4.0;
const TRIM_PASSES: usize = 2;
const MAX_EM_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobComponent {
    pub mean: [f64; 2],
    pub sigma: f64,
    pub weight: f64,
    /// Ratio of the larger to the smaller principal standard deviation of
    /// the shots assigned to this component (1 for a circular blob).
    pub circularity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobFit {
    pub components: Vec<BlobComponent>,
    pub n_used: usize,
    pub n_trimmed: usize,
    pub iterations: usize,
}

impl BlobFit {
    /// Two-state model from single-component fits of g- and e-prepared shots,
    /// using their pooled width.
    pub fn pair(g: &BlobFit, e: &BlobFit) -> Result<BlobModel, FitError> {
        let (cg, ce) = (g.components[0], e.components[0]);
        let pooled = ((g.n_used as f64 * cg.sigma.powi(2) + e.n_used as f64 * ce.sigma.powi(2))
            / (g.n_used + e.n_used) as f64)
            .sqrt();
        BlobModel::new(cg.mean, ce.mean, pooled).map_err(|e| FitError::InvalidInput(e.to_string()))
    }
}

pub fn blob_fit(shots: &ShotSet, n_components: usize) -> Result<BlobFit, FitError> {
    if n_components == 0 {
        return Err(FitError::InvalidInput("n_components must be at least 1".into()));
    }
    if shots.len() < 100 * n_components {
        return Err(FitError::InvalidInput(format!(
            "{} shots are too few for {n_components} component(s) (100 per component)",
            shots.len()
        )));
    }
    let all: Vec<[f64; 2]> = shots.shots.iter().map(|s: &IqShot| [s.i, s.q]).collect();
    let (mean, cov) = moments(&all, None);
    if cov[0][0] + cov[1][1] <= f64::EPSILON * (mean[0].abs() + mean[1].abs()).powi(2) {
        return Err(FitError::Degenerate("shots have zero variance".into()));
    }

    let mut comps = initial_components(&all, n_components);
    let mut points = all.clone();
    let mut iterations = 0;
    for pass in 0..=TRIM_PASSES {
        let (c, it) = em(&points, comps)?;
        comps = c;
        iterations += it;
        if pass == TRIM_PASSES {
            break;
        }
        points = all
            .iter()
            .copied()
            .filter(|p| {
                comps
                    .iter()
                    .any(|c| dist(*p, c.mean) <= TRIM_SIGMAS * c.sigma)
            })
            .collect();
        if points.len() < 100 * n_components {
            return Err(FitError::Degenerate("trimming left too few shots".into()));
        }
    }

    // Undo the variance deficit of a 2D Gaussian truncated at radius cσ.
    let c2 = TRIM_SIGMAS * TRIM_SIGMAS / 2.0;
    let factor = 1.0 - c2 * (-c2).exp() / (1.0 - (-c2).exp());
    for c in &mut comps {
        c.sigma /= factor.sqrt();
    }

    for a in 0..comps.len() {
        for b in a + 1..comps.len() {
            let d = dist(comps[a].mean, comps[b].mean);
            let s = comps[a].sigma.max(comps[b].sigma);
            if d < 0.5 * s {
                return Err(FitError::ComponentCollapse { distance: d, sigma: s });
            }
        }
    }

    // Circularity from hard assignments within the trim radius.
    for k in 0..comps.len() {
        let mine: Vec<[f64; 2]> = points
            .iter()
            .copied()
            .filter(|p| nearest(&comps, *p) == k)
            .collect();
        let (_, cov) = moments(&mine, Some(comps[k].mean));
        let (l1, l2) = eigen2(cov);
        comps[k].circularity = if l2 > 0.0 { (l1 / l2).sqrt() } else { f64::INFINITY };
    }

    Ok(BlobFit {
        components: comps,
        n_used: points.len(),
        n_trimmed: all.len() - points.len(),
        iterations,
    })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn nearest(comps: &[BlobComponent], p: [f64; 2]) -> usize {
    let mut best = 0;
    let mut best_ll = f64::NEG_INFINITY;
    for (k, c) in comps.iter().enumerate() {
        let ll = log_density(c, p);
        if ll > best_ll {
            best_ll = ll;
            best = k;
        }
    }
    best
}

fn log_density(c: &BlobComponent, p: [f64; 2]) -> f64 {
    let d2 = (p[0] - c.mean[0]).powi(2) + (p[1] - c.mean[1]).powi(2);
    c.weight.ln() - 2.0 * c.sigma.ln() - d2 / (2.0 * c.sigma * c.sigma)
}

/// Mean and covariance (about `center` when given).
fn moments(points: &[[f64; 2]], center: Option<[f64; 2]>) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = points.len().max(1) as f64;
    let mean = center.unwrap_or_else(|| {
        let s = points.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n, s[1] / n]
    });
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        c[0][0] += d[0] * d[0];
        c[0][1] += d[0] * d[1];
        c[1][1] += d[1] * d[1];
    }
    c[0][0] /= n;
    c[0][1] /= n;
    c[1][1] /= n;
    c[1][0] = c[0][1];
    (mean, c)
}

/// Eigenvalues (larger, smaller) of a 2×2 symmetric matrix.
fn eigen2(c: [[f64; 2]; 2]) -> (f64, f64) {
    let tr = c[0][0] + c[1][1];
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr + disc, 0.5 * tr - disc)
}

fn principal_axis(c: [[f64; 2]; 2]) -> [f64; 2] {
    let (l1, _) = eigen2(c);
    let v = if c[0][1].abs() > 0.0 {
        [l1 - c[1][1], c[0][1]]
    } else if c[0][0] >= c[1][1] {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

/// Deterministic start: quantile groups along the principal axis.
fn initial_components(points: &[[f64; 2]], k: usize) -> Vec<BlobComponent> {
    let (mean, cov) = moments(points, None);
    let axis = principal_axis(cov);
    let mut proj: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p[0] - mean[0]) * axis[0] + (p[1] - mean[1]) * axis[1], i))
        .collect();
    proj.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = points.len();
    (0..k)
        .map(|g| {
            let group: Vec<[f64; 2]> = proj[g * n / k..(g + 1) * n / k]
                .iter()
                .map(|(_, i)| points[*i])
                .collect();
            let (m, c) = moments(&group, None);
            BlobComponent {
                mean: m,
                sigma: (0.5 * (c[0][0] + c[1][1])).sqrt().max(f64::MIN_POSITIVE),
                weight: 1.0 / k as f64,
                circularity: 1.0,
            }
        })
        .collect()
}

fn em(
    points: &[[f64; 2]],
    mut comps: Vec<BlobComponent>,
) -> Result<(Vec<BlobComponent>, usize), FitError> {
    let k = comps.len();
    let n = points.len();
    let mut resp = vec![0.0; n * k];
    let mut prev_ll = f64::NEG_INFINITY;
    for it in 1..=MAX_EM_ITERATIONS {
        // E step.
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let logs: Vec<f64> = comps.iter().map(|c| log_density(c, *p)).collect();
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logs.iter().map(|l| (l - m).exp()).sum();
            for j in 0..k {
                resp[i * k + j] = (logs[j] - m).exp() / z;
            }
            ll += m + z.ln();
        }
        // M step.
        for j in 0..k {
            let (mut w, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * k + j];
                w += r;
                sx += r * p[0];
                sy += r * p[1];
            }
            if w <= 0.0 {
                return Err(FitError::ComponentCollapse {
                    distance: 0.0,
                    sigma: comps[j].sigma,
                });
            }
            let mean = [sx / w, sy / w];
            let mut ss = 0.0;
            for (i, p) in points.iter().enumerate() {
                ss += resp[i * k + j] * ((p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2));
            }
            let sigma = (ss / (2.0 * w)).sqrt();
            if !(sigma > 0.0) {
                return Err(FitError::Degenerate(format!("component {j} has zero width")));
            }
            comps[j].mean = mean;
            comps[j].sigma = sigma;
            comps[j].weight = w / n as f64;
        }
        if (ll - prev_ll).abs() <= 1e-12 * ll.abs().max(1.0) {
            return Ok((comps, it));
        }
        prev_ll = ll;
    }
    Err(FitError::NotConverged {
        iterations: MAX_EM_ITERATIONS,
        reason: "EM log-likelihood still changing".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::Preparation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, mean: [f64; 2], sigma: f64, seed: u64) -> Vec<IqShot> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| IqShot::new(mean[0] + d.sample(&mut rng), mean[1] + d.sample(&mut rng)))
            .collect()
    }

    #[test]
    fn single_gaussian_statistics() {
        let n = 10_000;
        let s = ShotSet::new(gaussian(n, [0.3, -1.2], 0.05, 1), Preparation::G).unwrap();
        let fit = blob_fit(&s, 1).unwrap();
        let c = fit.components[0];
        let tol = 3.0 * 0.05 / (n as f64).sqrt();
        assert!((c.mean[0] - 0.3).abs() < tol && (c.mean[1] + 1.2).abs() < tol);
        assert!((c.sigma / 0.05 - 1.0).abs() < 0.02, "{}", c.sigma);
        assert!((0.95..=1.05).contains(&c.circularity));
    }

    #[test]
    fn two_blobs_snr_14() {
        // SNR = d²/(2σ²) = 14.
        let sigma = 1.0;
        let d = (28.0f64).sqrt();
        let mut shots = gaussian(5000, [0.0, 0.0], sigma, 2);
        shots.extend(gaussian(5000, [d, 0.0], sigma, 3));
        let fit = blob_fit(&ShotSet::new(shots, Preparation::Equilibrium).unwrap(), 2).unwrap();
        let mut means: Vec<[f64; 2]> = fit.components.iter().map(|c| c.mean).collect();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!(means[0][0].abs() < 0.05 && (means[1][0] - d).abs() < 0.05);
        for c in &fit.components {
            assert!((0.95..=1.05).contains(&c.circularity), "{}", c.circularity);
            assert!((c.sigma - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn zero_variance_rejected() {
        let s = ShotSet::new(vec![IqShot::new(1.0, 1.0); 500], Preparation::G).unwrap();
        assert!(matches!(blob_fit(&s, 1), Err(FitError::Degenerate(_))));
    }
}

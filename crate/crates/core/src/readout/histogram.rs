use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{IqShot, ReadoutError, ShotSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginPolicy {
    /// Angles about the IQ-plane origin.
    Zero,
    /// Angles about a chosen point, e.g. the midpoint of the blobs.
    Point([f64; 2]),
}

impl OriginPolicy {
    fn point(self) -> [f64; 2] {
        match self {
            OriginPolicy::Zero => [0.0, 0.0],
            OriginPolicy::Point(p) => p,
        }
    }
}

/// Angle of a shot measured from the negative x-axis, in [−π, π).
pub fn shot_angle(shot: &IqShot, origin: OriginPolicy) -> f64 {
    let o = origin.point();
    wrap((shot.q - o[1]).atan2(shot.i - o[0]) - PI)
}

fn wrap(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularHistogram {
    /// `bins + 1` edges from −π to π.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl AngularHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * PI / self.bins() as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        0.5 * (self.edges[k] + self.edges[k + 1])
    }
}

pub fn angular_histogram(
    shots: &ShotSet,
    origin: OriginPolicy,
    bins: usize,
) -> Result<AngularHistogram, ReadoutError> {
    if bins < 16 {
        return Err(ReadoutError::InvalidInput(format!("bins = {bins} (minimum 16)")));
    }
    let width = 2.0 * PI / bins as f64;
    let edges = (0..=bins).map(|k| -PI + k as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for s in &shots.shots {
        let a = shot_angle(s, origin);
        let k = (((a + PI) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(AngularHistogram { edges, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentErrors {
    /// P(ḡ|g): g-conditioned shots on the far side of the threshold.
    pub p_notg_given_g: f64,
    /// P(g|ḡ): not-g shots on the g side.
    pub p_g_given_notg: f64,
    pub epsilon_assignment: f64,
    pub threshold: f64,
}

/// Bins whose centre lies above `threshold` are assigned "not g".
pub fn assignment_errors(
    hist_g: &AngularHistogram,
    hist_notg: &AngularHistogram,
    threshold: f64,
) -> Result<AssignmentErrors, ReadoutError> {
    if hist_g.edges != hist_notg.edges {
        return Err(ReadoutError::BinningMismatch);
    }
    if !(-PI..PI).contains(&threshold) {
        return Err(ReadoutError::ThresholdOutOfRange(threshold));
    }
    if hist_g.total() == 0 || hist_notg.total() == 0 {
        return Err(ReadoutError::InvalidInput("empty histogram".into()));
    }
    let mut g_far = 0u64;
    let mut notg_near = 0u64;
    for k in 0..hist_g.bins() {
        if hist_g.center(k) > threshold {
            g_far += hist_g.counts[k];
        } else {
            notg_near += hist_notg.counts[k];
        }
    }
    let p1 = g_far as f64 / hist_g.total() as f64;
    let p2 = notg_near as f64 / hist_notg.total() as f64;
    Ok(AssignmentErrors {
        p_notg_given_g: p1,
        p_g_given_notg: p2,
        epsilon_assignment: 0.5 * (p1 + p2),
        threshold,
    })
}

/// Bin edge minimizing ε_assignment on calibration histograms (the lowest
/// such edge on ties).
pub fn optimal_threshold(
    hist_g: &AngularHistogram,
    hist_notg: &AngularHistogram,
) -> Result<AssignmentErrors, ReadoutError> {
    let mut best: Option<AssignmentErrors> = None;
    for &edge in &hist_g.edges[..hist_g.bins()] {
        let e = assignment_errors(hist_g, hist_notg, edge)?;
        if best.is_none_or(|b| e.epsilon_assignment < b.epsilon_assignment) {
            best = Some(e);
        }
    }
    best.ok_or(ReadoutError::InvalidInput("no bins".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::Preparation;

    fn set(shots: Vec<IqShot>) -> ShotSet {
        ShotSet::new(shots, Preparation::G).unwrap()
    }

    #[test]
    fn negative_x_axis_is_zero_angle() {
        assert!(shot_angle(&IqShot::new(-1.0, 0.0), OriginPolicy::Zero).abs() < 1e-15);
        let a = shot_angle(&IqShot::new(0.0, -1.0), OriginPolicy::Zero);
        assert!((a - PI / 2.0).abs() < 1e-15);
        let o = OriginPolicy::Point([1.0, 1.0]);
        assert!(shot_angle(&IqShot::new(0.0, 1.0), o).abs() < 1e-15);
    }

    #[test]
    fn single_point_single_bin() {
        let h = angular_histogram(&set(vec![IqShot::new(0.3, 0.7); 50]), OriginPolicy::Zero, 32)
            .unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total(), 50);
    }

    #[test]
    fn rotation_shifts_histogram() {
        let bins = 36;
        let w = 2.0 * PI / bins as f64;
        // One shot per bin centre, weighted by bin index.
        let mut shots = Vec::new();
        for k in 0..bins {
            let a = -PI + (k as f64 + 0.5) * w + PI;
            for _ in 0..k {
                shots.push(IqShot::new(a.cos(), a.sin()));
            }
        }
        let s = set(shots);
        let h0 = angular_histogram(&s, OriginPolicy::Zero, bins).unwrap();
        let h1 = angular_histogram(&s.rotated(3.0 * w), OriginPolicy::Zero, bins).unwrap();
        for k in 0..bins {
            assert_eq!(h1.counts[(k + 3) % bins], h0.counts[k]);
        }
    }

    #[test]
    fn completeness_and_separation() {
        let g = set(vec![IqShot::new(-1.0, 0.5); 10]);
        let e = set(vec![IqShot::new(-1.0, -0.5); 10]);
        let hg = angular_histogram(&g, OriginPolicy::Zero, 64).unwrap();
        let he = angular_histogram(&e, OriginPolicy::Zero, 64).unwrap();
        let r = assignment_errors(&hg, &he, 0.0).unwrap();
        assert_eq!((r.p_notg_given_g, r.p_g_given_notg), (0.0, 0.0));
        assert!(assignment_errors(&hg, &he, 4.0).is_err());
    }
}

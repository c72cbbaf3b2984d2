//! Monte Carlo single-shot generator.
//!
//! Shots are produced in fixed-size chunks, each drawing from its own
//! ChaCha stream of the scenario seed, so parallel and serial generation
//! give identical output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BlobModel, IqShot, Preparation, ReadoutError, ShotSet};

const CHUNK: usize = 4096;
/// Stream offset for the second readout of a repeated measurement.
const SECOND_STAGE_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub g: f64,
    pub e: f64,
    #[serde(default)]
    pub f: f64,
    #[serde(default)]
    pub h: f64,
}

impl Populations {
    pub fn pure(state: Preparation) -> Self {
        let mut p = Self {
            g: 0.0,
            e: 0.0,
            f: 0.0,
            h: 0.0,
        };
        match state {
            Preparation::G | Preparation::Equilibrium => p.g = 1.0,
            Preparation::E => p.e = 1.0,
            Preparation::F => p.f = 1.0,
            Preparation::H => p.h = 1.0,
        }
        p
    }

    fn validate(&self) -> Result<(), ReadoutError> {
        let all = [self.g, self.e, self.f, self.h];
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ReadoutError::InvalidInput(format!("populations {all:?} outside [0, 1]")));
        }
        if all.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(ReadoutError::InvalidInput(format!("populations {all:?} sum above 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutScenario {
    pub blob: BlobModel,
    /// Qubit T1, seconds; `f64::INFINITY` disables decay.
    pub t1: f64,
    /// Integration time, seconds.
    pub tau: f64,
    pub leakage_fraction: f64,
    pub leakage_center: [f64; 2],
    /// Full width (radians) of the uniform rotation, about the IQ origin,
    /// applied to each leaked shot.
    #[serde(default)]
    pub leakage_spread: f64,
    /// Pointer centres of |f⟩ and |h⟩, needed only when they are populated.
    #[serde(default)]
    pub mu_f: Option<[f64; 2]>,
    #[serde(default)]
    pub mu_h: Option<[f64; 2]>,
    /// Initial-state probabilities; any remainder below 1 is |g⟩.
    pub populations: Populations,
    pub seed: u64,
}

impl ReadoutScenario {
    pub fn validate(&self) -> Result<(), ReadoutError> {
        self.populations.validate()?;
        if !(self.tau > 0.0) {
            return Err(ReadoutError::InvalidInput(format!("tau = {}", self.tau)));
        }
        if !(self.t1 > 0.0) {
            return Err(ReadoutError::InvalidInput(format!("t1 = {}", self.t1)));
        }
        if !(0.0..=1.0).contains(&self.leakage_fraction) {
            return Err(ReadoutError::InvalidInput(format!(
                "leakage_fraction = {}",
                self.leakage_fraction
            )));
        }
        if self.populations.f > 0.0 && self.mu_f.is_none() {
            return Err(ReadoutError::InvalidInput("|f⟩ populated but mu_f missing".into()));
        }
        if self.populations.h > 0.0 && self.mu_h.is_none() {
            return Err(ReadoutError::InvalidInput("|h⟩ populated but mu_h missing".into()));
        }
        Ok(())
    }

    /// Probability that an excited state relaxes during the integration window.
    pub fn decay_probability(&self) -> f64 {
        -(-self.tau / self.t1).exp_m1()
    }

    fn with_populations(&self, populations: Populations) -> Self {
        Self {
            populations,
            ..self.clone()
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> IqShot {
        let p = &self.populations;
        let u: f64 = rng.random();
        let center = if u < p.e {
            Some(self.blob.mu_e)
        } else if u < p.e + p.f {
            self.mu_f
        } else if u < p.e + p.f + p.h {
            self.mu_h
        } else {
            None
        };
        let g = self.blob.mu_g;
        let mut point = match center {
            Some(c) => {
                if rng.random::<f64>() < self.decay_probability() {
                    // Decay at a uniform time in the window: the integrated
                    // pointer is the time-weighted mix of the two centres.
                    let w: f64 = rng.random();
                    [w * c[0] + (1.0 - w) * g[0], w * c[1] + (1.0 - w) * g[1]]
                } else {
                    c
                }
            }
            None => g,
        };
        if rng.random::<f64>() < self.leakage_fraction {
            let a = self.leakage_spread * (rng.random::<f64>() - 0.5);
            let (s, c) = a.sin_cos();
            let l = self.leakage_center;
            point = [c * l[0] - s * l[1], s * l[0] + c * l[1]];
        }
        let sigma = self.blob.sigma;
        let ni: f64 = rng.sample(StandardNormal);
        let nq: f64 = rng.sample(StandardNormal);
        IqShot::new(point[0] + sigma * ni, point[1] + sigma * nq)
    }

    fn generate(&self, n: usize, stream_base: u64) -> Vec<IqShot> {
        let n_chunks = n.div_ceil(CHUNK);
        (0..n_chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(stream_base + c as u64);
                let len = CHUNK.min(n - c * CHUNK);
                (0..len).map(move |_| self.draw(&mut rng)).collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Draws `n` shots. The label is `g`/`e`/`f`/`h` for a pure population and
/// `equilibrium` otherwise.
pub fn simulate_shots(scenario: &ReadoutScenario, n: usize) -> Result<ShotSet, ReadoutError> {
    scenario.validate()?;
    if n == 0 {
        return Err(ReadoutError::InvalidInput("n must be at least 1".into()));
    }
    let p = scenario.populations;
    let label = match (p.g, p.e, p.f, p.h) {
        (_, e, f, h) if e == 0.0 && f == 0.0 && h == 0.0 => Preparation::G,
        (_, e, _, _) if e == 1.0 => Preparation::E,
        (_, _, f, _) if f == 1.0 => Preparation::F,
        (_, _, _, h) if h == 1.0 => Preparation::H,
        _ => Preparation::Equilibrium,
    };
    ShotSet::new(scenario.generate(n, 0), label)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedShots {
    pub first_readouts: usize,
    pub accepted: usize,
    /// Second readouts of the accepted runs, after preparing `prepared`.
    pub second: ShotSet,
}

/// Repeated-measurement emulation: a first readout from the scenario's
/// (equilibrium) populations is accepted when it lands within one σ of μ_g;
/// accepted runs are then prepared in `prepared` and read out again.
pub fn simulate_repeated(
    scenario: &ReadoutScenario,
    prepared: Preparation,
    n_first: usize,
) -> Result<ConditionedShots, ReadoutError> {
    scenario.validate()?;
    let first = scenario.generate(n_first, 0);
    let g = scenario.blob.mu_g;
    let sigma = scenario.blob.sigma;
    let accepted = first
        .iter()
        .filter(|s| (s.i - g[0]).hypot(s.q - g[1]) < sigma)
        .count();
    if accepted == 0 {
        return Err(ReadoutError::InvalidInput("no first readout passed the gate".into()));
    }
    let second_scenario = scenario.with_populations(Populations::pure(prepared));
    let shots = second_scenario.generate(accepted, SECOND_STAGE_STREAM);
    Ok(ConditionedShots {
        first_readouts: n_first,
        accepted,
        second: ShotSet::new(shots, prepared)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> ReadoutScenario {
        ReadoutScenario {
            blob: BlobModel::new([-1.0, 0.0], [0.0, 1.0], 0.1).unwrap(),
            t1: f64::INFINITY,
            tau: 2.5e-6,
            leakage_fraction: 0.0,
            leakage_center: [0.0, -2.0],
            leakage_spread: 0.0,
            mu_f: None,
            mu_h: None,
            populations: Populations::pure(Preparation::G),
            seed: 7,
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let s = scenario();
        let a = simulate_shots(&s, 10_000).unwrap();
        let b = simulate_shots(&s, 10_000).unwrap();
        assert_eq!(a, b);
        let mut other = s.clone();
        other.seed = 8;
        assert_ne!(a, simulate_shots(&other, 10_000).unwrap());
    }

    #[test]
    fn parallel_equals_serial() {
        let s = scenario();
        let parallel = simulate_shots(&s, 3 * CHUNK + 17).unwrap();
        let mut serial = Vec::new();
        for c in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(3 * CHUNK + 17 - c * CHUNK);
            for _ in 0..len {
                serial.push(s.draw(&mut rng));
            }
        }
        assert_eq!(parallel.shots, serial);
        // A prefix of a longer run is the shorter run.
        let short = simulate_shots(&s, 100).unwrap();
        assert_eq!(&parallel.shots[..100], &short.shots[..]);
    }

    #[test]
    fn pure_ground_state_is_one_gaussian() {
        let shots = simulate_shots(&scenario(), 20_000).unwrap();
        assert_eq!(shots.label, Preparation::G);
        let n = shots.len() as f64;
        let mi = shots.shots.iter().map(|s| s.i).sum::<f64>() / n;
        let mq = shots.shots.iter().map(|s| s.q).sum::<f64>() / n;
        assert!((mi + 1.0).abs() < 5.0 * 0.1 / n.sqrt());
        assert!(mq.abs() < 5.0 * 0.1 / n.sqrt());
    }

    #[test]
    fn decay_fraction_matches_probability() {
        let mut s = scenario();
        s.populations = Populations::pure(Preparation::E);
        s.t1 = s.tau / 0.0125;
        s.blob = BlobModel::new([-10.0, 0.0], [0.0, 10.0], 0.1).unwrap();
        let n = 200_000;
        let shots = simulate_shots(&s, n).unwrap();
        // Shots farther than 1 (= 10σ) from μ_e decayed; decays late in the
        // window (mixing weight within 1/d of μ_e) are not counted.
        let decayed = shots
            .shots
            .iter()
            .filter(|p| p.i.hypot(p.q - 10.0) > 1.0)
            .count() as f64
            / n as f64;
        let d = 200f64.sqrt();
        let expected = -(-0.0125f64).exp_m1() * (1.0 - 1.0 / d);
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((decayed - expected).abs() < 4.0 * se, "{decayed} vs {expected}");
    }

    #[test]
    fn rejects_bad_populations() {
        let mut s = scenario();
        s.populations.e = 0.7;
        s.populations.g = 0.7;
        assert!(simulate_shots(&s, 10).is_err());
        let mut s = scenario();
        s.populations = Populations::pure(Preparation::F);
        assert!(simulate_shots(&s, 10).is_err());
    }
}

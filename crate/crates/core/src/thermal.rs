//! Thermal photon budget of a cascade of attenuators: each stage passes a
//! fraction L = 10^{−A/10} of the incoming occupation and adds (1 − L) of
//! its own thermal occupation.

use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rates::{bose_einstein, RatesError};

#[derive(Debug, Error)]
pub enum ThermalError {
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("frequency {f:.6e} Hz outside the attenuation profile [{lo:.6e}, {hi:.6e}] Hz")]
    OutOfRange { f: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Rates(#[from] RatesError),
    #[error("profile CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("profile I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Tabulated attenuation versus frequency, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationProfile {
    pub frequency_hz: Vec<f64>,
    pub attenuation_db: Vec<f64>,
}

impl AttenuationProfile {
    pub fn new(frequency_hz: Vec<f64>, attenuation_db: Vec<f64>) -> Result<Self, ThermalError> {
        let p = Self {
            frequency_hz,
            attenuation_db,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        if self.frequency_hz.len() < 2 || self.frequency_hz.len() != self.attenuation_db.len() {
            return Err(ThermalError::InvalidChain(
                "profile needs at least two (frequency, dB) rows".into(),
            ));
        }
        if self.frequency_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ThermalError::InvalidChain(
                "profile frequencies must be strictly increasing".into(),
            ));
        }
        if self.attenuation_db.iter().any(|a| !(*a >= 0.0)) {
            return Err(ThermalError::InvalidChain("profile attenuation must be ≥ 0 dB".into()));
        }
        Ok(())
    }

    /// Reads `frequency_hz,attenuation_db` CSV with that header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ThermalError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers != ["frequency_hz", "attenuation_db"] {
            return Err(ThermalError::InvalidChain(format!(
                "profile header must be frequency_hz,attenuation_db, found {headers:?}"
            )));
        }
        let mut f = Vec::new();
        let mut a = Vec::new();
        for row in rdr.deserialize::<(f64, f64)>() {
            let (x, y) = row?;
            f.push(x);
            a.push(y);
        }
        Self::new(f, a)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self, ThermalError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn at(&self, f: f64) -> Result<f64, ThermalError> {
        let xs = &self.frequency_hz;
        let (lo, hi) = (xs[0], xs[xs.len() - 1]);
        if !(f >= lo && f <= hi) {
            return Err(ThermalError::OutOfRange { f, lo, hi });
        }
        let k = xs.partition_point(|&x| x <= f).clamp(1, xs.len() - 1);
        let t = (f - xs[k - 1]) / (xs[k] - xs[k - 1]);
        Ok(self.attenuation_db[k - 1] + t * (self.attenuation_db[k] - self.attenuation_db[k - 1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attenuation {
    /// Frequency-independent, dB (may be `f64::INFINITY`).
    Fixed(f64),
    Profile(AttenuationProfile),
}

impl Attenuation {
    pub fn db_at(&self, f: f64) -> Result<f64, ThermalError> {
        match self {
            Attenuation::Fixed(db) => Ok(*db),
            Attenuation::Profile(p) => p.at(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    /// Kelvin.
    pub temperature: f64,
    pub attenuation: Attenuation,
}

impl Stage {
    pub fn fixed(temperature: f64, db: f64) -> Self {
        Self {
            temperature,
            attenuation: Attenuation::Fixed(db),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationChain {
    pub source_temperature: f64,
    /// Warm to cold.
    pub stages: Vec<Stage>,
}

impl AttenuationChain {
    pub fn validate(&self) -> Result<(), ThermalError> {
        if !(self.source_temperature > 0.0) {
            return Err(ThermalError::InvalidChain("source temperature must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(ThermalError::InvalidChain("chain has no stages".into()));
        }
        for (k, s) in self.stages.iter().enumerate() {
            if !(s.temperature > 0.0) {
                return Err(ThermalError::InvalidChain(format!(
                    "stage {k} temperature must be positive"
                )));
            }
            match &s.attenuation {
                Attenuation::Fixed(db) if !(*db >= 0.0) => {
                    return Err(ThermalError::InvalidChain(format!(
                        "stage {k} attenuation must be ≥ 0 dB"
                    )))
                }
                Attenuation::Profile(p) => p.validate()?,
                _ => {}
            }
        }
        Ok(())
    }
}

/// n_out = L·n_in + (1 − L)·n_th(f, T) with L = 10^{−A/10}.
pub fn stage_step(n_in: f64, stage: &Stage, f: f64) -> Result<f64, ThermalError> {
    if !(n_in >= 0.0) {
        return Err(ThermalError::InvalidChain(format!("n_in = {n_in}")));
    }
    let db = stage.attenuation.db_at(f)?;
    let l = 10f64.powf(-db / 10.0);
    let n_th = bose_einstein(f, stage.temperature)?;
    Ok(l * n_in + (1.0 - l) * n_th)
}

/// Occupation at the cold end, starting from n_th at the source temperature.
pub fn cascade(chain: &AttenuationChain, f: f64) -> Result<f64, ThermalError> {
    chain.validate()?;
    let mut n = bose_einstein(f, chain.source_temperature)?;
    for s in &chain.stages {
        n = stage_step(n, s, f)?;
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "edit", rename_all = "snake_case")]
pub enum ChainEdit {
    Noop,
    SetSourceTemperature { temperature: f64 },
    /// Negative indices count from the cold end (−1 is the last stage).
    SetStageTemperature { index: isize, temperature: f64 },
    SetStageAttenuation { index: isize, attenuation: Attenuation },
}

impl ChainEdit {
    pub fn apply(&self, chain: &AttenuationChain) -> Result<AttenuationChain, ThermalError> {
        let mut c = chain.clone();
        let resolve = |index: isize| -> Result<usize, ThermalError> {
            let n = c.stages.len() as isize;
            let i = if index < 0 { n + index } else { index };
            if i < 0 || i >= n {
                return Err(ThermalError::InvalidChain(format!(
                    "stage index {index} out of range for {n} stages"
                )));
            }
            Ok(i as usize)
        };
        match self {
            ChainEdit::Noop => {}
            ChainEdit::SetSourceTemperature { temperature } => c.source_temperature = *temperature,
            ChainEdit::SetStageTemperature { index, temperature } => {
                let i = resolve(*index)?;
                c.stages[i].temperature = *temperature;
            }
            ChainEdit::SetStageAttenuation { index, attenuation } => {
                let i = resolve(*index)?;
                c.stages[i].attenuation = attenuation.clone();
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainVariant {
    pub name: String,
    pub edits: Vec<ChainEdit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub frequencies: Vec<f64>,
    /// "baseline" first, then each variant.
    pub columns: Vec<String>,
    /// `values[column][frequency]`.
    pub values: Vec<Vec<f64>>,
}

impl SweepTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i].as_slice())
    }
}

/// Cascade output over a frequency grid for the baseline chain and each variant.
pub fn chain_sweep(
    chain: &AttenuationChain,
    f_grid: &[f64],
    variants: &[ChainVariant],
) -> Result<SweepTable, ThermalError> {
    if f_grid.is_empty() {
        return Err(ThermalError::InvalidChain("empty frequency grid".into()));
    }
    let mut chains = vec![("baseline".to_string(), chain.clone())];
    for v in variants {
        let mut c = chain.clone();
        for e in &v.edits {
            c = e.apply(&c)?;
        }
        chains.push((v.name.clone(), c));
    }
    let values = chains
        .iter()
        .map(|(_, c)| {
            f_grid
                .par_iter()
                .map(|&f| cascade(c, f))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepTable {
        frequencies: f_grid.to_vec(),
        columns: chains.into_iter().map(|(n, _)| n).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::GHZ;

    #[test]
    fn stage_step_limits() {
        let f = 21.0 * GHZ;
        assert_eq!(stage_step(0.3, &Stage::fixed(4.0, 0.0), f).unwrap(), 0.3);
        let n_th = bose_einstein(f, 4.0).unwrap();
        let full = stage_step(100.0, &Stage::fixed(4.0, f64::INFINITY), f).unwrap();
        assert_eq!(full, n_th);
        // L = 1/2 into a cold bath.
        let half = stage_step(1.0, &Stage::fixed(1e-3, 10.0 * 2f64.log10()), f).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pass_through_chain() {
        let f = 7.0 * GHZ;
        let chain = AttenuationChain {
            source_temperature: 300.0,
            stages: vec![Stage::fixed(4.0, 0.0), Stage::fixed(0.01, 0.0)],
        };
        assert_eq!(cascade(&chain, f).unwrap(), bose_einstein(f, 300.0).unwrap());
    }

    #[test]
    fn profile_interpolates_and_refuses_extrapolation() {
        let p = AttenuationProfile::new(vec![1e9, 3e9], vec![2.0, 6.0]).unwrap();
        assert_eq!(p.at(2e9).unwrap(), 4.0);
        assert_eq!(p.at(1e9).unwrap(), 2.0);
        assert_eq!(p.at(3e9).unwrap(), 6.0);
        assert!(matches!(p.at(3.1e9), Err(ThermalError::OutOfRange { .. })));
        let csv = "frequency_hz,attenuation_db\n1e9,2\n3e9,6\n";
        assert_eq!(AttenuationProfile::read_csv(csv.as_bytes()).unwrap(), p);
        assert!(AttenuationProfile::read_csv("f,a\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn noop_variant_matches_baseline() {
        let chain = AttenuationChain {
            source_temperature: 300.0,
            stages: vec![Stage::fixed(4.0, 20.0), Stage::fixed(0.01, 20.0)],
        };
        let t = chain_sweep(
            &chain,
            &[5e9, 10e9],
            &[ChainVariant {
                name: "same".into(),
                edits: vec![ChainEdit::Noop],
            }],
        )
        .unwrap();
        assert_eq!(t.column("baseline"), t.column("same"));
    }

    #[test]
    fn negative_stage_index_is_last() {
        let chain = AttenuationChain {
            source_temperature: 300.0,
            stages: vec![Stage::fixed(4.0, 20.0), Stage::fixed(0.01, 20.0)],
        };
        let c = ChainEdit::SetStageTemperature {
            index: -1,
            temperature: 0.1,
        }
        .apply(&chain)
        .unwrap();
        assert_eq!(c.stages[1].temperature, 0.1);
        assert!(ChainEdit::SetStageTemperature {
            index: 2,
            temperature: 0.1
        }
        .apply(&chain)
        .is_err());
    }
}

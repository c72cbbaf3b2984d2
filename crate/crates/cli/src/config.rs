//! Project configuration (TOML or JSON).

use std::path::{Path, PathBuf};

use cqed_core::thermal::{Attenuation, AttenuationProfile, ChainEdit, ChainVariant, Stage};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::units::{Angle, Frequency, Temperature, Time};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub device: Device,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_scan: Option<ChiScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ckp: Option<CkpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<ThermalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floquet: Option<FloquetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<ReadoutConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence: Option<CoherenceConfig>,
}

fn default_ng() -> f64 {
    0.25
}

/// One row of a device-parameter table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Device {
    #[serde(default)]
    pub name: String,
    pub f_cav: Frequency,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f01: Option<Frequency>,
    pub e_j: Frequency,
    pub e_c: Frequency,
    #[serde(default = "default_ng")]
    pub n_g: f64,
    /// Signed dispersive shift (negative below the cavity).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<Frequency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Frequency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Frequency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<Time>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2e: Option<Time>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2star: Option<Time>,
}

impl Device {
    pub fn require<T: Copy>(value: Option<T>, field: &str) -> Result<T, CliError> {
        value.ok_or_else(|| CliError::config(format!("device.{field}"), "required by this command"))
    }
}

fn default_levels() -> usize {
    cqed_core::transmon::DEFAULT_LEVELS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Measured transitions to fit E_J and E_C to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<MeasuredTransitions>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredTransitions {
    pub f01: Frequency,
    pub f12: Frequency,
    pub f23: Frequency,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiScanConfig {
    pub start: Frequency,
    pub stop: Frequency,
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<Frequency>,
    /// Coupling at `f_ref`; defaults to the device g at the device cavity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_ref: Option<Frequency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_ref: Option<Frequency>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CkpConfig {
    pub trace_g: PathBuf,
    pub trace_e: PathBuf,
    /// Initial drive strength; estimated from the traces when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amp2: Option<Frequency>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub nbar: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<Temperature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin_lock: Option<SpinLockConfig>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinLockConfig {
    pub t_rho: Time,
    pub rabi: Frequency,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyGrid {
    pub start: Frequency,
    pub stop: Frequency,
    pub points: usize,
}

impl FrequencyGrid {
    pub fn values(&self, field: &str) -> Result<Vec<f64>, CliError> {
        linspace(self.start.value(), self.stop.value(), self.points)
            .ok_or_else(|| CliError::config(field, "grid needs start < stop and at least 2 points"))
    }
}

pub fn linspace(start: f64, stop: f64, n: usize) -> Option<Vec<f64>> {
    (n >= 2 && start < stop).then(|| {
        (0..n)
            .map(|k| start + (stop - start) * k as f64 / (n - 1) as f64)
            .collect()
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalConfig {
    pub source_temperature: Temperature,
    pub stages: Vec<StageConfig>,
    pub grid: FrequencyGrid,
    #[serde(default)]
    pub variants: Vec<VariantConfig>,
}

/// A stage has either a fixed `attenuation_db` or a `profile` CSV
/// (`frequency_hz,attenuation_db`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub temperature: Temperature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attenuation_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
}

impl StageConfig {
    pub fn attenuation(&self, field: &str) -> Result<Attenuation, CliError> {
        match (&self.attenuation_db, &self.profile) {
            (Some(db), None) => Ok(Attenuation::Fixed(*db)),
            (None, Some(path)) => AttenuationProfile::read_csv_path(path)
                .map(Attenuation::Profile)
                .map_err(|e| CliError::config(format!("{field}.profile"), e.to_string())),
            _ => Err(CliError::config(field, "give exactly one of attenuation_db or profile")),
        }
    }

    pub fn to_stage(&self, field: &str) -> Result<Stage, CliError> {
        Ok(Stage {
            temperature: self.temperature.value(),
            attenuation: self.attenuation(field)?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    pub edits: Vec<EditConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "edit", rename_all = "snake_case", deny_unknown_fields)]
pub enum EditConfig {
    SetSourceTemperature {
        temperature: Temperature,
    },
    /// Negative indices count from the cold end.
    SetStageTemperature {
        index: isize,
        temperature: Temperature,
    },
    SetStageAttenuation {
        index: isize,
        attenuation_db: f64,
    },
}

impl VariantConfig {
    pub fn to_variant(&self) -> ChainVariant {
        let edits = self
            .edits
            .iter()
            .map(|e| match e {
                EditConfig::SetSourceTemperature { temperature } => ChainEdit::SetSourceTemperature {
                    temperature: temperature.value(),
                },
                EditConfig::SetStageTemperature { index, temperature } => {
                    ChainEdit::SetStageTemperature {
                        index: *index,
                        temperature: temperature.value(),
                    }
                }
                EditConfig::SetStageAttenuation {
                    index,
                    attenuation_db,
                } => ChainEdit::SetStageAttenuation {
                    index: *index,
                    attenuation: Attenuation::Fixed(*attenuation_db),
                },
            })
            .collect();
        ChainVariant {
            name: self.name.clone(),
            edits,
        }
    }
}

fn default_ng_start() -> f64 {
    -0.5
}
fn default_ng_stop() -> f64 {
    0.5
}
fn default_ng_points() -> usize {
    101
}
fn default_branches() -> usize {
    cqed_core::floquet::DEFAULT_BRANCHES
}
fn default_pairs() -> Vec<[usize; 2]> {
    vec![[1, 6]]
}

/// Drives are given by target 0–1 Stark shifts (calibrated), by cavity
/// photon numbers (amplitude 2g√n̄ with the device g), or both.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloquetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_d: Option<Frequency>,
    #[serde(default)]
    pub stark_targets: Vec<Frequency>,
    #[serde(default)]
    pub photons: Vec<f64>,
    #[serde(default = "default_ng_start")]
    pub ng_start: f64,
    #[serde(default = "default_ng_stop")]
    pub ng_stop: f64,
    #[serde(default = "default_ng_points")]
    pub ng_points: usize,
    #[serde(default = "default_branches")]
    pub branches: usize,
    #[serde(default = "default_pairs")]
    pub pairs: Vec<[usize; 2]>,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_shots() -> usize {
    100_000
}
fn default_bins() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    pub nbar: f64,
    pub tau: Time,
    pub theta_eg: Angle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Frequency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Blob width in arbitrary IQ units.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Direction of the g–e bisector; the negative I axis by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Angle>,
    /// Defaults to the device T1; absent both, no decay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<Time>,
    #[serde(default)]
    pub leakage_fraction: f64,
    /// Polar position of the leakage blob: radius in σ units and angle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage_angle: Option<Angle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage_spread: Option<Angle>,
    /// |e⟩ population of the equilibrium state used for repeated readout.
    #[serde(default)]
    pub excited_population: f64,
    #[serde(default = "default_shots")]
    pub shots: usize,
    /// First readouts for the repeated-measurement analysis; skipped if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeated_shots: Option<usize>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Angle>,
    #[serde(default)]
    pub seed: u64,
}

fn default_beats() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub echo: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin_lock: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramsey: Option<PathBuf>,
    #[serde(default = "default_beats")]
    pub ramsey_beats: usize,
}

impl ProjectConfig {
    /// Reads TOML (or JSON, by extension), reporting schema errors with the
    /// offending field path, then resolves data paths against the config's
    /// directory and checks that they exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("", format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg: ProjectConfig = if is_json {
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| CliError::config(e.path().to_string(), e.inner().to_string()))?
        } else {
            let de = toml::Deserializer::parse(&text)
                .map_err(|e| CliError::config("", e.to_string()))?;
            serde_path_to_error::deserialize(de).map_err(|e| {
                CliError::config(e.path().to_string(), e.inner().message().to_string())
            })?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base)?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) -> Result<(), CliError> {
        let fix = |p: &mut PathBuf, field: String| -> Result<(), CliError> {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(CliError::config(field, format!("file {} does not exist", p.display())));
            }
            if let Ok(abs) = p.canonicalize() {
                *p = abs;
            }
            Ok(())
        };
        if let Some(c) = &mut self.ckp {
            fix(&mut c.trace_g, "ckp.trace_g".into())?;
            fix(&mut c.trace_e, "ckp.trace_e".into())?;
        }
        if let Some(t) = &mut self.thermal {
            for (k, s) in t.stages.iter_mut().enumerate() {
                if let Some(p) = &mut s.profile {
                    fix(p, format!("thermal.stages[{k}].profile"))?;
                }
            }
        }
        if let Some(c) = &mut self.coherence {
            for (name, p) in [
                ("t1", &mut c.t1),
                ("echo", &mut c.echo),
                ("spin_lock", &mut c.spin_lock),
                ("ramsey", &mut c.ramsey),
            ] {
                if let Some(p) = p {
                    fix(p, format!("coherence.{name}"))?;
                }
            }
        }
        if let Some(o) = &mut self.out_dir {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        Ok(())
    }

    pub fn section<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::config(name, "section required by this command is missing"))
    }
}

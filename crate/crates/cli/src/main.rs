mod commands;
mod config;
mod error;
mod output;
mod units;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::ProjectConfig;
use error::CliError;
use output::OutputDir;

/// Circuit-QED transmon readout and spectroscopy toolkit.
#[derive(Parser)]
#[command(name = "cqed", version)]
struct Cli {
    /// Project config (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed for stochastic steps.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transmon levels and transition frequencies.
    Spectrum,
    /// Dispersive shift versus cavity frequency.
    ChiScan {
        #[arg(long)]
        points: Option<usize>,
    },
    /// Joint fit of ground/excited cavity spectroscopy.
    CkpFit,
    /// Stark shift, measurement and thermal dephasing rates.
    Rates,
    /// Thermal photon occupation through an attenuator chain.
    ThermalChain,
    /// Floquet quasienergies versus offset charge.
    FloquetMap {
        #[arg(long)]
        ng_points: Option<usize>,
    },
    /// Synthetic single-shot readout and error budget.
    ReadoutSim {
        #[arg(long)]
        shots: Option<usize>,
    },
    /// T1, echo, spin-locking and Ramsey fits.
    CoherenceFit,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::ChiScan { .. } => "chi-scan",
            Command::CkpFit => "ckp-fit",
            Command::Rates => "rates",
            Command::ThermalChain => "thermal-chain",
            Command::FloquetMap { .. } => "floquet-map",
            Command::ReadoutSim { .. } => "readout-sim",
            Command::CoherenceFit => "coherence-fit",
        }
    }
}

fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config", "a config file is required"))?;
    let mut cfg = ProjectConfig::load(path)?;
    match &cli.command {
        Command::ChiScan { points: Some(n) } => {
            if let Some(s) = cfg.chi_scan.as_mut() {
                s.points = *n;
            }
        }
        Command::FloquetMap { ng_points: Some(n) } => {
            if let Some(f) = cfg.floquet.as_mut() {
                f.ng_points = *n;
            }
        }
        Command::ReadoutSim { shots: Some(n) } => {
            if let Some(r) = cfg.readout.as_mut() {
                r.shots = *n;
            }
        }
        _ => {}
    }
    let root = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut out = OutputDir::acquire(&root)?;
    let outcome = match cli.command {
        Command::Spectrum => commands::spectrum(&cfg, &mut out),
        Command::ChiScan { .. } => commands::chi_scan_cmd(&cfg, &mut out),
        Command::CkpFit => commands::ckp_fit(&cfg, &mut out),
        Command::Rates => commands::rates(&cfg, &mut out),
        Command::ThermalChain => commands::thermal_chain(&cfg, &mut out),
        Command::FloquetMap { .. } => commands::floquet_map(&cfg, &mut out),
        Command::ReadoutSim { .. } => commands::readout_sim(&cfg, &mut out, cli.seed),
        Command::CoherenceFit => commands::coherence_fit(&cfg, &mut out, cli.seed),
    }?;
    let name = cli.command.name();
    let report_name = format!("{name}.json");
    let artifacts = out.artifacts().to_vec();
    let seed = cli.seed.or(cfg.readout.as_ref().map(|r| r.seed));
    let report = json!({
        "command": name,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "seed": seed,
        "results": outcome.results,
        "warnings": outcome.warnings,
        "artifacts": artifacts,
    });
    out.write_json(&report_name, &report)?;
    Ok(out.path(&report_name))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            println!("{}", report.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json(cli.command.name()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

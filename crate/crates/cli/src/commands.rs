use std::f64::consts::PI;

use cqed_core::cavity::{
    chi_perturbative, chi_scan, solve_g_from_chi, ChiOptions, CouplingModel, DEFAULT_CHI_LEVELS,
};
use cqed_core::fit::{
    blob_fit, ckp_joint_fit, ckp_model, decay_fit, decay_model, ramsey_fit_with, ramsey_model,
    BlobFit, CkpModel, DecayKind, FitResult, RamseyOptions, Trace,
};
use cqed_core::floquet::{
    anticrossing_gap, calibrate_drive_amplitude, closest_anticrossing, sweep_ng, DriveConfig,
};
use cqed_core::rates::{
    bose_einstein_flagged, meas_dephasing_rate, nbar_from_spin_locking, pure_dephasing_time,
    purcell_t1, spin_locking_psd, stark_shift, thermal_dephasing_rate, PureDephasing,
};
use cqed_core::readout::{
    angular_histogram, assignment_errors, efficiency, optimal_threshold, simulate_repeated,
    simulate_shots, snr_empirical, snr_theory, BlobModel, OriginPolicy, Populations, Preparation,
    ReadoutScenario,
};
use cqed_core::thermal::{chain_sweep, AttenuationChain};
use cqed_core::transmon::{
    diagonalize_levels, fit_ej_ec, transitions, Spectrum, TransitionSet, TransmonParams,
};
use serde_json::{json, Value};

use crate::config::{linspace, Device, ProjectConfig};
use crate::error::CliError;
use crate::output::OutputDir;

pub struct Outcome {
    pub results: Value,
    pub warnings: Vec<String>,
}

fn transmon(device: &Device) -> TransmonParams {
    TransmonParams::new(device.e_j.value(), device.e_c.value(), device.n_g)
}

fn spectrum_of(device: &Device, levels: usize) -> Result<Spectrum, CliError> {
    diagonalize_levels(&transmon(device), levels).map_err(CliError::computation)
}

fn fit_json(fit: &FitResult) -> Value {
    let params: serde_json::Map<String, Value> = fit
        .names
        .iter()
        .zip(fit.values.iter().zip(&fit.std_errors))
        .map(|(n, (v, e))| (n.clone(), json!({ "value": v, "std_error": e })))
        .collect();
    json!({
        "parameters": params,
        "residual_norm": fit.residual_norm,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "flags": fit.flags,
    })
}

fn write_trace(out: &mut OutputDir, name: &str, trace: &Trace) -> Result<(), CliError> {
    let w = out.create(name)?;
    trace.write_csv(w).map_err(|e| CliError::Io(e.to_string()))
}

pub fn spectrum(cfg: &ProjectConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let levels = cfg.spectrum.as_ref().map_or(cqed_core::transmon::DEFAULT_LEVELS, |s| s.levels);
    let spec = spectrum_of(&cfg.device, levels.max(4))?;
    let t = transitions(&spec).map_err(CliError::computation)?;
    let n = spec.n_levels();
    out.write_rows(
        "spectrum.csv",
        &["level", "energy_hz", "charge_element_to_next"],
        (0..n).map(|k| {
            let next = if k + 1 < n { spec.charge_element(k, k + 1) } else { f64::NAN };
            (k, spec.energies[k], next)
        }),
    )?;
    let mut results = json!({
        "f01_hz": t.f01,
        "f12_hz": t.f12,
        "f23_hz": t.f23,
        "anharmonicity_hz": t.f12 - t.f01,
        "n_cut": spec.params.n_cut,
        "levels": n,
    });
    if let Some(f01) = cfg.device.f01 {
        results["f01_relative_deviation"] = json!(t.f01 / f01.value() - 1.0);
    }
    if let Some(m) = cfg.spectrum.as_ref().and_then(|s| s.fit) {
        let measured = TransitionSet {
            f01: m.f01.value(),
            f12: m.f12.value(),
            f23: m.f23.value(),
        };
        let fit = fit_ej_ec(&measured, cfg.device.n_g).map_err(CliError::computation)?;
        results["fit"] = json!({
            "e_j_hz": fit.params.e_j,
            "e_c_hz": fit.params.e_c,
            "residuals_hz": fit.residuals,
            "relative_residual": fit.relative_residual,
            "iterations": fit.iterations,
        });
    }
    Ok(Outcome {
        results,
        warnings: spec.warnings.clone(),
    })
}

pub fn chi_scan_cmd(cfg: &ProjectConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let sc = ProjectConfig::section(&cfg.chi_scan, "chi_scan")?;
    let d = &cfg.device;
    let options = ChiOptions {
        n_levels: sc.n_levels.unwrap_or(DEFAULT_CHI_LEVELS),
        guard: sc.guard.map_or(ChiOptions::default().guard, |g| g.value()),
    };
    let spec = spectrum_of(d, options.n_levels + 3)?;
    let g0 = match sc.g_ref {
        Some(g) => g.value(),
        None => Device::require(d.g, "g")?.value(),
    };
    let model = CouplingModel {
        g0,
        omega0: sc.f_ref.unwrap_or(d.f_cav).value(),
    };
    let grid = linspace(sc.start.value(), sc.stop.value(), sc.points)
        .ok_or_else(|| CliError::config("chi_scan", "need start < stop and points ≥ 2"))?;
    let points = chi_scan(&spec, &model, &grid, &options).map_err(CliError::computation)?;
    out.write_rows(
        "chi_scan.csv",
        &[
            "omega_r_hz",
            "g_hz",
            "chi_hz",
            "two_chi_abs_hz",
            "flagged",
            "pole_lower",
            "pole_upper",
            "pole_transition_hz",
        ],
        points.iter().map(|p| {
            let chi = p.chi.unwrap_or(f64::NAN);
            (
                p.omega_r,
                p.g,
                chi,
                (2.0 * chi).abs(),
                p.pole.is_some(),
                p.pole.map(|f| f.lower as i64).unwrap_or(-1),
                p.pole.map(|f| f.upper as i64).unwrap_or(-1),
                p.pole.map_or(f64::NAN, |f| f.transition),
            )
        }),
    )?;
    let valid: Vec<f64> = points.iter().filter_map(|p| p.chi).map(|c| (2.0 * c).abs()).collect();
    let mut results = json!({
        "points": points.len(),
        "flagged": points.len() - valid.len(),
        "two_chi_abs_min_hz": valid.iter().copied().fold(f64::INFINITY, f64::min),
        "two_chi_abs_max_hz": valid.iter().copied().fold(0.0, f64::max),
        "coupling_reference": { "g0_hz": model.g0, "omega0_hz": model.omega0 },
    });
    let mut warnings = spec.warnings.clone();
    if let Some(g) = d.g {
        match chi_perturbative(&spec, g.value(), d.f_cav.value(), options.n_levels) {
            Ok(chi) => results["chi_at_device_cavity_hz"] = json!(chi),
            Err(e) => warnings.push(format!("chi at device cavity: {e}")),
        }
    }
    if let Some(chi) = d.chi {
        match solve_g_from_chi(&spec, chi.value(), d.f_cav.value()) {
            Ok(g) => results["g_from_device_chi_hz"] = json!(g),
            Err(e) => warnings.push(format!("g from device chi: {e}")),
        }
    }
    Ok(Outcome { results, warnings })
}

pub fn ckp_fit(cfg: &ProjectConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let c = ProjectConfig::section(&cfg.ckp, "ckp")?;
    let d = &cfg.device;
    let tg = Trace::read_csv_path(&c.trace_g).map_err(CliError::input)?;
    let te = Trace::read_csv_path(&c.trace_e).map_err(CliError::input)?;
    let omega01 = match d.f01 {
        Some(f) => f.value(),
        None => spectrum_of(d, 4)?.f01(),
    };
    let chi = d.chi.map_or(-1e6, |x| x.value());
    let kappa = d.kappa.map_or(10e6, |x| x.value());
    let amp2 = match c.amp2 {
        Some(a) => a.value(),
        None => {
            // Peak pull 2|χ|n̄_max with n̄_max = 4·amp2/κ.
            let baseline = 0.5 * (tg.y[0] + tg.y[tg.len() - 1]);
            let peak = tg.y.iter().chain(&te.y).map(|y| (y - baseline).abs()).fold(0.0, f64::max);
            kappa * peak / (8.0 * chi.abs())
        }
    };
    let init = CkpModel {
        omega01,
        chi,
        kappa,
        omega_r: d.f_cav.value(),
        amp2,
    };
    let fit = ckp_joint_fit(&tg, &te, &init).map_err(CliError::computation)?;
    let m = CkpModel {
        omega01: fit.get("omega01"),
        chi: fit.get("chi"),
        kappa: fit.get("kappa"),
        omega_r: fit.get("omega_r"),
        amp2: fit.get("amp2"),
    };
    for (name, t, excited) in [("ckp_model_g.csv", &tg, false), ("ckp_model_e.csv", &te, true)] {
        let model = Trace::new(t.x.clone(), t.x.iter().map(|&x| ckp_model(x, &m, excited)).collect())
            .map_err(CliError::computation)?;
        write_trace(out, name, &model)?;
    }
    let mut results = fit_json(&fit);
    results["two_chi_hz"] = json!(2.0 * m.chi);
    results["initial_guess"] = json!(init);
    Ok(Outcome {
        results,
        warnings: fit.flags.clone(),
    })
}

pub fn rates(cfg: &ProjectConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let r = ProjectConfig::section(&cfg.rates, "rates")?;
    let d = &cfg.device;
    let chi = Device::require(d.chi, "chi")?.value();
    let kappa = Device::require(d.kappa, "kappa")?.value();
    if r.nbar.iter().any(|n| !(*n >= 0.0)) {
        return Err(CliError::config("rates.nbar", "photon numbers must be ≥ 0"));
    }
    out.write_rows(
        "rates.csv",
        &["nbar", "stark_shift_hz", "gamma_m_hz", "gamma_phi_thermal_hz"],
        r.nbar.iter().map(|&n| {
            (
                n,
                stark_shift(chi, n),
                meas_dephasing_rate(chi, kappa, n),
                thermal_dephasing_rate(chi, kappa, n),
            )
        }),
    )?;
    let mut results = json!({ "chi_hz": chi, "kappa_hz": kappa });
    let mut warnings = Vec::new();
    if let Some(t) = r.temperature {
        let occ = bose_einstein_flagged(d.f_cav.value(), t.value()).map_err(CliError::computation)?;
        if occ.underflow {
            warnings.push("thermal occupation underflows double precision".into());
        }
        results["thermal"] = json!({
            "temperature_k": t.value(),
            "nbar_th": occ.value,
            "gamma_phi_hz": thermal_dephasing_rate(chi, kappa, occ.value),
        });
    }
    if let (Some(g), Some(f01)) = (d.g, d.f01) {
        results["purcell_t1_s"] = json!(purcell_t1(kappa, g.value(), d.f_cav.value(), f01.value()));
    }
    if let (Some(t1), Some(t2e)) = (d.t1, d.t2e) {
        match pure_dephasing_time(t1.value(), t2e.value()) {
            Ok(PureDephasing::Finite(t)) => results["pure_dephasing_s"] = json!(t),
            Ok(PureDephasing::Infinite) => results["pure_dephasing_s"] = json!("infinite"),
            Err(e) => warnings.push(format!("pure dephasing: {e}")),
        }
    }
    if let Some(sl) = r.spin_lock {
        let t1 = Device::require(d.t1, "t1")?.value();
        let nbar = nbar_from_spin_locking(sl.t_rho.value(), t1, chi, kappa, sl.rabi.value())
            .map_err(CliError::computation)?;
        results["spin_lock"] = json!({
            "nbar": nbar,
            "psd_per_photon_hz": spin_locking_psd(chi, kappa, 1.0, sl.rabi.value()),
        });
    }
    Ok(Outcome { results, warnings })
}

pub fn thermal_chain(cfg: &ProjectConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let t = ProjectConfig::section(&cfg.thermal, "thermal")?;
    let stages = t
        .stages
        .iter()
        .enumerate()
        .map(|(k, s)| s.to_stage(&format!("thermal.stages[{k}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let chain = AttenuationChain {
        source_temperature: t.source_temperature.value(),
        stages,
    };
    let grid = t.grid.values("thermal.grid")?;
    let variants: Vec<_> = t.variants.iter().map(|v| v.to_variant()).collect();
    let table = chain_sweep(&chain, &grid, &variants).map_err(CliError::computation)?;
    let mut header = vec!["frequency_hz".to_string()];
    header.extend(table.columns.iter().map(|c| format!("nbar_{c}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_rows(
        "thermal_chain.csv",
        &header_refs,
        (0..grid.len()).map(|k| {
            let mut row = vec![grid[k]];
            row.extend(table.values.iter().map(|col| col[k]));
            row
        }),
    )?;
    let base = &table.values[0];
    let variants: Vec<Value> = table
        .columns
        .iter()
        .zip(&table.values)
        .skip(1)
        .map(|(name, col)| {
            let rel: Vec<f64> = col.iter().zip(base).map(|(v, b)| (v - b).abs() / b).collect();
            json!({
                "name": name,
                "relative_change_first": rel[0],
                "relative_change_last": rel[rel.len() - 1],
                "relative_change_max": rel.iter().copied().fold(0.0, f64::max),
            })
        })
        .collect();
    Ok(Outcome {
        results: json!({
            "baseline_first_hz_nbar": base[0],
            "baseline_last_hz_nbar": base[base.len() - 1],
            "variants": variants,
        }),
        warnings: Vec::new(),
    })
}

pub fn floquet_map(cfg: &ProjectConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let f = ProjectConfig::section(&cfg.floquet, "floquet")?;
    let d = &cfg.device;
    let params = transmon(d);
    let wd = f.omega_d.unwrap_or(d.f_cav).value();
    let grid = linspace(f.ng_start, f.ng_stop, f.ng_points)
        .ok_or_else(|| CliError::config("floquet", "need ng_start < ng_stop and ng_points ≥ 2"))?;
    let mut drives: Vec<(String, Value, DriveConfig)> = Vec::new();
    for (k, target) in f.stark_targets.iter().enumerate() {
        let cal = calibrate_drive_amplitude(&params, wd, target.value()).map_err(CliError::computation)?;
        drives.push((
            format!("stark{k}"),
            json!({ "target_stark_hz": target.value(), "calibration": cal }),
            DriveConfig {
                amplitude: cal.amplitude,
                omega_d: wd,
            },
        ));
    }
    if !f.photons.is_empty() {
        let g = Device::require(d.g, "g")?.value();
        for (k, n) in f.photons.iter().enumerate() {
            if !(*n >= 0.0) {
                return Err(CliError::config(format!("floquet.photons[{k}]"), "must be ≥ 0"));
            }
            drives.push((
                format!("photons{k}"),
                json!({ "nbar": n }),
                DriveConfig::from_photons(g, *n, wd),
            ));
        }
    }
    if drives.is_empty() {
        return Err(CliError::config("floquet", "give stark_targets and/or photons"));
    }
    let mut summaries = Vec::new();
    let mut warnings = Vec::new();
    for (label, origin, drive) in drives {
        let sweep = sweep_ng(&params, &drive, &grid, f.branches).map_err(CliError::computation)?;
        let name = format!("floquet_{label}.csv");
        let w = out.create(&name)?;
        sweep.write_csv(w)?;
        let mut pairs = Vec::new();
        for [i, j] in &f.pairs {
            match anticrossing_gap(&sweep, *i, *j) {
                Ok(a) => pairs.push(json!(a)),
                Err(e) => pairs.push(json!({ "i": i, "j": j, "error": e.to_string() })),
            }
        }
        let ground = closest_anticrossing(&sweep, 0).map_err(CliError::computation)?;
        if !sweep.ambiguous.is_empty() {
            warnings.push(format!(
                "{label}: {} branch assignments below confidence 0.5",
                sweep.ambiguous.len()
            ));
        }
        summaries.push(json!({
            "label": label,
            "drive": drive,
            "origin": origin,
            "n_steps": sweep.n_steps,
            "n_cut": sweep.params.n_cut,
            "csv": name,
            "anticrossings": pairs,
            "ground_closest_anticrossing": ground,
            "ambiguous_assignments": sweep.ambiguous,
        }));
    }
    Ok(Outcome {
        results: json!({ "omega_d_hz": wd, "ng_points": grid.len(), "drives": summaries }),
        warnings,
    })
}

pub fn readout_sim(
    cfg: &ProjectConfig,
    out: &mut OutputDir,
    seed: Option<u64>,
) -> Result<Outcome, CliError> {
    let r = ProjectConfig::section(&cfg.readout, "readout")?;
    let d = &cfg.device;
    let kappa = match r.kappa {
        Some(k) => k.value(),
        None => Device::require(d.kappa, "kappa")?.value(),
    };
    let eta = match r.eta {
        Some(e) => e,
        None => Device::require(d.eta, "eta")?,
    };
    let tau = r.tau.value();
    let axis = r.axis.map_or(PI, |a| a.value());
    let blob = BlobModel::from_physics(eta, kappa, r.nbar, tau, r.theta_eg.value(), r.sigma, axis)
        .map_err(CliError::computation)?;
    let radius = r.leakage_radius.map_or(blob.mu_g[0].hypot(blob.mu_g[1]), |x| x * r.sigma);
    let angle = r.leakage_angle.map_or(axis + PI / 2.0, |a| a.value());
    let scenario = ReadoutScenario {
        blob,
        t1: r.t1.or(d.t1).map_or(f64::INFINITY, |t| t.value()),
        tau,
        leakage_fraction: r.leakage_fraction,
        leakage_center: [radius * angle.cos(), radius * angle.sin()],
        leakage_spread: r.leakage_spread.map_or(0.0, |a| a.value()),
        mu_f: None,
        mu_h: None,
        populations: Populations::pure(Preparation::G),
        seed: seed.unwrap_or(r.seed),
    };
    let with = |p: Populations| ReadoutScenario {
        populations: p,
        ..scenario.clone()
    };
    let shots_g = simulate_shots(&scenario, r.shots).map_err(CliError::computation)?;
    let shots_e = simulate_shots(&with(Populations::pure(Preparation::E)), r.shots)
        .map_err(CliError::computation)?;
    for (name, s) in [("readout_shots_g.csv", &shots_g), ("readout_shots_e.csv", &shots_e)] {
        let w = out.create(name)?;
        s.write_csv(w).map_err(CliError::computation)?;
    }
    let fg = blob_fit(&shots_g, 1).map_err(CliError::computation)?;
    let fe = blob_fit(&shots_e, 1).map_err(CliError::computation)?;
    let fitted = BlobFit::pair(&fg, &fe).map_err(CliError::computation)?;
    let eff = efficiency(&fitted, kappa, r.nbar, tau, d.f_cav.value()).map_err(CliError::computation)?;
    let mut warnings = eff.flags.clone();
    let mut results = json!({
        "blob_model": blob,
        "blob_fit": { "g": fg, "e": fe, "pair": fitted },
        "snr_empirical": snr_empirical(&fitted),
        "snr_theory": snr_theory(eta, kappa, r.nbar, tau, r.theta_eg.value()).map_err(CliError::computation)?,
        "efficiency": eff,
        "seed": scenario.seed,
    });

    if let Some(n_first) = r.repeated_shots {
        let p_e = r.excited_population;
        let eq = with(Populations {
            g: 1.0 - p_e,
            e: p_e,
            f: 0.0,
            h: 0.0,
        });
        let cg = simulate_repeated(&eq, Preparation::G, n_first).map_err(CliError::computation)?;
        let eq_e = ReadoutScenario {
            seed: eq.seed.wrapping_add(1),
            ..eq.clone()
        };
        let ce = simulate_repeated(&eq_e, Preparation::E, n_first).map_err(CliError::computation)?;
        let hg = angular_histogram(&cg.second, OriginPolicy::Zero, r.bins).map_err(CliError::computation)?;
        let he = angular_histogram(&ce.second, OriginPolicy::Zero, r.bins).map_err(CliError::computation)?;
        let errors = match r.threshold {
            Some(t) => assignment_errors(&hg, &he, t.value()),
            None => optimal_threshold(&hg, &he),
        }
        .map_err(CliError::computation)?;
        out.write_rows(
            "readout_histogram.csv",
            &["bin_center_rad", "counts_g", "counts_notg"],
            (0..hg.bins()).map(|k| (hg.center(k), hg.counts[k], he.counts[k])),
        )?;
        if cg.accepted < 1000 {
            warnings.push(format!("only {} conditioned shots accepted", cg.accepted));
        }
        results["repeated"] = json!({
            "first_readouts": n_first,
            "accepted_g": cg.accepted,
            "accepted_e": ce.accepted,
            "errors": errors,
        });
    }
    Ok(Outcome { results, warnings })
}

pub fn coherence_fit(
    cfg: &ProjectConfig,
    out: &mut OutputDir,
    seed: Option<u64>,
) -> Result<Outcome, CliError> {
    let c = ProjectConfig::section(&cfg.coherence, "coherence")?;
    let mut results = serde_json::Map::new();
    let mut warnings = Vec::new();
    let decays = [
        ("t1", &c.t1, DecayKind::T1),
        ("echo", &c.echo, DecayKind::Echo),
        ("spin_lock", &c.spin_lock, DecayKind::SpinLock),
    ];
    let mut tau_of = std::collections::HashMap::new();
    for (name, path, kind) in decays {
        let Some(path) = path else { continue };
        let trace = Trace::read_csv_path(path).map_err(CliError::input)?;
        let fit = decay_fit(&trace, kind).map_err(|e| CliError::Computation(format!("{name}: {e}")))?;
        let (tau, amp, off) = (fit.values[0], fit.values[1], fit.values[2]);
        tau_of.insert(name, tau);
        let model = Trace::new(trace.x.clone(), trace.x.iter().map(|&t| decay_model(t, tau, amp, off)).collect())
            .map_err(CliError::computation)?;
        write_trace(out, &format!("coherence_{name}_model.csv"), &model)?;
        warnings.extend(fit.flags.iter().filter(|f| !f.starts_with("kind")).map(|f| format!("{name}: {f}")));
        results.insert(name.into(), fit_json(&fit));
    }
    if let Some(path) = &c.ramsey {
        let trace = Trace::read_csv_path(path).map_err(CliError::input)?;
        let opts = RamseyOptions {
            seed: seed.unwrap_or(0),
            ..RamseyOptions::default()
        };
        let fit = ramsey_fit_with(&trace, c.ramsey_beats, &opts)
            .map_err(|e| CliError::Computation(format!("ramsey: {e}")))?;
        let beats: Vec<(f64, f64, f64)> = (0..c.ramsey_beats)
            .map(|k| {
                (
                    fit.get(&format!("frequency_{}", k + 1)),
                    fit.get(&format!("amplitude_{}", k + 1)),
                    fit.get(&format!("phase_{}", k + 1)),
                )
            })
            .collect();
        let (t2, off) = (fit.get("t2_star"), fit.get("offset"));
        let model = Trace::new(trace.x.clone(), trace.x.iter().map(|&t| ramsey_model(t, t2, &beats, off)).collect())
            .map_err(CliError::computation)?;
        write_trace(out, "coherence_ramsey_model.csv", &model)?;
        warnings.extend(fit.flags.iter().map(|f| format!("ramsey: {f}")));
        results.insert("ramsey".into(), fit_json(&fit));
    }
    if results.is_empty() {
        return Err(CliError::config("coherence", "no traces given"));
    }
    if let (Some(t1), Some(t2e)) = (tau_of.get("t1"), tau_of.get("echo")) {
        match pure_dephasing_time(*t1, *t2e) {
            Ok(PureDephasing::Finite(t)) => {
                results.insert("pure_dephasing_s".into(), json!(t));
            }
            Ok(PureDephasing::Infinite) => {
                results.insert("pure_dephasing_s".into(), json!("infinite"));
            }
            Err(e) => warnings.push(format!("pure dephasing: {e}")),
        }
    }
    Ok(Outcome {
        results: Value::Object(results),
        warnings,
    })
}

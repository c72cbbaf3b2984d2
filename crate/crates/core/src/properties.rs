//! Property tests spanning several modules.

use std::f64::consts::PI;

use crate::cavity::chi_perturbative;
use crate::fit::{blob_fit, gamma_m_fit, GammaMMode};
use crate::floquet::fold;
use crate::rates::{bose_einstein, meas_dephasing_rate, pure_dephasing_time, PureDephasing};
use crate::readout::{
    angular_histogram, simulate_shots, BlobModel, OriginPolicy, Populations, Preparation,
    ReadoutScenario,
};
use crate::thermal::{cascade, AttenuationChain, Stage};
use crate::transmon::{diagonalize_levels, TransmonParams};
use crate::units::{GHZ, MHZ};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = TransmonParams> {
    (5.0..40.0f64, 0.15..0.4f64, -2.0..2.0f64)
        .prop_map(|(ej, ec, ng)| TransmonParams::new(ej * GHZ, ec * GHZ, ng))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectrum_is_periodic_and_even_in_offset_charge(p in params()) {
        let a = diagonalize_levels(&p, 8).unwrap();
        let b = diagonalize_levels(&p.with_n_g(p.n_g + 1.0), 8).unwrap();
        let c = diagonalize_levels(&p.with_n_g(-p.n_g), 8).unwrap();
        let tol = 1e-9 * a.f01();
        for k in 0..8 {
            prop_assert!((a.energies[k] - b.energies[k]).abs() < tol);
            prop_assert!((a.energies[k] - c.energies[k]).abs() < tol);
        }
    }

    #[test]
    fn chi_scales_as_g_squared(p in params(), g in 50.0..600.0f64, k in 1.5..3.0f64) {
        let s = diagonalize_levels(&p, 16).unwrap();
        // Cavity well above every low transition, away from poles.
        let wr = 3.2 * s.f01();
        let (Ok(a), Ok(b)) = (
            chi_perturbative(&s, g * MHZ, wr, 9),
            chi_perturbative(&s, k * g * MHZ, wr, 9),
        ) else {
            return Ok(());
        };
        prop_assert!((b / a - k * k).abs() < 1e-9 * k * k);
    }

    #[test]
    fn gamma_m_fit_ignores_point_order(
        chi in 0.3..2.0f64,
        kappa in 5.0..15.0f64,
        seed in any::<u64>(),
    ) {
        let (chi, kappa) = (chi * MHZ, kappa * MHZ);
        let mut pts: Vec<(f64, f64)> = (1..=8)
            .map(|k| {
                let n = k as f64;
                (n, meas_dephasing_rate(chi, kappa, n) * (1.0 + 0.01 * ((k * 7) % 5) as f64))
            })
            .collect();
        let a = gamma_m_fit(&pts, GammaMMode::FixedKappa(kappa)).unwrap();
        let len = pts.len();
        pts.rotate_left((seed % len as u64) as usize);
        pts.swap(0, len - 1);
        let b = gamma_m_fit(&pts, GammaMMode::FixedKappa(kappa)).unwrap();
        prop_assert!((a.get("chi") - b.get("chi")).abs() < 1e-9 * a.get("chi").abs());
    }

    #[test]
    fn cascade_is_bounded_by_bath_occupations(
        t_src in 1.0..300.0f64,
        temps in prop::collection::vec(0.005..4.0f64, 1..5),
        atts in prop::collection::vec(0.0..30.0f64, 5),
        f in 2.0..30.0f64,
    ) {
        let f = f * GHZ;
        let stages: Vec<Stage> = temps.iter().zip(&atts).map(|(t, a)| Stage::fixed(*t, *a)).collect();
        let chain = AttenuationChain { source_temperature: t_src, stages };
        let n = cascade(&chain, f).unwrap();
        let baths: Vec<f64> = std::iter::once(t_src)
            .chain(temps.iter().copied())
            .map(|t| bose_einstein(f, t).unwrap())
            .collect();
        let lo = baths.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = baths.iter().copied().fold(0.0, f64::max);
        prop_assert!(n >= lo * (1.0 - 1e-12) && n <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn bose_einstein_rises_with_temperature_and_falls_with_frequency(
        f in 1.0..30.0f64,
        t in 0.02..10.0f64,
        r in 1.01..3.0f64,
    ) {
        let f = f * GHZ;
        let n = bose_einstein(f, t).unwrap();
        prop_assert!(bose_einstein(f, r * t).unwrap() > n);
        prop_assert!(bose_einstein(r * f, t).unwrap() < n);
    }

    #[test]
    fn pure_dephasing_is_finite_below_twice_t1(t1 in 10.0..500.0f64, frac in 0.05..0.99f64) {
        let t1 = t1 * 1e-6;
        match pure_dephasing_time(t1, frac * 2.0 * t1).unwrap() {
            PureDephasing::Finite(t) => prop_assert!(t > 0.0),
            PureDephasing::Infinite => prop_assert!(false),
        }
    }

    #[test]
    fn fold_lands_in_window_and_preserves_class(e in -1e12..1e12f64, w in 1e9..3e10f64) {
        let r = fold(e, w);
        prop_assert!(r >= -0.5 * w && r < 0.5 * w);
        let k = ((e - r) / w).round();
        prop_assert!((e - r - k * w).abs() < 1e-6 * w);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn blob_fit_is_rotation_equivariant(angle in -PI..PI, seed in any::<u64>()) {
        let scenario = ReadoutScenario {
            blob: BlobModel::new([1.0, 0.5], [-0.4, 1.2], 0.15).unwrap(),
            t1: f64::INFINITY,
            tau: 1e-6,
            leakage_fraction: 0.0,
            leakage_center: [0.0, 0.0],
            leakage_spread: 0.0,
            mu_f: None,
            mu_h: None,
            populations: Populations::pure(Preparation::G),
            seed,
        };
        let shots = simulate_shots(&scenario, 4000).unwrap();
        let a = blob_fit(&shots, 1).unwrap().components[0];
        let b = blob_fit(&shots.rotated(angle), 1).unwrap().components[0];
        let (s, c) = angle.sin_cos();
        let rotated = [c * a.mean[0] - s * a.mean[1], s * a.mean[0] + c * a.mean[1]];
        prop_assert!((rotated[0] - b.mean[0]).abs() < 1e-9);
        prop_assert!((rotated[1] - b.mean[1]).abs() < 1e-9);
        prop_assert!((a.sigma - b.sigma).abs() < 1e-9);
    }

    #[test]
    fn histogram_counts_every_shot(seed in any::<u64>(), bins in 16usize..400) {
        let scenario = ReadoutScenario {
            blob: BlobModel::new([-1.0, 0.0], [0.0, 1.0], 0.3).unwrap(),
            t1: 50e-6,
            tau: 2e-6,
            leakage_fraction: 0.05,
            leakage_center: [0.0, -1.5],
            leakage_spread: 0.5,
            mu_f: None,
            mu_h: None,
            populations: Populations { g: 0.5, e: 0.5, f: 0.0, h: 0.0 },
            seed,
        };
        let shots = simulate_shots(&scenario, 3000).unwrap();
        let h = angular_histogram(&shots, OriginPolicy::Zero, bins).unwrap();
        prop_assert_eq!(h.total(), 3000);
        prop_assert_eq!(h.bins(), bins);
    }
}

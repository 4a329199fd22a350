use critdet::calibration::{
    attenuation, db_error_to_relative, db_to_linear, fit_system_gain, linear_to_db, photons_per_pulse,
    propagate_db_error, relative_to_db_error, thermal_psd, CalibrationChain, CalibrationError, LedgerEntry,
};
use critdet::constants::{hz_to_rad, HBAR};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

proptest! {
    #[test]
    fn gain_roundtrip(gain in 40.0f64..110.0, t_pre in 0.5f64..20.0) {
        let pts: Vec<(f64, f64)> = [0.02, 0.1, 0.5, 1.0, 3.0].iter().map(|&t| (t, thermal_psd(t, gain, t_pre))).collect();
        let fit = fit_system_gain(&pts).unwrap();
        prop_assert!((fit.gain_db - gain).abs() < 1e-9);
        prop_assert!((fit.t_preamp / t_pre - 1.0).abs() < 1e-9);
    }

    #[test]
    fn db_roundtrip(db in -60.0f64..60.0) {
        prop_assert!((linear_to_db(db_to_linear(db)) - db).abs() < 1e-12);
        prop_assert!((relative_to_db_error(db_error_to_relative(db.abs() / 10.0)) - db.abs() / 10.0).abs() < 1e-12);
    }

    #[test]
    fn combined_error_grows_with_each_component(a in 0.0f64..1.0, b in 0.0f64..1.0, extra in 0.01f64..1.0) {
        let base = propagate_db_error(&[a, b]).unwrap();
        prop_assert!(propagate_db_error(&[a, b, extra]).unwrap() > base);
        prop_assert!((propagate_db_error(&[b, a]).unwrap() - base).abs() < 1e-15);
        prop_assert!(base >= a.max(b) - 1e-12);
    }
}

/// Fitted uncertainties match the scatter of repeated noisy fits.
#[test]
fn gain_errors_match_monte_carlo() {
    let temps = [0.05, 0.3, 0.7, 1.2, 2.0, 3.0];
    let clean: Vec<f64> = temps.iter().map(|&t| thermal_psd(t, 82.4, 5.2)).collect();
    let sigma = 0.01 * clean[0];
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut g, mut gerr, mut tp, mut tperr) = (vec![], vec![], vec![], vec![]);
    for _ in 0..2000 {
        let pts: Vec<(f64, f64)> = temps.iter().zip(&clean).map(|(&t, &y)| (t, y + noise.sample(&mut rng))).collect();
        let fit = fit_system_gain(&pts).unwrap();
        g.push(fit.gain_db);
        gerr.push(fit.gain_db_err.unwrap());
        tp.push(fit.t_preamp);
        tperr.push(fit.t_preamp_err.unwrap());
    }
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((sd(&g) / mean(&gerr) - 1.0).abs() < 0.1, "gain {} vs {}", sd(&g), mean(&gerr));
    assert!((sd(&tp) / mean(&tperr) - 1.0).abs() < 0.1, "t_pre {} vs {}", sd(&tp), mean(&tperr));
}

#[test]
fn two_points_give_no_errors() {
    let pts = [(0.1, thermal_psd(0.1, 80.0, 4.0)), (2.0, thermal_psd(2.0, 80.0, 4.0))];
    let fit = fit_system_gain(&pts).unwrap();
    assert!(fit.gain_db_err.is_none() && fit.t_preamp_err.is_none());
    assert!(matches!(fit_system_gain(&pts[..1]), Err(CalibrationError::InsufficientData(1))));
}

#[test]
fn falling_psd_is_rejected() {
    let pts = [(0.1, 2e-20), (1.0, 1e-20), (2.0, 0.5e-20)];
    assert!(matches!(fit_system_gain(&pts), Err(CalibrationError::NegativeSlope(_))));
}

#[test]
fn photon_flux_definitions() {
    let omega = hz_to_rad(6.042e9);
    let p = 1e-18;
    let flux = photons_per_pulse(p, 1e-6, omega).unwrap();
    let rate = p / (HBAR * omega);
    assert!((flux.n_bar / (rate * 1e-6) - 1.0).abs() < 1e-15);
    assert!((flux.b_mag.powi(2) * 1e-6 - flux.n_bar).abs() < 1e-12 * flux.n_bar);
    assert!(photons_per_pulse(-1.0, 1e-6, omega).is_err());
}

#[test]
fn chain_totals() {
    let chain = CalibrationChain {
        gain_db: 82.4,
        t_preamp: 5.2,
        attenuation_db: attenuation(-20.0, 82.4),
        sigma_db_components: vec![0.2, 0.2, 0.2],
        extra: vec![LedgerEntry { name: "cable".into(), value_db: -1.5, sigma_db: 0.0 }],
    };
    chain.validate().unwrap();
    assert!((chain.total_input_db() - (-103.9)).abs() < 1e-12);
    assert!((chain.combined_sigma_db().unwrap() - 0.35).abs() <= 0.01);
    let bad = CalibrationChain { attenuation_db: 3.0, ..chain };
    assert!(bad.validate().is_err());
}

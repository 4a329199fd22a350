use critdet::constants::{hz_to_rad, HBAR};
use critdet::protocol::DetectionRecord;
use critdet::statistics::{
    auc_rank, coherent_distribution, compose_with_dark, efficiency_from_counts, eta_eff, fit_efficiency_curve,
    fock_cutoff, nep, optimize_threshold, poisson_check, povm_no_click, responsivity, roc_curve, threshold_grid,
    DetectorModel, StatsError, ThresholdCalibration,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn law(eta: f64, eps: f64, n: f64) -> f64 {
    let e = eta.powf(1.0 / (1.0 + eps * (n - 1.0)));
    1.0 - (-e * n).exp()
}

fn record(mean: f64, n: usize, seed: u64) -> DetectionRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Normal::new(mean, 1.0).unwrap();
    DetectionRecord::new((0..n).map(|_| g.sample(&mut rng)).collect(), 0.0, 1.0)
}

proptest! {
    #[test]
    fn efficiency_inverts_composition(eta in 0.01f64..1.0, n in 0.05f64..8.0, p_dark in 0.0f64..0.6) {
        let p_ideal = 1.0 - (-eta * n).exp();
        let (p_click, p_none) = compose_with_dark(p_ideal, p_dark);
        prop_assert!((p_click + p_none - 1.0).abs() < 1e-15);
        prop_assume!(p_click < 1.0 - 1e-9);
        let back = efficiency_from_counts(p_click, p_dark, n).unwrap();
        prop_assert!((back / eta - 1.0).abs() < 1e-8);
    }

    #[test]
    fn truncation_converges(n in 0.0f64..5.0, eta in 0.0f64..1.0) {
        let a = povm_no_click(&coherent_distribution(n, 40), eta).unwrap();
        let b = povm_no_click(&coherent_distribution(n, 80), eta).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((b - (-eta * n).exp()).abs() < 1e-12);
    }

    #[test]
    fn roc_rates_fall_with_threshold(sep in 0.0f64..4.0, seed in 0u64..1000) {
        let on = record(sep, 300, seed);
        let off = record(0.0, 300, seed + 1);
        let roc = roc_curve(&on, &off, &threshold_grid(&on, &off, 50)).unwrap();
        prop_assert!(roc.points.windows(2).all(|w| w[1].true_positive <= w[0].true_positive));
        prop_assert!(roc.points.windows(2).all(|w| w[1].false_positive <= w[0].false_positive));
        prop_assert!(roc.auc >= 0.0 && roc.auc <= 1.0);
    }
}

#[test]
fn cutoff_covers_tail() {
    assert_eq!(fock_cutoff(0.0), 60);
    assert!(fock_cutoff(100.0) >= 200);
    let d = coherent_distribution(100.0, fock_cutoff(100.0));
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn auc_limits() {
    let same_a = record(0.0, 4000, 1);
    let same_b = record(0.0, 4000, 2);
    assert!((auc_rank(&same_a, &same_b) - 0.5).abs() < 0.02);
    let roc = roc_curve(&same_a, &same_b, &threshold_grid(&same_a, &same_b, 400)).unwrap();
    assert!((roc.auc - 0.5).abs() < 0.02);
    let far = record(20.0, 500, 3);
    assert_eq!(auc_rank(&far, &same_b), 1.0);
    let roc = roc_curve(&far, &same_b, &threshold_grid(&far, &same_b, 400)).unwrap();
    assert!((roc.auc - 1.0).abs() < 1e-12);
}

#[test]
fn trapezoid_and_rank_auc_agree() {
    let on = record(1.5, 3000, 4);
    let off = record(0.0, 3000, 5);
    let roc = roc_curve(&on, &off, &threshold_grid(&on, &off, 2000)).unwrap();
    assert!((roc.auc - auc_rank(&on, &off)).abs() < 5e-3);
}

#[test]
fn optimum_prefers_larger_threshold_on_ties() {
    let on = DetectionRecord::new(vec![5.0, 6.0], 1.0, 1.0);
    let off = DetectionRecord::new(vec![0.0, 1.0], 0.0, 1.0);
    let best = optimize_threshold(&on, &off, &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(best.objective, 1.0);
    assert_eq!(best.threshold, 4.0);
}

#[test]
fn scale_mismatch_is_rejected() {
    let on = DetectionRecord::new(vec![1.0], 1.0, 2.0);
    let off = DetectionRecord::new(vec![0.0], 0.0, 1.0);
    assert!(matches!(roc_curve(&on, &off, &[0.5]), Err(StatsError::ScaleMismatch(..))));
}

#[test]
fn efficiency_fit_recovers_generator() {
    let pts: Vec<(f64, f64)> = (1..=40).map(|k| 0.25 * k as f64).map(|n| (n, law(0.73, 0.1, n))).collect();
    let fit = fit_efficiency_curve(&pts).unwrap();
    assert!((fit.eta - 0.73).abs() < 1e-5, "eta {}", fit.eta);
    assert!((fit.epsilon - 0.1).abs() < 1e-5, "epsilon {}", fit.epsilon);
    assert!(fit.r_squared > 0.999999);
    assert!(fit.eta_restricted > 0.0 && fit.r_squared_restricted < fit.r_squared);
}

#[test]
fn saturation_changes_eta_only_away_from_one_photon() {
    assert_eq!(eta_eff(0.73, 0.1, 1.0).unwrap(), 0.73);
    assert!(eta_eff(0.73, 0.1, 5.0).unwrap() > 0.73);
    assert!(eta_eff(0.73, 0.1, 0.0).unwrap() < 0.73);
}

#[test]
fn figures_of_merit_closed_forms() {
    let omega = hz_to_rad(6.042e9);
    let m = DetectorModel { eta: 0.73, epsilon: 0.1, p_dark: 0.222, gamma_dark: 167e3, tau: 1e-6, omega };
    let e0 = 0.73f64.powf(1.0 / 0.9);
    let r = responsivity(&m).unwrap();
    assert!((r / (e0 * 1e-6 / (HBAR * omega) * 0.778) - 1.0).abs() < 1e-12);
    let n = nep(&m).unwrap();
    assert!((n / ((2.0f64 * 167e3).sqrt() * HBAR * omega / e0) - 1.0).abs() < 1e-12);
}

#[test]
fn poisson_check_on_model_data_is_exact() {
    let n_bars: Vec<f64> = (0..=20).map(|k| 0.5 * k as f64).collect();
    let cals = [(0.6, 0.3), (0.5, 0.1), (0.8, 0.45)];
    let measured: Vec<Vec<f64>> = cals
        .iter()
        .map(|&(eta, pd)| n_bars.iter().map(|&n| (1.0 - pd) * (-eta_eff(eta, 0.05, n).unwrap() * n).exp()).collect())
        .collect();
    let calibration: Vec<Option<ThresholdCalibration>> =
        cals.iter().map(|&(eta, p_dark)| Some(ThresholdCalibration { eta, p_dark })).collect();
    let check = poisson_check(&n_bars, &measured, &calibration, 0.05).unwrap();
    assert!(check.max_deviation < 1e-14);
    let missing = vec![calibration[0], None, calibration[2]];
    assert!(matches!(poisson_check(&n_bars, &measured, &missing, 0.05), Err(StatsError::MissingCalibration(1))));
}

//! Threshold-detector model: POVM, dark-count composition, efficiency,
//! ROC analysis, figures of merit and the Poissonian consistency check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::HBAR;
use crate::numerics::{golden_min, nelder_mead};
use crate::protocol::DetectionRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid photon-number distribution: {0}")]
    InvalidDistribution(String),
    #[error("click probability {p_click} does not exceed dark probability {p_dark}")]
    InconsistentCounts { p_click: f64, p_dark: f64 },
    #[error("1 + epsilon (n_bar - 1) = {0} is not positive")]
    DomainError(f64),
    #[error("records carry different readout scales ({0} vs {1})")]
    ScaleMismatch(f64, f64),
    #[error("efficiency fit failed: {0}")]
    FitDiverged(String),
    #[error("threshold {0} has no efficiency calibration")]
    MissingCalibration(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub eta: f64,
    pub epsilon: f64,
    pub p_dark: f64,
    /// Dark rate, 1/s.
    pub gamma_dark: f64,
    /// Probe duration, s.
    pub tau: f64,
    /// Photon angular frequency, rad/s.
    pub omega: f64,
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), StatsError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(StatsError::Invalid(format!("eta = {} not in (0, 1]", self.eta)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(StatsError::Invalid(format!("epsilon = {} not in [0, 1)", self.epsilon)));
        }
        if !(self.p_dark >= 0.0 && self.p_dark < 1.0) {
            return Err(StatsError::Invalid(format!("p_dark = {} not in [0, 1)", self.p_dark)));
        }
        if !(self.tau > 0.0 && self.omega > 0.0 && self.gamma_dark >= 0.0) {
            return Err(StatsError::Invalid("tau, omega must be > 0 and gamma_dark >= 0".into()));
        }
        Ok(())
    }

    pub fn eta_at(&self, n_bar: f64) -> Result<f64, StatsError> {
        eta_eff(self.eta, self.epsilon, n_bar)
    }
}

/// Fock truncation max(60, ceil(n + 10 sqrt(n))).
pub fn fock_cutoff(n_bar: f64) -> usize {
    60usize.max((n_bar + 10.0 * n_bar.sqrt()).ceil() as usize)
}

/// Poisson weights P_0..=P_cutoff, evaluated in log space.
pub fn coherent_distribution(n_bar: f64, cutoff: usize) -> Vec<f64> {
    if n_bar == 0.0 {
        let mut v = vec![0.0; cutoff + 1];
        v[0] = 1.0;
        return v;
    }
    let ln = n_bar.ln();
    let mut log_fact = 0.0;
    (0..=cutoff)
        .map(|n| {
            if n > 0 {
                log_fact += (n as f64).ln();
            }
            (n as f64 * ln - n_bar - log_fact).exp()
        })
        .collect()
}

/// No-click probability sum_n (1 - eta)^n P_n.
pub fn povm_no_click(distribution: &[f64], eta: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(StatsError::Invalid(format!("eta = {eta} not in [0, 1]")));
    }
    let mut total = 0.0;
    for (n, &p) in distribution.iter().enumerate() {
        if !(p >= 0.0) {
            return Err(StatsError::InvalidDistribution(format!("P_{n} = {p}")));
        }
        total += p;
    }
    if total > 1.0 + 1e-9 {
        return Err(StatsError::InvalidDistribution(format!("sum = {total} > 1")));
    }
    // Horner in (1 - eta), highest order first for accuracy.
    let x = 1.0 - eta;
    Ok(distribution.iter().rev().fold(0.0, |acc, &p| acc * x + p))
}

/// (P_click, P_no_click).
pub fn compose_with_dark(p_ideal: f64, p_dark: f64) -> (f64, f64) {
    let no_click = (1.0 - p_dark) * (1.0 - p_ideal);
    (1.0 - no_click, no_click)
}

pub fn efficiency_from_counts(p_click: f64, p_dark: f64, n_bar: f64) -> Result<f64, StatsError> {
    if !(n_bar > 0.0) {
        return Err(StatsError::Invalid(format!("n_bar = {n_bar} must be > 0")));
    }
    if !(p_click > p_dark) {
        return Err(StatsError::InconsistentCounts { p_click, p_dark });
    }
    if !(p_click < 1.0) {
        return Err(StatsError::Invalid("p_click must be < 1".into()));
    }
    Ok(((1.0 - p_dark) / (1.0 - p_click)).ln() / n_bar)
}

/// eta^(1 / (1 + epsilon (n_bar - 1))).
pub fn eta_eff(eta: f64, epsilon: f64, n_bar: f64) -> Result<f64, StatsError> {
    let denom = 1.0 + epsilon * (n_bar - 1.0);
    if !(denom > 0.0) {
        return Err(StatsError::DomainError(denom));
    }
    if denom == 1.0 {
        return Ok(eta);
    }
    Ok(eta.powf(1.0 / denom))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub true_positive: f64,
    pub false_positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn check_scales(on: &DetectionRecord, off: &DetectionRecord) -> Result<(), StatsError> {
    if on.scale != off.scale {
        return Err(StatsError::ScaleMismatch(on.scale, off.scale));
    }
    Ok(())
}

/// ROC points at the given thresholds. The AUC integrates the curve by
/// trapezoids with the (0,0) and (1,1) corners appended.
pub fn roc_curve(on: &DetectionRecord, off: &DetectionRecord, thresholds: &[f64]) -> Result<RocCurve, StatsError> {
    check_scales(on, off)?;
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let points: Vec<RocPoint> = sorted
        .iter()
        .map(|&th| RocPoint { threshold: th, true_positive: on.click_fraction(th), false_positive: off.click_fraction(th) })
        .collect();
    let mut curve: Vec<(f64, f64)> = vec![(1.0, 1.0)];
    curve.extend(points.iter().map(|p| (p.false_positive, p.true_positive)));
    curve.push((0.0, 0.0));
    let auc = curve.windows(2).map(|w| 0.5 * (w[0].0 - w[1].0) * (w[0].1 + w[1].1)).sum();
    Ok(RocCurve { points, auc })
}

/// Mann-Whitney estimate of P(R_on > R_off) with ties counted half.
pub fn auc_rank(on: &DetectionRecord, off: &DetectionRecord) -> f64 {
    let mut off_sorted = off.results.clone();
    off_sorted.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    for &r in &on.results {
        let below = off_sorted.partition_point(|&x| x < r);
        let not_above = off_sorted.partition_point(|&x| x <= r);
        acc += below as f64 + 0.5 * (not_above - below) as f64;
    }
    acc / (on.results.len() as f64 * off.results.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOptimum {
    pub threshold: f64,
    pub objective: f64,
    /// (threshold, P_click_on (1 - p_dark)) for every candidate.
    pub values: Vec<(f64, f64)>,
}

/// Maximises P_click_on (1 - p_dark); ties go to the larger threshold.
pub fn optimize_threshold(
    on: &DetectionRecord,
    off: &DetectionRecord,
    thresholds: &[f64],
) -> Result<ThresholdOptimum, StatsError> {
    check_scales(on, off)?;
    if thresholds.is_empty() {
        return Err(StatsError::Invalid("no thresholds".into()));
    }
    let values: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&th| (th, on.click_fraction(th) * (1.0 - off.click_fraction(th))))
        .collect();
    let mut best = values[0];
    for &(th, v) in &values[1..] {
        if v > best.1 || (v == best.1 && th > best.0) {
            best = (th, v);
        }
    }
    Ok(ThresholdOptimum { threshold: best.0, objective: best.1, values })
}

/// Evenly spaced thresholds spanning both records.
pub fn threshold_grid(on: &DetectionRecord, off: &DetectionRecord, n: usize) -> Vec<f64> {
    let all = on.results.iter().chain(&off.results);
    let lo = all.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1).max(1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyFit {
    pub eta: f64,
    pub epsilon: f64,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    /// epsilon = 0 fit of 1 - exp(-eta n_bar).
    pub eta_restricted: f64,
    pub residuals_restricted: Vec<f64>,
    pub r_squared_restricted: f64,
}

fn detection_law(eta: f64, epsilon: f64, n_bar: f64) -> f64 {
    match eta_eff(eta, epsilon, n_bar) {
        Ok(e) => 1.0 - (-e * n_bar).exp(),
        Err(_) => f64::NAN,
    }
}

fn r_squared(points: &[(f64, f64)], residuals: &[f64]) -> f64 {
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 }
}

/// Least-squares fit of p_ideal = 1 - exp(-eta_eps(n) n) in (eta, epsilon),
/// plus the epsilon = 0 restricted fit.
pub fn fit_efficiency_curve(points: &[(f64, f64)]) -> Result<EfficiencyFit, StatsError> {
    let pts: Vec<(f64, f64)> = points.iter().cloned().filter(|p| p.0 > 0.0).collect();
    if pts.len() < 3 {
        return Err(StatsError::FitDiverged(format!("need 3 points with n_bar > 0, got {}", pts.len())));
    }
    let n_min = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let eps_floor = if n_min < 1.0 { -1.0 / (1.0 - n_min).max(1e-12) } else { -1.0 };
    let sse = |eta: f64, eps: f64| -> f64 {
        if !(eta > 0.0 && eta <= 1.0) || eps <= eps_floor.max(-0.99) || eps >= 0.99 {
            return f64::INFINITY;
        }
        pts.iter().map(|&(n, p)| (detection_law(eta, eps, n) - p).powi(2)).sum()
    };
    let eta_r = golden_min(|e| sse(e, 0.0), 1e-9, 1.0, 1e-14);
    let mut best: Option<(f64, f64, f64)> = None;
    for &(e0, s0) in &[(eta_r, 0.0), (eta_r, 0.1), (0.5 * eta_r, 0.05), ((eta_r * 1.2).min(1.0), -0.05)] {
        let mut x = vec![e0, s0];
        let mut val = f64::INFINITY;
        for _ in 0..6 {
            let r = nelder_mead(|v| sse(v[0], v[1]), &x, &[0.05, 0.05], 1e-18, 4000);
            let improved = r.value < val;
            x = r.x;
            val = r.value;
            if !improved {
                break;
            }
        }
        if best.map_or(true, |b| val < b.2) {
            best = Some((x[0], x[1], val));
        }
    }
    let (eta, epsilon, val) = best.expect("starts");
    if !val.is_finite() {
        return Err(StatsError::FitDiverged("non-finite residual".into()));
    }
    let residuals: Vec<f64> = pts.iter().map(|&(n, p)| p - detection_law(eta, epsilon, n)).collect();
    let residuals_restricted: Vec<f64> = pts.iter().map(|&(n, p)| p - detection_law(eta_r, 0.0, n)).collect();
    Ok(EfficiencyFit {
        eta,
        epsilon,
        r_squared: r_squared(&pts, &residuals),
        residuals,
        eta_restricted: eta_r,
        r_squared_restricted: r_squared(&pts, &residuals_restricted),
        residuals_restricted,
    })
}

/// eta_eps(0) tau / (hbar omega) (1 - p_dark), in 1/W.
pub fn responsivity(model: &DetectorModel) -> Result<f64, StatsError> {
    Ok(model.eta_at(0.0)? * model.tau / (HBAR * model.omega) * (1.0 - model.p_dark))
}

/// sqrt(2 Gamma) hbar omega / eta_eps(0), in W/sqrt(Hz).
pub fn nep(model: &DetectorModel) -> Result<f64, StatsError> {
    Ok((2.0 * model.gamma_dark).sqrt() * HBAR * model.omega / model.eta_at(0.0)?)
}

/// Per-threshold calibration extracted at n_bar = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub eta: f64,
    pub p_dark: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonCheck {
    /// model[threshold][n_bar index]
    pub model: Vec<Vec<f64>>,
    pub deviation: Vec<Vec<f64>>,
    pub max_deviation: f64,
}

/// Compares measured no-click probabilities `measured[threshold][n]` with
/// exp(-eta_eps(n) n)(1 - p_dark).
pub fn poisson_check(
    n_bars: &[f64],
    measured: &[Vec<f64>],
    calibration: &[Option<ThresholdCalibration>],
    epsilon: f64,
) -> Result<PoissonCheck, StatsError> {
    let mut model = Vec::with_capacity(measured.len());
    let mut deviation = Vec::with_capacity(measured.len());
    let mut max_deviation: f64 = 0.0;
    for (j, row) in measured.iter().enumerate() {
        let cal = calibration.get(j).copied().flatten().ok_or(StatsError::MissingCalibration(j))?;
        if row.len() != n_bars.len() {
            return Err(StatsError::Invalid(format!("row {j} has {} entries, expected {}", row.len(), n_bars.len())));
        }
        let mut mrow = Vec::with_capacity(row.len());
        let mut drow = Vec::with_capacity(row.len());
        for (&n, &p0) in n_bars.iter().zip(row) {
            let m = (-eta_eff(cal.eta, epsilon, n)? * n).exp() * (1.0 - cal.p_dark);
            mrow.push(m);
            drow.push((p0 - m).abs());
            max_deviation = max_deviation.max((p0 - m).abs());
        }
        model.push(mrow);
        deviation.push(drow);
    }
    Ok(PoissonCheck { model, deviation, max_deviation })
}

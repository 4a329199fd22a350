//! Photon-number calibration: system gain from thermal sweeps, input-line
//! attenuation, photon flux and dB error budgets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{BOLTZMANN, HBAR};
use crate::numerics::linear_fit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 2 points with distinct temperatures, got {0}")]
    InsufficientData(usize),
    #[error("fitted gain slope {0:e} is not positive")]
    NegativeSlope(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// sigma_dB = 10 log10(1 + sigma/A).
pub fn relative_to_db_error(rel: f64) -> f64 {
    linear_to_db(1.0 + rel)
}

pub fn db_error_to_relative(sigma_db: f64) -> f64 {
    db_to_linear(sigma_db) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainFit {
    pub gain_db: f64,
    pub t_preamp: f64,
    /// `None` when only two points are available.
    pub gain_db_err: Option<f64>,
    pub t_preamp_err: Option<f64>,
    pub residuals: Vec<f64>,
}

/// Linear fit of psd/k_B = G T + G T_preamp.
pub fn fit_system_gain(points: &[(f64, f64)]) -> Result<GainFit, CalibrationError> {
    if points.len() < 2 {
        return Err(CalibrationError::InsufficientData(points.len()));
    }
    let t: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1 / BOLTZMANN).collect();
    let fit = linear_fit(&t, &y).ok_or(CalibrationError::InsufficientData(points.len()))?;
    if !(fit.slope > 0.0) {
        return Err(CalibrationError::NegativeSlope(fit.slope));
    }
    let g = fit.slope;
    let t_pre = fit.intercept / g;
    let gain_db_err = fit.slope_err.map(|s| relative_to_db_error(s / g));
    let t_preamp_err = match (fit.slope_err, fit.intercept_err, fit.covariance) {
        (Some(sg), Some(sb), Some(cov)) => {
            let var = (sb / g).powi(2) + (fit.intercept * sg / (g * g)).powi(2)
                - 2.0 * fit.intercept / g.powi(3) * cov;
            Some(var.max(0.0).sqrt())
        }
        _ => None,
    };
    let residuals = t.iter().zip(&y).map(|(tt, yy)| (yy - g * tt - fit.intercept) * BOLTZMANN).collect();
    Ok(GainFit { gain_db: linear_to_db(g), t_preamp: t_pre, gain_db_err, t_preamp_err, residuals })
}

/// Thermal PSD model Delta-f-normalised: k_B G (T + T_preamp).
pub fn thermal_psd(temperature: f64, gain_db: f64, t_preamp: f64) -> f64 {
    BOLTZMANN * db_to_linear(gain_db) * (temperature + t_preamp)
}

/// A = S21 - G.
pub fn attenuation(s21_db: f64, gain_db: f64) -> f64 {
    s21_db - gain_db
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonFlux {
    pub n_bar: f64,
    /// |b| in sqrt(Hz).
    pub b_mag: f64,
}

pub fn photons_per_pulse(power_w: f64, tau: f64, omega: f64) -> Result<PhotonFlux, CalibrationError> {
    if !(power_w >= 0.0 && tau > 0.0 && omega > 0.0) {
        return Err(CalibrationError::Invalid(format!("power {power_w}, tau {tau}, omega {omega}")));
    }
    let rate = power_w / (HBAR * omega);
    Ok(PhotonFlux { n_bar: tau * rate, b_mag: rate.sqrt() })
}

/// Quadrature sum of relative errors, each converted from and back to dB.
pub fn propagate_db_error(components: &[f64]) -> Result<f64, CalibrationError> {
    if components.iter().any(|s| !(*s >= 0.0)) {
        return Err(CalibrationError::Invalid("dB sigmas must be >= 0".into()));
    }
    let rel = components.iter().map(|&s| db_error_to_relative(s).powi(2)).sum::<f64>().sqrt();
    Ok(relative_to_db_error(rel))
}

/// One line of the calibration budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub name: String,
    pub value_db: f64,
    pub sigma_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationChain {
    pub gain_db: f64,
    pub t_preamp: f64,
    pub attenuation_db: f64,
    pub sigma_db_components: Vec<f64>,
    /// Fixed corrections kept out of `attenuation_db`, e.g. extra cabling.
    pub extra: Vec<LedgerEntry>,
}

impl CalibrationChain {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let att = db_to_linear(self.attenuation_db);
        if !(att > 0.0 && att < 1.0) {
            return Err(CalibrationError::Invalid(format!("attenuation {} dB not a loss", self.attenuation_db)));
        }
        if !(db_to_linear(self.gain_db) > 0.0) {
            return Err(CalibrationError::Invalid("gain must be positive".into()));
        }
        Ok(())
    }

    /// Total input-line loss including the extra entries, dB.
    pub fn total_input_db(&self) -> f64 {
        self.attenuation_db + self.extra.iter().map(|e| e.value_db).sum::<f64>()
    }

    pub fn combined_sigma_db(&self) -> Result<f64, CalibrationError> {
        propagate_db_error(&self.sigma_db_components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attenuation_example() {
        assert!((attenuation(-14.8, 82.4) + 97.2).abs() < 1e-12);
        assert_eq!(attenuation(-3.0, 0.0), -3.0);
    }

    #[test]
    fn empty_and_single_error() {
        assert_eq!(propagate_db_error(&[]).unwrap(), 0.0);
        assert!((propagate_db_error(&[0.2]).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn two_point_fit_flags_errors() {
        let pts = [(1.0, thermal_psd(1.0, 82.4, 5.2)), (3.0, thermal_psd(3.0, 82.4, 5.2))];
        let fit = fit_system_gain(&pts).unwrap();
        assert!(fit.gain_db_err.is_none() && fit.t_preamp_err.is_none());
        assert!((fit.gain_db - 82.4).abs() < 1e-10);
    }

    #[test]
    fn zero_power_zero_photons() {
        assert_eq!(photons_per_pulse(0.0, 1e-6, 3e10).unwrap().n_bar, 0.0);
    }
}

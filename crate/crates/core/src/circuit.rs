//! Quarter-wave cavity terminated by a flux-tunable SQUID: mode solution,
//! resonance tuning, nonlinear coefficients and flux-sweep fitting.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{FLUX_QUANTUM, HBAR, REDUCED_FLUX_QUANTUM};
use crate::numerics::{bisect, golden_min, nelder_mead};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("flux ratio {0} is at or beyond frustration (cos(pi*flux) <= 0)")]
    FluxAtFrustration(f64),
    #[error("flux ratio {0} outside [0, 0.5)")]
    FluxOutOfRange(f64),
    #[error("mode constraint has no bracketed root in (0, pi/2)")]
    NoBracket,
    #[error("invalid circuit parameter: {0}")]
    InvalidParams(String),
    #[error("fit needs at least 4 points with distinct flux values, got {0}")]
    InsufficientData(usize),
    #[error("fit diverged: relative rms residual {rms:.3e} above threshold {threshold:.3e}")]
    FitDiverged { rms: f64, threshold: f64 },
}

/// Physical circuit constants. SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    pub l_cav: f64,
    pub c_cav: f64,
    pub i_c: f64,
    pub omega_plasma: f64,
    /// Explicit SQUID capacitance; derived from `i_c` and `omega_plasma` when `None`.
    pub c_squid: Option<f64>,
    pub l_loop: f64,
}

impl CircuitParams {
    /// Parameters extracted from the resonance-vs-flux fit of the measured device.
    pub fn fitted() -> Self {
        Self {
            l_cav: 2.023e-9,
            c_cav: 809.2e-15,
            i_c: 8e-6,
            omega_plasma: 2.0 * PI * 80e9,
            c_squid: None,
            l_loop: 4.846e-12,
        }
    }

    /// Design-stage estimate. Predates the loop-inductance correction, so `l_loop = 0`.
    pub fn design() -> Self {
        Self {
            l_cav: 1.917e-9,
            c_cav: 744.6e-15,
            l_loop: 0.0,
            ..Self::fitted()
        }
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let positive = [
            ("l_cav", self.l_cav),
            ("c_cav", self.c_cav),
            ("i_c", self.i_c),
            ("omega_plasma", self.omega_plasma),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CircuitError::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.l_loop.is_finite() && self.l_loop >= 0.0) {
            return Err(CircuitError::InvalidParams(format!("l_loop must be >= 0, got {}", self.l_loop)));
        }
        if let Some(c) = self.c_squid {
            if !(c.is_finite() && c >= 0.0) {
                return Err(CircuitError::InvalidParams(format!("c_squid must be >= 0, got {c}")));
            }
        }
        let beta = self.screening_parameter();
        if beta >= 1.0 {
            return Err(CircuitError::InvalidParams(format!("screening parameter {beta} >= 1")));
        }
        Ok(())
    }

    pub fn omega_quarter(&self) -> f64 {
        FRAC_PI_2 / (self.l_cav * self.c_cav).sqrt()
    }

    /// Rescales `l_cav` so the bare quarter-wave resonance equals `omega`, keeping `c_cav`.
    pub fn with_omega_quarter(mut self, omega: f64) -> Self {
        self.l_cav = (FRAC_PI_2 / omega).powi(2) / self.c_cav;
        self
    }

    /// Single-junction Josephson energy (J).
    pub fn josephson_energy(&self) -> f64 {
        REDUCED_FLUX_QUANTUM * self.i_c
    }

    pub fn junction_capacitance(&self) -> f64 {
        2.0 * crate::constants::ELEMENTARY_CHARGE * self.i_c / (HBAR * self.omega_plasma.powi(2))
    }

    pub fn squid_capacitance(&self) -> f64 {
        self.c_squid.unwrap_or_else(|| 2.0 * self.junction_capacitance())
    }

    /// beta_L = 2 L_loop I_c / Phi_0.
    pub fn screening_parameter(&self) -> f64 {
        2.0 * self.l_loop * self.i_c / FLUX_QUANTUM
    }

    /// Inductive energy of the cavity, (hbar/2e)^2 / L_cav.
    pub fn cavity_inductive_energy(&self) -> f64 {
        REDUCED_FLUX_QUANTUM.powi(2) / self.l_cav
    }

    /// Effective SQUID Josephson energy at bias, (Phi_0/2pi)^2 / L_S.
    /// Equals 2 E_J cos(pi flux) when `l_loop = 0`.
    pub fn squid_energy(&self, flux: f64) -> Result<f64, CircuitError> {
        Ok(REDUCED_FLUX_QUANTUM.powi(2) / squid_inductance(self, flux)?)
    }
}

fn check_flux(flux: f64) -> Result<(), CircuitError> {
    if !flux.is_finite() || flux < 0.0 {
        return Err(CircuitError::FluxOutOfRange(flux));
    }
    if flux >= 0.5 || (PI * flux).cos() <= 0.0 {
        return Err(CircuitError::FluxAtFrustration(flux));
    }
    Ok(())
}

/// Which form of the eigenmode condition produced `kd`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeMethod {
    #[default]
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSolution {
    pub method: ModeMethod,
    pub kd: f64,
    /// (pi/2)/(1+chi), always reported.
    pub kd_approx: f64,
    pub omega_0: f64,
    pub c_mode: f64,
    pub phi_zpf: f64,
    pub chi: f64,
    /// Residual of the transcendental constraint at `kd`.
    pub residual: f64,
}

/// Eigenmode from the dimensionless ratios chi = E_L,cav/E_S and C_S/C_cav.
/// `chi = 0` is the bare quarter-wave limit.
pub fn mode_from_ratios(
    l_cav: f64,
    c_cav: f64,
    chi: f64,
    cap_ratio: f64,
    method: ModeMethod,
) -> Result<ModeSolution, CircuitError> {
    let kd_approx = FRAC_PI_2 / (1.0 + chi);
    let constraint = |k: f64| {
        if chi == 0.0 {
            0.0
        } else {
            k * k.tan() - 1.0 / chi + cap_ratio * k * k
        }
    };
    let kd = match method {
        _ if chi == 0.0 => FRAC_PI_2,
        ModeMethod::Approximate => kd_approx,
        ModeMethod::Exact => bisect(constraint, 1e-6, FRAC_PI_2 - 1e-6).ok_or(CircuitError::NoBracket)?,
    };
    let omega_0 = kd / (l_cav * c_cav).sqrt();
    let participation =
        1.0 + (2.0 * kd).sin() / (2.0 * kd) + 2.0 * cap_ratio * kd.cos().powi(2);
    let c_mode = 0.5 * c_cav * participation;
    let phi_zpf = (2.0 * PI / FLUX_QUANTUM) * (HBAR / (2.0 * omega_0 * c_mode)).sqrt();
    Ok(ModeSolution {
        method,
        kd,
        kd_approx,
        omega_0,
        c_mode,
        phi_zpf,
        chi,
        residual: constraint(kd),
    })
}

/// Fundamental mode at the given flux bias (exact root of the constraint).
pub fn solve_mode_constraint(params: &CircuitParams, flux: f64) -> Result<ModeSolution, CircuitError> {
    solve_mode(params, flux, ModeMethod::Exact)
}

pub fn solve_mode(params: &CircuitParams, flux: f64, method: ModeMethod) -> Result<ModeSolution, CircuitError> {
    params.validate()?;
    let chi = squid_inductance(params, flux)? / params.l_cav;
    let cap_ratio = params.squid_capacitance() / params.c_cav;
    mode_from_ratios(params.l_cav, params.c_cav, chi, cap_ratio, method)
}

/// Phase difference phi_- minimising the SQUID potential at the given flux.
pub fn squid_phase(beta_l: f64, flux: f64) -> f64 {
    let x0 = PI * flux;
    if beta_l == 0.0 {
        return x0;
    }
    let stiffness = 2.0 / (PI * beta_l);
    let slope = |p: f64| stiffness * (p - x0) + p.sin();
    if stiffness > 1.0 {
        // Slope is strictly increasing with its single root within pi beta / 2 of x0.
        let (mut lo, mut hi) = (x0 - 0.5 * PI * beta_l, x0 + 0.5 * PI * beta_l);
        let mut p = x0;
        for _ in 0..60 {
            let s = slope(p);
            if s == 0.0 {
                return p;
            }
            if s > 0.0 { hi = p } else { lo = p }
            let next = p - s / (stiffness + p.cos());
            let next = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if (next - p).abs() <= 4.0 * f64::EPSILON * p.abs().max(1.0) {
                return next;
            }
            p = next;
        }
        return p;
    }
    let energy = |p: f64| (p - x0).powi(2) / (PI * beta_l) - p.cos();
    let coarse = golden_min(energy, x0 - FRAC_PI_2, x0 + FRAC_PI_2, 1e-10);
    // Polish on the stationarity condition; golden section stalls near sqrt(eps).
    bisect(slope, coarse - 1e-6, coarse + 1e-6).unwrap_or(coarse)
}

/// Josephson inductance of the SQUID including loop screening.
pub fn squid_inductance(params: &CircuitParams, flux: f64) -> Result<f64, CircuitError> {
    check_flux(flux)?;
    let beta = params.screening_parameter();
    if beta >= 1.0 {
        return Err(CircuitError::InvalidParams(format!("screening parameter {beta} >= 1")));
    }
    let phase = squid_phase(beta, flux);
    let c = phase.cos();
    if c <= 0.0 {
        return Err(CircuitError::FluxAtFrustration(flux));
    }
    Ok(FLUX_QUANTUM / (4.0 * PI * params.i_c * c))
}

pub fn resonance_frequency(params: &CircuitParams, flux: f64) -> Result<f64, CircuitError> {
    let ls = squid_inductance(params, flux)?;
    Ok(params.omega_quarter() / (1.0 + ls / params.l_cav))
}

/// Kerr and sextic coefficients (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearCoefficients {
    pub kerr: f64,
    pub sextic: f64,
}

pub fn nonlinear_coefficients(
    params: &CircuitParams,
    flux: f64,
    mode: &ModeSolution,
) -> Result<NonlinearCoefficients, CircuitError> {
    let e_s = params.squid_energy(flux)?;
    let c = mode.kd.cos();
    let kerr = -(e_s / (24.0 * HBAR)) * c.powi(4) * mode.phi_zpf.powi(4);
    let sextic = (e_s / (720.0 * HBAR)) * c.powi(6) * mode.phi_zpf.powi(6);
    Ok(NonlinearCoefficients { kerr, sextic })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpAmplitude {
    /// pi chi omega_0 (Phi_P/Phi_0) tan(pi flux)
    pub approximate: f64,
    /// pi (Phi_P/Phi_0) (E_S/hbar) tan(pi flux) cos^2(kd) phi_zpf^2
    pub exact: f64,
}

pub fn pump_amplitude(
    params: &CircuitParams,
    flux: f64,
    pump_flux: f64,
    mode: &ModeSolution,
) -> Result<PumpAmplitude, CircuitError> {
    check_flux(flux)?;
    if PI * pump_flux.abs() > 0.1 {
        log::warn!("pump flux ratio {pump_flux} is not small; linear pump model is inaccurate");
    }
    let tan = (PI * flux).tan();
    let e_s = params.squid_energy(flux)?;
    let approximate = (PI * mode.chi * mode.omega_0 * pump_flux * tan).abs();
    let exact =
        (PI * pump_flux * e_s / HBAR * tan * mode.kd.cos().powi(2) * mode.phi_zpf.powi(2)).abs();
    Ok(PumpAmplitude { approximate, exact })
}

/// Pump flux ratio giving `alpha` under the approximate pump formula.
pub fn pump_flux_for_amplitude(alpha: f64, flux: f64, mode: &ModeSolution) -> f64 {
    alpha / (PI * mode.chi * mode.omega_0 * (PI * flux).tan())
}

/// One point of a resonance-vs-flux sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcPoint {
    pub flux_ratio: f64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcFit {
    pub params: CircuitParams,
    pub omega_quarter: f64,
    pub i_c: f64,
    /// Covariance of (omega_quarter, i_c).
    pub covariance: [[f64; 2]; 2],
    /// Measured minus model, Hz.
    pub residuals_hz: Vec<f64>,
    pub rms_relative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcFitOptions {
    /// Maximum accepted relative rms residual.
    pub max_rms_relative: f64,
    pub starts: usize,
}

impl Default for DcFitOptions {
    fn default() -> Self {
        Self { max_rms_relative: 1e-3, starts: 5 }
    }
}

/// Least-squares fit of (omega_quarter, I_c) to a resonance-vs-flux sweep.
/// `c_cav`, `omega_plasma` and `l_loop` are held at the initial guess.
pub fn fit_dc_sweep(
    data: &[DcPoint],
    initial: &CircuitParams,
    opts: DcFitOptions,
) -> Result<DcFit, CircuitError> {
    let mut fluxes: Vec<f64> = data.iter().map(|p| p.flux_ratio).collect();
    fluxes.sort_by(f64::total_cmp);
    fluxes.dedup();
    if data.len() < 4 || fluxes.len() < 4 {
        return Err(CircuitError::InsufficientData(fluxes.len().min(data.len())));
    }
    for p in data {
        check_flux(p.flux_ratio)?;
    }
    initial.validate()?;
    let wq0 = initial.omega_quarter();
    let ic0 = initial.i_c;
    let build = |x: &[f64]| {
        let mut p = initial.with_omega_quarter(wq0 * x[0]);
        p.i_c = ic0 * x[1];
        p
    };
    let model = |p: &CircuitParams, flux: f64| -> f64 {
        match resonance_frequency(p, flux) {
            Ok(w) => w / (2.0 * PI),
            Err(_) => f64::NAN,
        }
    };
    let cost = |x: &[f64]| -> f64 {
        if x[0] <= 0.0 || x[1] <= 0.0 {
            return f64::INFINITY;
        }
        let p = build(x);
        if p.screening_parameter() >= 1.0 {
            return f64::INFINITY;
        }
        let s: f64 = data
            .iter()
            .map(|d| ((model(&p, d.flux_ratio) - d.freq_hz) / d.freq_hz).powi(2))
            .sum();
        if s.is_finite() { s } else { f64::INFINITY }
    };
    let offsets = [(0.0, 0.0), (0.1, 0.1), (-0.1, -0.1), (0.1, -0.1), (-0.1, 0.1)];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for &(a, b) in offsets.iter().take(opts.starts.max(1)) {
        let mut x = vec![1.0 + a, 1.0 + b];
        let mut val = f64::INFINITY;
        // Restarts shake the simplex out of premature collapse.
        for _ in 0..4 {
            let r = nelder_mead(cost, &x, &[0.02, 0.05], 1e-15, 4000);
            let improved = r.value < val;
            x = r.x;
            val = r.value;
            if !improved {
                break;
            }
        }
        if best.as_ref().map_or(true, |(_, v)| val < *v) {
            best = Some((x, val));
        }
    }
    let (x, _) = best.expect("at least one start");
    let fitted = build(&x);
    let residuals_hz: Vec<f64> = data
        .iter()
        .map(|d| d.freq_hz - model(&fitted, d.flux_ratio))
        .collect();
    let n = data.len() as f64;
    let rms_relative = (data
        .iter()
        .zip(&residuals_hz)
        .map(|(d, r)| (r / d.freq_hz).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !rms_relative.is_finite() || rms_relative > opts.max_rms_relative {
        return Err(CircuitError::FitDiverged { rms: rms_relative, threshold: opts.max_rms_relative });
    }
    let covariance = dc_covariance(data, &fitted, &residuals_hz, &model);
    Ok(DcFit {
        omega_quarter: fitted.omega_quarter(),
        i_c: fitted.i_c,
        params: fitted,
        covariance,
        residuals_hz,
        rms_relative,
    })
}

/// Gauss-Newton covariance s^2 (J^T J)^-1 with a finite-difference Jacobian.
fn dc_covariance(
    data: &[DcPoint],
    fitted: &CircuitParams,
    residuals: &[f64],
    model: &dyn Fn(&CircuitParams, f64) -> f64,
) -> [[f64; 2]; 2] {
    let wq = fitted.omega_quarter();
    let hw = wq * 1e-6;
    let hi = fitted.i_c * 1e-6;
    let mut jtj = [[0.0; 2]; 2];
    for d in data {
        let up_w = fitted.with_omega_quarter(wq + hw);
        let dn_w = fitted.with_omega_quarter(wq - hw);
        let mut up_i = *fitted;
        up_i.i_c += hi;
        let mut dn_i = *fitted;
        dn_i.i_c -= hi;
        let g = [
            (model(&up_w, d.flux_ratio) - model(&dn_w, d.flux_ratio)) / (2.0 * hw),
            (model(&up_i, d.flux_ratio) - model(&dn_i, d.flux_ratio)) / (2.0 * hi),
        ];
        for a in 0..2 {
            for b in 0..2 {
                jtj[a][b] += g[a] * g[b];
            }
        }
    }
    let dof = (data.len() as f64 - 2.0).max(1.0);
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof;
    let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
    if det.abs() < f64::MIN_POSITIVE {
        return [[f64::NAN; 2]; 2];
    }
    [
        [s2 * jtj[1][1] / det, -s2 * jtj[0][1] / det],
        [-s2 * jtj[1][0] / det, s2 * jtj[0][0] / det],
    ]
}

/// Noise-free sweep generated from `params` at the given flux ratios.
pub fn synthetic_dc_sweep(params: &CircuitParams, fluxes: &[f64]) -> Result<Vec<DcPoint>, CircuitError> {
    fluxes
        .iter()
        .map(|&f| {
            Ok(DcPoint { flux_ratio: f, freq_hz: resonance_frequency(params, f)? / (2.0 * PI) })
        })
        .collect()
}

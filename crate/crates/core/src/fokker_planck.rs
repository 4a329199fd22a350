//! One-dimensional Fokker-Planck evolution of the slow-quadrature density,
//! survival, escape rates and switching probabilities.
//!
//! Finite-volume scheme with exponentially fitted interface fluxes
//! J = (D/h)[B(w) W_i - B(-w) W_{i+1}], w = (U_{i+1} - U_i)/D, B(w) = w/(e^w - 1),
//! backward Euler in time. Half cells at the reflecting ends make the
//! trapezoidal mass an exact invariant and exp(-U/D) the exact discrete fixed point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{linear_fit, trapezoid};
use crate::potential::{
    barrier_maximum, outer_minimum, potential, q_span, uniform_grid, ExtremumKind, OperatingPoint, PotentialProfile,
};
use crate::protocol::PulseSequence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpError {
    #[error("density fell to {value:e} at t = {time:e} s (scheme violation)")]
    NegativeDensity { value: f64, time: f64 },
    #[error("cell Peclet number {peclet:.3} exceeds 2; refine the grid")]
    GridTooCoarse { peclet: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("potential and density grids differ")]
    GridMismatch,
    #[error("no exponential regime: best R^2 = {best_r2:.5} over {points} points in the survival window")]
    NoExponentialRegime { best_r2: f64, points: usize },
    #[error("potential has no barrier around its central minimum")]
    NoBarrier,
}

pub const DEFAULT_POINTS: usize = 2049;
const MAX_AUTO_POINTS: usize = (1 << 20) + 1;
pub const PECLET_LIMIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpConfig {
    pub n_points: usize,
    pub q_extent: f64,
    pub dt: f64,
    pub q_threshold: f64,
    pub diffusion: f64,
}

impl FpConfig {
    /// N = 2049, dt = 0.5 ns, extent 1.5 x outer minimum, threshold at the barrier top.
    /// N doubles (in intervals) while the untilted potential breaks the Peclet limit.
    pub fn for_operating_point(op: &OperatingPoint) -> Self {
        let q_extent = 1.5 * outer_minimum(op).unwrap_or_else(|| q_span(op));
        let q_threshold = barrier_maximum(op)
            .or_else(|| outer_minimum(op).map(|q| 0.5 * q))
            .unwrap_or(0.5 * q_extent);
        let diffusion = op.diffusion();
        let mut n_points = DEFAULT_POINTS;
        while n_points < MAX_AUTO_POINTS {
            let u: Vec<f64> = uniform_grid(q_extent, n_points).iter().map(|&q| potential(q, op, 0.0)).collect();
            if max_cell_peclet(&u, diffusion) <= PECLET_LIMIT {
                break;
            }
            n_points = 2 * n_points - 1;
        }
        Self { n_points, q_extent, dt: 0.5e-9, q_threshold, diffusion }
    }

    pub fn validate(&self) -> Result<(), FpError> {
        let bad = |m: String| Err(FpError::InvalidConfig(m));
        if self.n_points < 5 {
            return bad(format!("n_points = {} < 5", self.n_points));
        }
        if !(self.q_extent > 0.0 && self.dt > 0.0 && self.diffusion > 0.0) {
            return bad("q_extent, dt and diffusion must be > 0".into());
        }
        if !(self.q_threshold > 0.0 && self.q_threshold < self.q_extent) {
            return bad(format!("q_threshold {} not in (0, q_extent)", self.q_threshold));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.q_extent, self.n_points)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.q_extent / (self.n_points - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub q_grid: Vec<f64>,
    pub w_values: Vec<f64>,
    pub time: f64,
}

impl DensityProfile {
    /// Centred Gaussian, renormalised so the trapezoidal mass is 1.
    pub fn gaussian(q_grid: Vec<f64>, variance: f64, time: f64) -> Self {
        let w: Vec<f64> = q_grid.iter().map(|q| (-q * q / (2.0 * variance)).exp()).collect();
        let mut d = Self { q_grid, w_values: w, time };
        d.normalize();
        d
    }

    /// Boltzmann density exp(-U/D)/Z on the profile's grid.
    pub fn boltzmann(profile: &PotentialProfile, diffusion: f64) -> Self {
        let umin = profile.u_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let w = profile.u_values.iter().map(|u| (-(u - umin) / diffusion).exp()).collect();
        let mut d = Self { q_grid: profile.q_grid.clone(), w_values: w, time: f64::INFINITY };
        d.normalize();
        d
    }

    pub fn normalize(&mut self) {
        let m = self.mass();
        for w in &mut self.w_values {
            *w /= m;
        }
    }

    pub fn mass(&self) -> f64 {
        trapezoid(&self.q_grid, &self.w_values)
    }

    /// Cumulative trapezoidal integral from the left edge up to `q`.
    fn integral_to(&self, q: f64) -> f64 {
        let g = &self.q_grid;
        let w = &self.w_values;
        let mut acc = 0.0;
        for i in 0..g.len() - 1 {
            if q >= g[i + 1] {
                acc += 0.5 * (g[i + 1] - g[i]) * (w[i] + w[i + 1]);
            } else {
                if q > g[i] {
                    let f = (q - g[i]) / (g[i + 1] - g[i]);
                    let wq = w[i] + f * (w[i + 1] - w[i]);
                    acc += 0.5 * (q - g[i]) * (w[i] + wq);
                }
                break;
            }
        }
        acc
    }

    /// Probability inside [-q_th, q_th].
    pub fn mass_within(&self, q_th: f64) -> f64 {
        self.integral_to(q_th) - self.integral_to(-q_th)
    }

    pub fn variance(&self) -> f64 {
        let m1: Vec<f64> = self.q_grid.iter().zip(&self.w_values).map(|(q, w)| q * w).collect();
        let m2: Vec<f64> = self.q_grid.iter().zip(&self.w_values).map(|(q, w)| q * q * w).collect();
        let mean = trapezoid(&self.q_grid, &m1);
        trapezoid(&self.q_grid, &m2) - mean * mean
    }

    /// L1 distance of the normalised densities.
    pub fn l1_distance(&self, other: &DensityProfile) -> f64 {
        let d: Vec<f64> = self.w_values.iter().zip(&other.w_values).map(|(a, b)| (a - b).abs()).collect();
        trapezoid(&self.q_grid, &d)
    }

    /// Probability mass in each bin `[edges[k], edges[k+1])`.
    pub fn bin_masses(&self, edges: &[f64]) -> Vec<f64> {
        let cum: Vec<f64> = edges.iter().map(|&e| self.integral_to(e)).collect();
        cum.windows(2).map(|c| c[1] - c[0]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("q,w\n");
        for (q, w) in self.q_grid.iter().zip(&self.w_values) {
            s.push_str(&format!("{q:.17e},{w:.17e}\n"));
        }
        s
    }
}

#[inline]
fn bernoulli(w: f64) -> f64 {
    if w.abs() < 1e-8 {
        1.0 - 0.5 * w
    } else if w > 700.0 {
        w * (-w).exp()
    } else {
        w / w.exp_m1()
    }
}

/// Largest cell Peclet number |U_{i+1} - U_i| / D.
pub fn max_cell_peclet(u_values: &[f64], diffusion: f64) -> f64 {
    u_values.windows(2).map(|u| (u[1] - u[0]).abs() / diffusion).fold(0.0, f64::max)
}

/// Backward-Euler propagator for a fixed potential and step. The tridiagonal
/// system is constant, so it is factored once and each step only substitutes.
#[derive(Debug, Clone)]
pub struct FpSolver {
    lower: Vec<f64>,
    /// Superdiagonal divided by the running pivot.
    upper_scaled: Vec<f64>,
    inv_pivot: Vec<f64>,
    volume_over_dt: Vec<f64>,
    pub dt: f64,
}

impl FpSolver {
    pub fn new(u_values: &[f64], h: f64, diffusion: f64, dt: f64) -> Result<Self, FpError> {
        let n = u_values.len();
        let peclet = max_cell_peclet(u_values, diffusion);
        if peclet > PECLET_LIMIT {
            return Err(FpError::GridTooCoarse { peclet });
        }
        let c = diffusion / h;
        let mut volume_over_dt = vec![h / dt; n];
        volume_over_dt[0] *= 0.5;
        volume_over_dt[n - 1] *= 0.5;
        let mut lower = vec![0.0; n];
        let mut diag = volume_over_dt.clone();
        let mut upper = vec![0.0; n];
        for i in 0..n - 1 {
            let w = (u_values[i + 1] - u_values[i]) / diffusion;
            let fwd = c * bernoulli(w);
            let bwd = c * bernoulli(-w);
            // Flux i -> i+1 leaves cell i and enters cell i+1.
            diag[i] += fwd;
            upper[i] = -bwd;
            diag[i + 1] += bwd;
            lower[i + 1] = -fwd;
        }
        let mut upper_scaled = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        inv_pivot[0] = 1.0 / diag[0];
        for i in 1..n {
            upper_scaled[i] = upper[i - 1] * inv_pivot[i - 1];
            inv_pivot[i] = 1.0 / (diag[i] - lower[i] * upper_scaled[i]);
        }
        Ok(Self { lower, upper_scaled, inv_pivot, volume_over_dt, dt })
    }

    pub fn step(&self, w: &mut [f64]) {
        let n = w.len();
        let mut prev = self.volume_over_dt[0] * w[0] * self.inv_pivot[0];
        w[0] = prev;
        for i in 1..n {
            prev = (self.volume_over_dt[i] * w[i] - self.lower[i] * prev) * self.inv_pivot[i];
            w[i] = prev;
        }
        for i in (0..n - 1).rev() {
            w[i] -= self.upper_scaled[i + 1] * w[i + 1];
        }
    }
}

/// A stretch of constant potential.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub potential: &'a PotentialProfile,
    pub duration: f64,
}

/// Evolves through consecutive segments; `observe(t, w)` sees every step.
pub fn evolve_segments<F: FnMut(f64, &[f64]) -> bool>(
    w0: &DensityProfile,
    segments: &[Segment<'_>],
    cfg: &FpConfig,
    mut observe: F,
) -> Result<DensityProfile, FpError> {
    cfg.validate()?;
    let n = w0.q_grid.len();
    let h = cfg.spacing();
    let mut w = w0.w_values.clone();
    let mut t = w0.time;
    for seg in segments {
        if seg.potential.q_grid.len() != n
            || (seg.potential.q_grid[0] - w0.q_grid[0]).abs() > 1e-12 * cfg.q_extent
        {
            return Err(FpError::GridMismatch);
        }
        if seg.duration <= 0.0 {
            continue;
        }
        let steps = (seg.duration / cfg.dt).ceil().max(1.0) as usize;
        let dt = seg.duration / steps as f64;
        let solver = FpSolver::new(&seg.potential.u_values, h, cfg.diffusion, dt)?;
        let t_start = t;
        for k in 0..steps {
            solver.step(&mut w);
            t = t_start + (k + 1) as f64 * dt;
            let wmin = w.iter().cloned().fold(f64::INFINITY, f64::min);
            if wmin < -1e-12 {
                return Err(FpError::NegativeDensity { value: wmin, time: t });
            }
            if !observe(t, &w) {
                return Ok(DensityProfile { q_grid: w0.q_grid.clone(), w_values: w, time: t });
            }
        }
    }
    Ok(DensityProfile { q_grid: w0.q_grid.clone(), w_values: w, time: t })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    pub final_density: DensityProfile,
    pub snapshots: Vec<DensityProfile>,
}

/// Evolves `w0` in a static potential until `t_final`, recording a snapshot
/// every `snapshot_interval` seconds when given.
pub fn evolve(
    w0: &DensityProfile,
    potential: &PotentialProfile,
    cfg: &FpConfig,
    t_final: f64,
    snapshot_interval: Option<f64>,
) -> Result<Evolution, FpError> {
    let mut snapshots = Vec::new();
    let mut next = 0.0;
    let mut take = |t: f64, w: &[f64]| {
        if let Some(iv) = snapshot_interval {
            if t - w0.time >= next - 1e-3 * cfg.dt {
                snapshots.push(DensityProfile { q_grid: w0.q_grid.clone(), w_values: w.to_vec(), time: t });
                next += iv;
            }
        }
        true
    };
    take(w0.time, &w0.w_values);
    let final_density = evolve_segments(w0, &[Segment { potential, duration: t_final - w0.time }], cfg, take)?;
    Ok(Evolution { final_density, snapshots })
}

pub fn survival_probability(snapshots: &[DensityProfile], q_th: f64) -> Vec<(f64, f64)> {
    snapshots.iter().map(|d| (d.time, d.mass_within(q_th))).collect()
}

/// Survival S(t) sampled every `sample_interval`, stopping once S < `stop_below` or at `t_max`.
pub fn survival_curve(
    w0: &DensityProfile,
    potential: &PotentialProfile,
    cfg: &FpConfig,
    t_max: f64,
    sample_interval: f64,
    stop_below: f64,
) -> Result<Vec<(f64, f64)>, FpError> {
    let grid = w0.q_grid.clone();
    let mut out = vec![(w0.time, w0.mass_within(cfg.q_threshold))];
    let mut next = w0.time + sample_interval;
    evolve_segments(w0, &[Segment { potential, duration: t_max - w0.time }], cfg, |t, w| {
        if t >= next - 1e-3 * cfg.dt {
            let d = DensityProfile { q_grid: grid.clone(), w_values: w.to_vec(), time: t };
            let s = d.mass_within(cfg.q_threshold);
            out.push((t, s));
            next += sample_interval;
            return s >= stop_below;
        }
        true
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeFit {
    /// Gamma in 1/s.
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

pub const ESCAPE_MIN_POINTS: usize = 10;

/// Fits ln S = -Gamma t + c over samples with S in [0.2, 0.9]. Leading points
/// are dropped one at a time until R^2 >= 0.99, keeping at least 10 points.
pub fn escape_rate(survival: &[(f64, f64)]) -> Result<EscapeFit, FpError> {
    let pts: Vec<(f64, f64)> = survival
        .iter()
        .filter(|(_, s)| *s >= 0.2 && *s <= 0.9)
        .map(|&(t, s)| (t, s.ln()))
        .collect();
    let mut best_r2 = f64::NEG_INFINITY;
    if pts.len() >= ESCAPE_MIN_POINTS {
        for start in 0..=pts.len() - ESCAPE_MIN_POINTS {
            let (t, y): (Vec<f64>, Vec<f64>) = pts[start..].iter().cloned().unzip();
            let Some(fit) = linear_fit(&t, &y) else { continue };
            best_r2 = best_r2.max(fit.r_squared);
            if fit.r_squared >= 0.99 && fit.slope < 0.0 {
                return Ok(EscapeFit {
                    rate: -fit.slope,
                    intercept: fit.intercept,
                    r_squared: fit.r_squared,
                    window: (t[0], t[t.len() - 1]),
                    n_points: t.len(),
                });
            }
        }
    }
    Err(FpError::NoExponentialRegime { best_r2, points: pts.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionProbabilities {
    pub p_click: f64,
    pub p_dark: f64,
    pub p_ideal: f64,
}

/// Density at the end of the pump with a probe of amplitude `b_mag` during the probe window.
pub fn switching_density(
    op: &OperatingPoint,
    b_mag: f64,
    pulse: &PulseSequence,
    cfg: &FpConfig,
) -> Result<DensityProfile, FpError> {
    let grid = cfg.grid();
    let flat = PotentialProfile::on_grid(op, 0.0, grid.clone());
    let tilted = PotentialProfile::on_grid(op, op.tilt_for(b_mag), grid.clone());
    let (t_on, t_off) = pulse.probe_window();
    let tau_p = pulse.timing.pump_duration;
    let w0 = DensityProfile::gaussian(grid, op.vacuum_variance(), 0.0);
    let segments = [
        Segment { potential: &flat, duration: t_on },
        Segment { potential: if b_mag > 0.0 { &tilted } else { &flat }, duration: t_off - t_on },
        Segment { potential: &flat, duration: tau_p - t_off },
    ];
    evolve_segments(&w0, &segments, cfg, |_, _| true)
}

pub fn probabilities_from(dark: &DensityProfile, probed: &DensityProfile, q_th: f64) -> DetectionProbabilities {
    let p_dark = 1.0 - dark.mass_within(q_th);
    let p_click = 1.0 - probed.mass_within(q_th);
    let p_ideal = if p_dark < 1.0 { (p_click - p_dark) / (1.0 - p_dark) } else { 0.0 };
    DetectionProbabilities { p_click, p_dark, p_ideal }
}

pub fn detection_probabilities(
    op: &OperatingPoint,
    b_mag: f64,
    pulse: &PulseSequence,
    cfg: &FpConfig,
) -> Result<DetectionProbabilities, FpError> {
    let dark = switching_density(op, 0.0, pulse, cfg)?;
    let probed = if b_mag > 0.0 { switching_density(op, b_mag, pulse, cfg)? } else { dark.clone() };
    Ok(probabilities_from(&dark, &probed, cfg.q_threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KramersRate {
    pub total: f64,
    pub left: f64,
    pub right: f64,
    pub barrier_left: Option<f64>,
    pub barrier_right: Option<f64>,
}

/// Overdamped high-barrier escape rate from the central well.
pub fn kramers_rate(potential: &PotentialProfile, diffusion: f64) -> Result<KramersRate, FpError> {
    let ext = &potential.extrema;
    let centre = ext
        .iter()
        .filter(|e| e.kind == ExtremumKind::Min)
        .min_by(|a, b| a.q.abs().total_cmp(&b.q.abs()))
        .ok_or(FpError::NoBarrier)?;
    let left = ext
        .iter()
        .filter(|e| e.kind == ExtremumKind::Max && e.q < centre.q)
        .max_by(|a, b| a.q.total_cmp(&b.q));
    let right = ext
        .iter()
        .filter(|e| e.kind == ExtremumKind::Max && e.q > centre.q)
        .min_by(|a, b| a.q.total_cmp(&b.q));
    if left.is_none() && right.is_none() {
        return Err(FpError::NoBarrier);
    }
    let rate = |b: Option<&crate::potential::Extremum>| -> (f64, Option<f64>) {
        match b {
            Some(b) => {
                let height = b.u - centre.u;
                let r = (centre.curvature * b.curvature.abs()).sqrt() / (2.0 * PI) * (-height / diffusion).exp();
                (r, Some(height))
            }
            None => (0.0, None),
        }
    };
    let (l, hl) = rate(left);
    let (r, hr) = rate(right);
    Ok(KramersRate { total: l + r, left: l, right: r, barrier_left: hl, barrier_right: hr })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_identity() {
        for w in [-30.0, -1.0, -1e-9, 0.0, 1e-9, 0.5, 20.0] {
            let lhs = bernoulli(w) / bernoulli(-w);
            assert!((lhs / (-w as f64).exp() - 1.0).abs() < 1e-9, "w = {w}");
        }
    }

    #[test]
    fn exponential_survival_recovered() {
        let g = 167e3;
        let s: Vec<(f64, f64)> = (0..200).map(|k| {
            let t = k as f64 * 5e-8;
            (t, (-g * t).exp())
        }).collect();
        let fit = escape_rate(&s).unwrap();
        assert!((fit.rate / g - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_points_rejected() {
        let s = [(0.0, 0.85), (1.0, 0.5), (2.0, 0.3)];
        assert!(matches!(escape_rate(&s), Err(FpError::NoExponentialRegime { .. })));
    }

    #[test]
    fn default_config_is_valid() {
        let op = OperatingPoint::reference();
        let cfg = FpConfig::for_operating_point(&op);
        cfg.validate().unwrap();
        let prof = PotentialProfile::on_grid(&op, 0.0, cfg.grid());
        assert!(max_cell_peclet(&prof.u_values, cfg.diffusion) < 2.0);
    }
}

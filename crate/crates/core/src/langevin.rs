//! Semiclassical stochastic dynamics of the (Q, P) quadratures, ensemble
//! moments, state classification and phase-diagram mapping.

use std::f64::consts::FRAC_PI_4;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::numerics::derive_seed;
use crate::potential::OperatingPoint;
use crate::protocol::PulseSequence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LangevinError {
    #[error("time step {dt:e} s violates dt*(|alpha|+alpha_c0) = {product:.3} < 0.1")]
    UnstableStep { dt: f64, product: f64 },
    #[error("state became non-finite at step {0}")]
    NonFinite(usize),
    #[error("window [{0}, {1}] contains no samples")]
    EmptyWindow(f64, f64),
    #[error("all samples sit at the origin; no principal axis")]
    DegenerateCovariance,
    #[error("need at least 2 samples")]
    TooFewSamples,
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Coherent probe b = |b| exp(-i phase), active on `[t_on, t_off)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeField {
    /// |b| in sqrt(Hz).
    pub b_mag: f64,
    pub phase: f64,
    pub t_on: f64,
    pub t_off: f64,
}

impl ProbeField {
    pub fn off() -> Self {
        Self { b_mag: 0.0, phase: 0.0, t_on: 0.0, t_off: 0.0 }
    }

    /// Phase theta_P/2 + pi/4, which puts the whole tilt on Q.
    pub fn optimal(op: &OperatingPoint, b_mag: f64, t_on: f64, t_off: f64) -> Self {
        Self { b_mag, phase: optimal_probe_phase(op), t_on, t_off }
    }

    #[inline]
    pub fn active(&self, t: f64) -> bool {
        self.b_mag > 0.0 && t >= self.t_on && t < self.t_off
    }

    pub fn mean_photons(&self) -> f64 {
        self.b_mag * self.b_mag * (self.t_off - self.t_on).max(0.0)
    }
}

pub fn optimal_probe_phase(op: &OperatingPoint) -> f64 {
    0.5 * op.theta_p + FRAC_PI_4
}

#[inline]
fn drift_terms(q: f64, p: f64, op: &OperatingPoint, alpha: f64, force: (f64, f64)) -> (f64, f64) {
    let ac0 = op.alpha_c0();
    let k6 = 6.0 * op.kerr;
    let dq = (alpha - ac0) * q + op.delta * p + k6 * p * (q * q + p * p) - force.0;
    let dp = -(alpha + ac0) * p - op.delta * q - k6 * q * (p * p + q * q) - force.1;
    (dq, dp)
}

#[inline]
fn probe_force(op: &OperatingPoint, probe: &ProbeField, t: f64) -> (f64, f64) {
    if !probe.active(t) {
        return (0.0, 0.0);
    }
    let amp = (2.0 * op.kappa).sqrt() * probe.b_mag;
    let arg = optimal_probe_phase(op) - probe.phase;
    (amp * arg.cos(), amp * arg.sin())
}

/// Deterministic part of the equations of motion with the pump on.
pub fn drift(q: f64, p: f64, op: &OperatingPoint, probe: &ProbeField, t: f64) -> (f64, f64) {
    drift_terms(q, p, op, op.alpha_mag, probe_force(op, probe, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum InitialState {
    /// Gaussian with the unpumped stationary variance n_T + 1/2.
    #[default]
    Stationary,
    Fixed(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt: f64,
    pub noise: bool,
    pub initial: InitialState,
    /// Keep every n-th sample in recorded traces.
    pub record_every: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { dt: 1e-9, noise: true, initial: InitialState::Stationary, record_every: 1 }
    }
}

/// Stochastic Euler integration from t = 0 to `t_final`. `observe(t, q, p)`
/// sees the state at every grid time t_k = k dt, k = 0..=n. Returns the final state.
pub fn integrate<F: FnMut(f64, f64, f64)>(
    op: &OperatingPoint,
    probe: &ProbeField,
    pulse: &PulseSequence,
    t_final: f64,
    opts: &SimOptions,
    seed: u64,
    mut observe: F,
) -> Result<(f64, f64), LangevinError> {
    let dt = opts.dt;
    if !(dt > 0.0) || !t_final.is_finite() || t_final < 0.0 {
        return Err(LangevinError::Invalid(format!("dt = {dt}, t_final = {t_final}")));
    }
    let product = dt * (op.alpha_mag + op.alpha_c0());
    if product >= 0.1 {
        return Err(LangevinError::UnstableStep { dt, product });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = move || -> f64 { StandardNormal.sample(&mut rng) };
    let (mut q, mut p) = match opts.initial {
        InitialState::Fixed(q, p) => (q, p),
        InitialState::Stationary => {
            let s = op.vacuum_variance().sqrt();
            (s * gauss(), s * gauss())
        }
    };
    let sigma = if opts.noise {
        (op.total_loss() * (op.n_thermal + 0.5) * dt).sqrt()
    } else {
        0.0
    };
    let n = (t_final / dt).round() as usize;
    observe(0.0, q, p);
    for k in 0..n {
        let t = k as f64 * dt;
        let alpha = if pulse.pump_on(t) { op.alpha_mag } else { 0.0 };
        let (dq, dp) = drift_terms(q, p, op, alpha, probe_force(op, probe, t));
        q += dq * dt;
        p += dp * dt;
        if opts.noise {
            q += sigma * gauss();
            p += sigma * gauss();
        }
        if !(q.is_finite() && p.is_finite()) {
            return Err(LangevinError::NonFinite(k + 1));
        }
        observe((k + 1) as f64 * dt, q, p);
    }
    Ok((q, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureTrace {
    /// Spacing of recorded samples (s).
    pub dt: f64,
    pub samples: Vec<(f64, f64)>,
    pub seed: u64,
    pub op: OperatingPoint,
    pub probe: ProbeField,
}

impl QuadratureTrace {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn duration(&self) -> f64 {
        (self.samples.len().saturating_sub(1)) as f64 * self.dt
    }

    /// Little-endian f64 (Q, P) pairs.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.samples.len() * 16);
        for &(q, p) in &self.samples {
            out.extend_from_slice(&q.to_le_bytes());
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Vec<(f64, f64)> {
        bytes
            .chunks_exact(16)
            .map(|c| {
                let q = f64::from_le_bytes(c[..8].try_into().unwrap());
                let p = f64::from_le_bytes(c[8..].try_into().unwrap());
                (q, p)
            })
            .collect()
    }
}

pub fn simulate_trajectory(
    op: &OperatingPoint,
    probe: &ProbeField,
    pulse: &PulseSequence,
    t_final: f64,
    opts: &SimOptions,
    seed: u64,
) -> Result<QuadratureTrace, LangevinError> {
    let every = opts.record_every.max(1);
    let mut samples = Vec::with_capacity((t_final / opts.dt) as usize / every + 2);
    let mut k = 0usize;
    integrate(op, probe, pulse, t_final, opts, seed, |_, q, p| {
        if k % every == 0 {
            samples.push((q, p));
        }
        k += 1;
    })?;
    Ok(QuadratureTrace { dt: opts.dt * every as f64, samples, seed, op: *op, probe: *probe })
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble(
    op: &OperatingPoint,
    probe: &ProbeField,
    pulse: &PulseSequence,
    t_final: f64,
    opts: &SimOptions,
    master_seed: u64,
    n: usize,
    exec: Execution,
) -> Result<Vec<QuadratureTrace>, LangevinError> {
    exec.map_range(n, |i| simulate_trajectory(op, probe, pulse, t_final, opts, derive_seed(master_seed, i as u64)))
        .into_iter()
        .collect()
}

/// Raw power sums of (X, Y) samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawMoments {
    pub n: usize,
    pub sx: f64,
    pub sy: f64,
    pub sxx: f64,
    pub syy: f64,
    pub sxy: f64,
}

impl RawMoments {
    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    pub fn from_samples(samples: &[(f64, f64)]) -> Self {
        let mut m = Self::default();
        for &(x, y) in samples {
            m.push(x, y);
        }
        m
    }

    pub fn merge(&mut self, o: &RawMoments) {
        self.n += o.n;
        self.sx += o.sx;
        self.sy += o.sy;
        self.sxx += o.sxx;
        self.syy += o.syy;
        self.sxy += o.sxy;
    }

    /// Sums after the rotation x' = x cos(a) + y sin(a), y' = -x sin(a) + y cos(a).
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            n: self.n,
            sx: c * self.sx + s * self.sy,
            sy: -s * self.sx + c * self.sy,
            sxx: c * c * self.sxx + 2.0 * c * s * self.sxy + s * s * self.syy,
            syy: s * s * self.sxx - 2.0 * c * s * self.sxy + c * c * self.syy,
            sxy: -c * s * self.sxx + (c * c - s * s) * self.sxy + c * s * self.syy,
        }
    }

    /// Angle bringing the principal axis of the second-moment tensor about
    /// the origin onto X with a nonnegative mean X. Using moments about the
    /// origin makes the displacement and the stretch compete on equal footing,
    /// and reduces to the mean direction for an isotropic cloud.
    pub fn major_axis_angle(&self) -> Result<f64, LangevinError> {
        if self.n == 0 {
            return Err(LangevinError::TooFewSamples);
        }
        if self.sxx == 0.0 && self.syy == 0.0 {
            return Err(LangevinError::DegenerateCovariance);
        }
        let mut angle = 0.5 * (2.0 * self.sxy).atan2(self.sxx - self.syy);
        let (s, c) = angle.sin_cos();
        if c * self.sx + s * self.sy < 0.0 {
            angle += std::f64::consts::PI;
        }
        Ok(angle)
    }

    pub fn canonical(&self) -> Self {
        match self.major_axis_angle() {
            Ok(a) => self.rotated(a),
            Err(_) => *self,
        }
    }

    pub fn moments(&self) -> StateMoments {
        let n = self.n.max(1) as f64;
        let mx = self.sx / n;
        let my = self.sy / n;
        StateMoments {
            mean_x: mx,
            mean_y: my,
            var_x: (self.sxx / n - mx * mx).max(0.0),
            var_y: (self.syy / n - my * my).max(0.0),
            n_samples: self.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateMoments {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub n_samples: usize,
}

/// Rotated samples and the applied angle.
pub fn rotate_to_major_axis(samples: &[(f64, f64)]) -> Result<(Vec<(f64, f64)>, f64), LangevinError> {
    if samples.len() < 2 {
        return Err(LangevinError::TooFewSamples);
    }
    let angle = RawMoments::from_samples(samples).major_axis_angle()?;
    let (s, c) = angle.sin_cos();
    Ok((samples.iter().map(|&(x, y)| (c * x + s * y, -s * x + c * y)).collect(), angle))
}

/// Each trace is rotated to its own major axis, then all windowed samples are pooled.
pub fn ensemble_moments(traces: &[QuadratureTrace], window: (f64, f64)) -> Result<StateMoments, LangevinError> {
    let mut pooled = RawMoments::default();
    for tr in traces {
        let mut m = RawMoments::default();
        for (t, &(x, y)) in tr.times().zip(&tr.samples) {
            if t >= window.0 && t <= window.1 {
                m.push(x, y);
            }
        }
        pooled.merge(&m.canonical());
    }
    if pooled.n == 0 {
        return Err(LangevinError::EmptyWindow(window.0, window.1));
    }
    Ok(pooled.moments())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateLabel {
    Vacuum,
    SqueezedVacuum,
    UnstableOscillation,
    CoherentOscillation,
}

impl StateLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            StateLabel::Vacuum => "vacuum",
            StateLabel::SqueezedVacuum => "squeezed_vacuum",
            StateLabel::UnstableOscillation => "unstable_oscillation",
            StateLabel::CoherentOscillation => "coherent_oscillation",
        }
    }

    pub fn is_oscillating(&self) -> bool {
        matches!(self, StateLabel::UnstableOscillation | StateLabel::CoherentOscillation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub mean_sig: f64,
    pub big_var: f64,
    pub squeeze_factor: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { mean_sig: 5.0, big_var: 10.0, squeeze_factor: 0.9 }
    }
}

/// Mean threshold is `mean_sig` vacuum standard deviations. "var_y close to
/// vacuum" means neither squeezed (`squeeze_factor`) nor large (`big_var`);
/// an anti-squeezed vacuum near threshold has a large var_x too, but its
/// var_y sits well below vacuum.
pub fn classify_state(m: &StateMoments, vacuum: &StateMoments, cfg: &ClassifierConfig) -> StateLabel {
    let var_vac = 0.5 * (vacuum.var_x + vacuum.var_y);
    let sigma = var_vac.sqrt();
    if m.mean_x.abs() > cfg.mean_sig * sigma {
        StateLabel::CoherentOscillation
    } else if m.var_x > cfg.big_var * var_vac
        && m.var_y >= cfg.squeeze_factor * var_vac
        && m.var_y < cfg.big_var * var_vac
    {
        StateLabel::UnstableOscillation
    } else if m.var_y < cfg.squeeze_factor * var_vac {
        StateLabel::SqueezedVacuum
    } else {
        StateLabel::Vacuum
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagramConfig {
    pub ensemble_size: usize,
    pub duration: f64,
    /// Moments are taken over `[window_start, duration]`.
    pub window_start: f64,
    pub dt: f64,
    pub sample_every: usize,
    pub master_seed: u64,
    pub classifier: ClassifierConfig,
    pub execution: Execution,
}

impl Default for PhaseDiagramConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 32,
            duration: 20e-6,
            window_start: 10e-6,
            dt: 1e-9,
            sample_every: 10,
            master_seed: 1,
            classifier: ClassifierConfig::default(),
            execution: Execution::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub alpha_ratio: f64,
    pub delta: f64,
    pub moments: Option<StateMoments>,
    pub label: Option<StateLabel>,
    /// Fraction of trajectories whose windowed rms radius exceeds `mean_sig` vacuum widths.
    pub switched_fraction: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub alpha_ratios: Vec<f64>,
    pub deltas: Vec<f64>,
    pub vacuum: StateMoments,
    /// Row-major: alpha index outer, delta index inner.
    pub cells: Vec<PhaseCell>,
}

impl PhaseDiagram {
    pub fn cell(&self, i_alpha: usize, i_delta: usize) -> &PhaseCell {
        &self.cells[i_alpha * self.deltas.len() + i_delta]
    }

    /// CSV rows (alpha_ratio, delta_hz, mean_x, mean_y, var_x, var_y, label).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha_ratio,delta_hz,mean_x,mean_y,var_x,var_y,label\n");
        for c in &self.cells {
            let d = crate::constants::rad_to_hz(c.delta);
            match (&c.moments, &c.label) {
                (Some(m), Some(l)) => s.push_str(&format!(
                    "{:.6},{:.6e},{:.10e},{:.10e},{:.10e},{:.10e},{}\n",
                    c.alpha_ratio, d, m.mean_x, m.mean_y, m.var_x, m.var_y, l.as_str()
                )),
                _ => s.push_str(&format!("{:.6},{:.6e},NaN,NaN,NaN,NaN,failed\n", c.alpha_ratio, d)),
            }
        }
        s
    }
}

/// Per-trajectory canonical moments over the window `[t0, t_final]`.
fn cell_ensemble(
    op: &OperatingPoint,
    cfg: &PhaseDiagramConfig,
    seed: u64,
) -> Result<Vec<RawMoments>, LangevinError> {
    let pulse = PulseSequence::continuous(cfg.duration);
    let opts = SimOptions { dt: cfg.dt, ..SimOptions::default() };
    let every = cfg.sample_every.max(1);
    (0..cfg.ensemble_size)
        .map(|i| {
            let mut m = RawMoments::default();
            let mut k = 0usize;
            integrate(op, &ProbeField::off(), &pulse, cfg.duration, &opts, derive_seed(seed, i as u64), |t, q, p| {
                if t >= cfg.window_start && k % every == 0 {
                    m.push(q, p);
                }
                k += 1;
            })?;
            Ok(m.canonical())
        })
        .collect()
}

fn pool(per_trace: &[RawMoments]) -> StateMoments {
    let mut pooled = RawMoments::default();
    for m in per_trace {
        pooled.merge(m);
    }
    pooled.moments()
}

/// Labelled grid over |alpha|/(kappa+gamma) and detuning (rad/s).
pub fn map_phase_diagram(
    template: &OperatingPoint,
    alpha_ratios: &[f64],
    deltas: &[f64],
    cfg: &PhaseDiagramConfig,
) -> Result<PhaseDiagram, LangevinError> {
    if alpha_ratios.is_empty() || deltas.is_empty() || cfg.ensemble_size == 0 {
        return Err(LangevinError::Invalid("empty phase-diagram grid".into()));
    }
    let mut vac_op = *template;
    vac_op.alpha_mag = 0.0;
    vac_op.delta = 0.0;
    let vacuum = pool(&cell_ensemble(&vac_op, cfg, derive_seed(cfg.master_seed, u64::MAX))?);
    let grid: Vec<(f64, f64)> = alpha_ratios
        .iter()
        .flat_map(|&a| deltas.iter().map(move |&d| (a, d)))
        .collect();
    let threshold2 = (cfg.classifier.mean_sig.powi(2)) * 0.5 * (vacuum.var_x + vacuum.var_y);
    let cells = cfg.execution.map(&grid, |idx, &(ratio, delta)| {
        let mut op = template.with_alpha_ratio(ratio);
        op.delta = delta;
        match cell_ensemble(&op, cfg, derive_seed(cfg.master_seed, idx as u64)) {
            Ok(per_trace) => {
                let switched = per_trace
                    .iter()
                    .filter(|m| (m.sxx + m.syy) / m.n.max(1) as f64 > threshold2)
                    .count();
                let moments = pool(&per_trace);
                PhaseCell {
                    alpha_ratio: ratio,
                    delta,
                    moments: Some(moments),
                    label: Some(classify_state(&moments, &vacuum, &cfg.classifier)),
                    switched_fraction: switched as f64 / per_trace.len() as f64,
                    error: None,
                }
            }
            Err(e) => PhaseCell {
                alpha_ratio: ratio,
                delta,
                moments: None,
                label: None,
                switched_fraction: f64::NAN,
                error: Some(e.to_string()),
            },
        }
    });
    Ok(PhaseDiagram { alpha_ratios: alpha_ratios.to_vec(), deltas: deltas.to_vec(), vacuum, cells })
}

//! Pulse timing, per-pulse readout and threshold decisions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::langevin::{integrate, LangevinError, ProbeField, QuadratureTrace, SimOptions};
use crate::numerics::derive_seed;
use crate::potential::OperatingPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("readout window [{0}, {1}] contains no samples")]
    EmptyWindow(f64, f64),
    #[error("n_bar must be >= 0, got {0}")]
    NegativePhotonNumber(f64),
    #[error(transparent)]
    Dynamics(#[from] LangevinError),
}

/// Timing of one detection cycle. Times in seconds, measured from pump rise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseConfig {
    pub pump_duration: f64,
    pub probe_delay: f64,
    pub probe_duration: f64,
    pub readout_start: f64,
    pub readout_duration: f64,
    pub dead_time: f64,
    pub latency: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            pump_duration: 2e-6,
            probe_delay: 0.228e-6,
            probe_duration: 1e-6,
            readout_start: 0.5e-6,
            readout_duration: 1.5e-6,
            dead_time: 3e-6,
            latency: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub timing: PulseConfig,
    pub period: f64,
    pub repetition_rate: f64,
    /// Pump-on fraction of the period.
    pub duty_cycle: f64,
    /// Set when the dead time is zero and the cavity is never reset.
    pub reset_warning: bool,
}

impl PulseSequence {
    pub fn pump_on(&self, t: f64) -> bool {
        t >= 0.0 && t < self.timing.pump_duration
    }

    pub fn probe_window(&self) -> (f64, f64) {
        let t = &self.timing;
        (t.probe_delay, t.probe_delay + t.probe_duration)
    }

    pub fn readout_window(&self) -> (f64, f64) {
        let t = &self.timing;
        (t.readout_start, t.readout_start + t.readout_duration)
    }

    /// Pump on for the whole of `duration`, no probe, readout over the second half.
    pub fn continuous(duration: f64) -> Self {
        let cfg = PulseConfig {
            pump_duration: duration,
            probe_delay: 0.0,
            probe_duration: 0.0,
            readout_start: 0.5 * duration,
            readout_duration: 0.5 * duration,
            dead_time: 0.0,
            latency: 0.0,
        };
        Self { timing: cfg, period: duration, repetition_rate: 1.0 / duration, duty_cycle: 1.0, reset_warning: true }
    }
}

pub fn build_pulse_sequence(cfg: &PulseConfig) -> Result<PulseSequence, ProtocolError> {
    let bad = |m: String| Err(ProtocolError::InvalidTiming(m));
    let fields = [
        ("pump_duration", cfg.pump_duration),
        ("probe_delay", cfg.probe_delay),
        ("probe_duration", cfg.probe_duration),
        ("readout_start", cfg.readout_start),
        ("readout_duration", cfg.readout_duration),
        ("dead_time", cfg.dead_time),
        ("latency", cfg.latency),
    ];
    for (name, v) in fields {
        if !v.is_finite() || v < 0.0 {
            return bad(format!("{name} must be finite and >= 0, got {v}"));
        }
    }
    for (name, v) in [("pump_duration", cfg.pump_duration), ("probe_duration", cfg.probe_duration), ("readout_duration", cfg.readout_duration)] {
        if v <= 0.0 {
            return bad(format!("{name} must be > 0"));
        }
    }
    let tol = 1e-15;
    if cfg.probe_delay + cfg.probe_duration > cfg.pump_duration + tol {
        return bad(format!(
            "probe window ends at {:.4e} s, after pump ends at {:.4e} s",
            cfg.probe_delay + cfg.probe_duration,
            cfg.pump_duration
        ));
    }
    if cfg.readout_start + cfg.readout_duration > cfg.pump_duration + tol {
        return bad(format!(
            "readout window ends at {:.4e} s, after pump ends at {:.4e} s",
            cfg.readout_start + cfg.readout_duration,
            cfg.pump_duration
        ));
    }
    let period = cfg.latency + cfg.pump_duration + cfg.dead_time;
    let reset_warning = cfg.dead_time == 0.0;
    if reset_warning {
        log::warn!("dead time is zero: the cavity is not reset between pulses");
    }
    Ok(PulseSequence {
        timing: *cfg,
        period,
        repetition_rate: 1.0 / period,
        duty_cycle: cfg.pump_duration / period,
        reset_warning,
    })
}

/// Running mean of |X + iY| with additive Gaussian readout noise.
#[derive(Debug, Clone)]
pub struct ReadoutAccumulator {
    rng: ChaCha8Rng,
    noise_std: f64,
    sum: f64,
    count: usize,
}

impl ReadoutAccumulator {
    pub fn new(noise_var: f64, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), noise_std: noise_var.max(0.0).sqrt(), sum: 0.0, count: 0 }
    }

    pub fn push(&mut self, x: f64, y: f64) {
        let (nx, ny) = if self.noise_std > 0.0 {
            let a: f64 = StandardNormal.sample(&mut self.rng);
            let b: f64 = StandardNormal.sample(&mut self.rng);
            (self.noise_std * a, self.noise_std * b)
        } else {
            (0.0, 0.0)
        };
        self.sum += (x + nx).hypot(y + ny);
        self.count += 1;
    }

    pub fn result(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Time-averaged modulus of the noise-augmented quadrature over `window`.
pub fn readout_result(
    trace: &QuadratureTrace,
    window: (f64, f64),
    readout_noise_var: f64,
    seed: u64,
) -> Result<f64, ProtocolError> {
    let mut acc = ReadoutAccumulator::new(readout_noise_var, seed);
    for (t, &(q, p)) in trace.times().zip(&trace.samples) {
        if t >= window.0 && t < window.1 {
            acc.push(q, p);
        }
    }
    acc.result().ok_or(ProtocolError::EmptyWindow(window.0, window.1))
}

/// Click iff `r > r_th`; equality is no click.
#[inline]
pub fn decide(r: f64, r_th: f64) -> bool {
    r > r_th
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub results: Vec<f64>,
    pub n_bar: f64,
    pub threshold: f64,
    pub clicks: usize,
    pub n_pulses: usize,
    /// Multiplier from intracavity quadrature units to reported readout units.
    pub scale: f64,
}

impl DetectionRecord {
    pub fn new(results: Vec<f64>, n_bar: f64, scale: f64) -> Self {
        let n_pulses = results.len();
        let mut rec = Self { results, n_bar, threshold: f64::INFINITY, clicks: 0, n_pulses, scale };
        rec.apply_threshold(f64::INFINITY);
        rec
    }

    pub fn apply_threshold(&mut self, r_th: f64) {
        self.threshold = r_th;
        self.clicks = self.clicks_at(r_th);
    }

    pub fn clicks_at(&self, r_th: f64) -> usize {
        self.results.iter().filter(|&&r| decide(r, r_th)).count()
    }

    pub fn click_fraction(&self, r_th: f64) -> f64 {
        if self.n_pulses == 0 {
            return 0.0;
        }
        self.clicks_at(r_th) as f64 / self.n_pulses as f64
    }

    pub fn mean(&self) -> f64 {
        self.results.iter().sum::<f64>() / self.results.len().max(1) as f64
    }

    /// CSV with a single `r` column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r\n");
        for r in &self.results {
            s.push_str(&format!("{r:.17e}\n"));
        }
        s
    }

    /// Normalised histogram over `[lo, hi)` with `bins` bins; returns (bin centre, fraction).
    pub fn histogram(&self, lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64)> {
        let w = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &r in &self.results {
            if r >= lo && r < hi {
                counts[((r - lo) / w) as usize % bins] += 1;
            }
        }
        let n = self.n_pulses.max(1) as f64;
        counts.iter().enumerate().map(|(i, &c)| (lo + (i as f64 + 0.5) * w, c as f64 / n)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionOptions {
    pub dt: f64,
    /// Per-quadrature readout noise variance in intracavity units.
    pub readout_noise_var: f64,
    pub scale: f64,
    pub execution: Execution,
}

impl DetectionOptions {
    /// Readout noise of a quarter of the vacuum variance.
    pub fn for_operating_point(op: &OperatingPoint) -> Self {
        Self { dt: 1e-9, readout_noise_var: 0.25 * op.vacuum_variance(), scale: 1.0, execution: Execution::Auto }
    }
}

/// Simulates `n_pulses` independent detection cycles with a probe of mean
/// photon number `n_bar` at the optimal phase.
pub fn run_detection_experiment(
    op: &OperatingPoint,
    n_bar: f64,
    pulse: &PulseSequence,
    n_pulses: usize,
    seed: u64,
    opts: &DetectionOptions,
) -> Result<DetectionRecord, ProtocolError> {
    if !(n_bar >= 0.0) {
        return Err(ProtocolError::NegativePhotonNumber(n_bar));
    }
    let (t_on, t_off) = pulse.probe_window();
    let probe = ProbeField::optimal(op, (n_bar / (t_off - t_on)).sqrt(), t_on, t_off);
    let window = pulse.readout_window();
    let sim = SimOptions { dt: opts.dt, ..SimOptions::default() };
    let results: Vec<Result<f64, ProtocolError>> = opts.execution.map_range(n_pulses, |i| {
        let pulse_seed = derive_seed(seed, i as u64);
        let mut acc = ReadoutAccumulator::new(opts.readout_noise_var, derive_seed(pulse_seed, u64::MAX));
        integrate(op, &probe, pulse, pulse.timing.pump_duration, &sim, pulse_seed, |t, q, p| {
            if t >= window.0 && t < window.1 {
                acc.push(q, p);
            }
        })?;
        acc.result().map(|r| r * opts.scale).ok_or(ProtocolError::EmptyWindow(window.0, window.1))
    });
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(DetectionRecord::new(results, n_bar, opts.scale))
}

/// Factor mapping simulated readout units onto an instrument scale whose
/// vacuum lobe mean is known.
pub fn readout_scale(simulated_vacuum_mean: f64, instrument_vacuum_mean: f64) -> f64 {
    instrument_vacuum_mean / simulated_vacuum_mean
}

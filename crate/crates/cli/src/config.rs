//! Run configuration. A single JSON tree whose physical keys carry a unit
//! suffix. User input is checked key by key against the default tree, so
//! every unknown, unsuffixed or mistyped key is reported in one pass.

use std::path::{Path, PathBuf};

use critdet::calibration::LedgerEntry;
use critdet::circuit::{CircuitParams, ModeMethod};
use critdet::constants::hz_to_rad;
use critdet::langevin::{ClassifierConfig, PhaseDiagramConfig};
use critdet::potential::OperatingPoint;
use critdet::protocol::{build_pulse_sequence, PulseConfig, PulseSequence};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;
use crate::output::sha256_hex;
use crate::sweep::execution_for;

/// Suffixes accepted on physical quantities.
pub const UNIT_SUFFIXES: &[&str] = &["_hz", "_s", "_k", "_db", "_w", "_h", "_f", "_a", "_rad"];

/// Numeric keys that are dimensionless by construction.
pub const DIMENSIONLESS_KEYS: &[&str] = &[
    "master_seed",
    "workers",
    "flux_ratio",
    "synthetic_points",
    "synthetic_flux_max",
    "initial_omega_scale",
    "initial_i_c_scale",
    "max_rms_relative",
    "starts",
    "alpha_ratio",
    "n_thermal",
    "points",
    "probe_n_bar",
    "half_width_scale",
    "alpha_ratio_min",
    "alpha_ratio_max",
    "alpha_steps",
    "delta_steps",
    "ensemble_size",
    "sample_every",
    "mean_sig",
    "big_var",
    "squeeze_factor",
    "n_points",
    "stop_below",
    "n_thermal_values",
    "q_threshold_ratios",
    "n_bar_values",
    "n_pulses",
    "threshold",
    "readout_noise_ratio",
    "readout_scale",
    "histogram_bins",
    "histogram_max",
    "n_bar",
    "thresholds",
    "poisson_thresholds",
];

pub const ENV_OUTPUT_DIR: &str = "CRITDET_OUTPUT_DIR";
pub const ENV_WORKERS: &str = "CRITDET_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Circuit,
    DcFit,
    Potential,
    PhaseDiagram,
    Fp,
    Detect,
    Roc,
    Calibrate,
    Figures,
}

impl Subcommand {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subcommand::Circuit => "circuit",
            Subcommand::DcFit => "dc-fit",
            Subcommand::Potential => "potential",
            Subcommand::PhaseDiagram => "phase-diagram",
            Subcommand::Fp => "fp",
            Subcommand::Detect => "detect",
            Subcommand::Roc => "roc",
            Subcommand::Calibrate => "calibrate",
            Subcommand::Figures => "figures",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitSection {
    pub l_cav_h: f64,
    pub c_cav_f: f64,
    pub i_c_a: f64,
    pub plasma_frequency_hz: f64,
    /// Derived from the junction parameters when null.
    pub c_squid_f: Option<f64>,
    pub l_loop_h: f64,
    pub flux_ratio: f64,
    pub mode_method: ModeMethod,
}

impl Default for CircuitSection {
    fn default() -> Self {
        let p = CircuitParams::fitted();
        Self {
            l_cav_h: p.l_cav,
            c_cav_f: p.c_cav,
            i_c_a: p.i_c,
            plasma_frequency_hz: 80e9,
            c_squid_f: p.c_squid,
            l_loop_h: p.l_loop,
            flux_ratio: 0.3618,
            mode_method: ModeMethod::Approximate,
        }
    }
}

impl CircuitSection {
    pub fn params(&self) -> CircuitParams {
        CircuitParams {
            l_cav: self.l_cav_h,
            c_cav: self.c_cav_f,
            i_c: self.i_c_a,
            omega_plasma: hz_to_rad(self.plasma_frequency_hz),
            c_squid: self.c_squid_f,
            l_loop: self.l_loop_h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcFitSection {
    /// Two-column CSV (flux_ratio, freq_hz). Empty: synthesise from the circuit section.
    pub data_csv: String,
    pub synthetic_points: usize,
    pub synthetic_flux_max: f64,
    pub initial_omega_scale: f64,
    pub initial_i_c_scale: f64,
    pub max_rms_relative: f64,
    pub starts: usize,
}

impl Default for DcFitSection {
    fn default() -> Self {
        Self {
            data_csv: String::new(),
            synthetic_points: 23,
            synthetic_flux_max: 0.44,
            initial_omega_scale: 1.04,
            initial_i_c_scale: 0.95,
            max_rms_relative: 1e-3,
            starts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatingPointSection {
    pub delta_hz: f64,
    /// |alpha| / (kappa + gamma).
    pub alpha_ratio: f64,
    pub theta_p_rad: f64,
    pub kappa_hz: f64,
    pub gamma_hz: f64,
    pub kerr_hz: f64,
    pub n_thermal: f64,
}

impl Default for OperatingPointSection {
    fn default() -> Self {
        Self {
            delta_hz: 0.7e6,
            alpha_ratio: 0.51,
            theta_p_rad: 0.0,
            kappa_hz: 4.44e6,
            gamma_hz: 2.30e6,
            kerr_hz: -208.0,
            n_thermal: 0.0,
        }
    }
}

impl OperatingPointSection {
    pub fn operating_point(&self) -> OperatingPoint {
        let kappa = hz_to_rad(self.kappa_hz);
        let gamma = hz_to_rad(self.gamma_hz);
        OperatingPoint {
            delta: hz_to_rad(self.delta_hz),
            alpha_mag: self.alpha_ratio * (kappa + gamma),
            theta_p: self.theta_p_rad,
            kappa,
            gamma,
            kerr: hz_to_rad(self.kerr_hz),
            n_thermal: self.n_thermal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    pub points: usize,
    pub half_width_scale: f64,
    /// Mean photon number of the probe pulse setting the tilt.
    pub probe_n_bar: f64,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self { points: 2001, half_width_scale: 1.0, probe_n_bar: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseDiagramSection {
    pub alpha_ratio_min: f64,
    pub alpha_ratio_max: f64,
    pub alpha_steps: usize,
    pub delta_min_hz: f64,
    pub delta_max_hz: f64,
    pub delta_steps: usize,
    pub ensemble_size: usize,
    pub duration_s: f64,
    pub window_start_s: f64,
    pub dt_s: f64,
    pub sample_every: usize,
    pub mean_sig: f64,
    pub big_var: f64,
    pub squeeze_factor: f64,
    /// Also dump one trajectory at the operating point as binary (Q, P) pairs.
    pub dump_trace: bool,
}

impl Default for PhaseDiagramSection {
    fn default() -> Self {
        let pd = PhaseDiagramConfig::default();
        let cl = ClassifierConfig::default();
        Self {
            alpha_ratio_min: 0.3,
            alpha_ratio_max: 0.75,
            alpha_steps: 19,
            delta_min_hz: -6e6,
            delta_max_hz: 6e6,
            delta_steps: 13,
            ensemble_size: pd.ensemble_size,
            duration_s: pd.duration,
            window_start_s: pd.window_start,
            dt_s: pd.dt,
            sample_every: pd.sample_every,
            mean_sig: cl.mean_sig,
            big_var: cl.big_var,
            squeeze_factor: cl.squeeze_factor,
            dump_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    pub pump_duration_s: f64,
    pub probe_delay_s: f64,
    pub probe_duration_s: f64,
    pub readout_start_s: f64,
    pub readout_duration_s: f64,
    pub dead_time_s: f64,
    pub latency_s: f64,
}

impl Default for PulseSection {
    fn default() -> Self {
        let p = PulseConfig::default();
        Self {
            pump_duration_s: p.pump_duration,
            probe_delay_s: p.probe_delay,
            probe_duration_s: p.probe_duration,
            readout_start_s: p.readout_start,
            readout_duration_s: p.readout_duration,
            dead_time_s: p.dead_time,
            latency_s: p.latency,
        }
    }
}

impl PulseSection {
    pub fn pulse_config(&self) -> PulseConfig {
        PulseConfig {
            pump_duration: self.pump_duration_s,
            probe_delay: self.probe_delay_s,
            probe_duration: self.probe_duration_s,
            readout_start: self.readout_start_s,
            readout_duration: self.readout_duration_s,
            dead_time: self.dead_time_s,
            latency: self.latency_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpSection {
    /// 0 picks the grid from the Peclet condition.
    pub n_points: usize,
    pub dt_s: f64,
    pub t_max_s: f64,
    pub sample_interval_s: f64,
    pub stop_below: f64,
    pub snapshot_interval_s: f64,
    pub n_thermal_values: Vec<f64>,
    /// Escape thresholds in units of the barrier-top position.
    pub q_threshold_ratios: Vec<f64>,
    pub n_bar_values: Vec<f64>,
}

impl Default for FpSection {
    fn default() -> Self {
        Self {
            n_points: 0,
            dt_s: 0.5e-9,
            t_max_s: 100e-6,
            sample_interval_s: 25e-9,
            stop_below: 0.15,
            snapshot_interval_s: 0.25e-6,
            n_thermal_values: vec![0.0, 0.25, 0.5],
            q_threshold_ratios: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            n_bar_values: (0..=16).map(|k| 0.25 * k as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub n_bar_values: Vec<f64>,
    pub n_pulses: usize,
    /// Decision threshold on R, in readout units.
    pub threshold: f64,
    pub dt_s: f64,
    /// Added readout noise per quadrature, in units of the vacuum variance.
    pub readout_noise_ratio: f64,
    pub readout_scale: f64,
    pub histogram_bins: usize,
    /// Upper histogram edge; 0 uses the largest R.
    pub histogram_max: f64,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            n_bar_values: vec![0.0, 1.0, 2.0, 4.0],
            n_pulses: 1000,
            threshold: 5.0,
            dt_s: 1e-9,
            readout_noise_ratio: 0.25,
            readout_scale: 1.0,
            histogram_bins: 80,
            histogram_max: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RocSection {
    pub n_bar: f64,
    pub n_pulses: usize,
    pub thresholds: usize,
}

impl Default for RocSection {
    fn default() -> Self {
        Self { n_bar: 1.0, n_pulses: 2000, thresholds: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiguresSection {
    pub n_bar_values: Vec<f64>,
    pub n_pulses: usize,
    pub threshold: f64,
    pub poisson_thresholds: Vec<f64>,
    /// 0 derives the dark rate from the probe-off click fraction over the pump time.
    pub gamma_dark_hz: f64,
    pub frequency_hz: f64,
}

impl Default for FiguresSection {
    fn default() -> Self {
        Self {
            n_bar_values: (0..=8).map(|k| 0.5 * k as f64).collect(),
            n_pulses: 2000,
            threshold: 5.0,
            poisson_thresholds: vec![3.0, 4.0, 5.0, 6.0, 7.0],
            gamma_dark_hz: 0.0,
            frequency_hz: 6.042e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    /// Two-column CSV (temperature_k, psd_w_per_hz). Empty: synthesise.
    pub psd_csv: String,
    pub synthetic_gain_db: f64,
    pub synthetic_t_preamp_k: f64,
    pub synthetic_temperatures_k: Vec<f64>,
    pub s21_db: f64,
    pub sigma_components_db: Vec<f64>,
    pub extra: Vec<LedgerEntry>,
    /// Probe power at the generator.
    pub probe_power_w: f64,
    pub frequency_hz: f64,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            psd_csv: String::new(),
            synthetic_gain_db: 82.4,
            synthetic_t_preamp_k: 5.2,
            synthetic_temperatures_k: vec![0.02, 0.1, 0.3, 0.7, 1.2, 2.0, 3.0],
            s21_db: -20.0,
            sigma_components_db: vec![0.2, 0.2, 0.2],
            extra: Vec::new(),
            probe_power_w: 1e-7,
            frequency_hz: 6.042e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Option<Subcommand>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// 0 uses every available core.
    pub workers: usize,
    pub circuit: CircuitSection,
    pub dc_fit: DcFitSection,
    pub operating_point: OperatingPointSection,
    pub potential: PotentialSection,
    pub phase_diagram: PhaseDiagramSection,
    pub pulse: PulseSection,
    pub fp: FpSection,
    pub detect: DetectSection,
    pub roc: RocSection,
    pub figures: FiguresSection,
    pub calibrate: CalibrateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: None,
            master_seed: 1,
            output_dir: PathBuf::from("critdet-out"),
            workers: 0,
            circuit: CircuitSection::default(),
            dc_fit: DcFitSection::default(),
            operating_point: OperatingPointSection::default(),
            potential: PotentialSection::default(),
            phase_diagram: PhaseDiagramSection::default(),
            pulse: PulseSection::default(),
            fp: FpSection::default(),
            detect: DetectSection::default(),
            roc: RocSection::default(),
            figures: FiguresSection::default(),
            calibrate: CalibrateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn defaults_tree() -> Value {
        serde_json::to_value(RunConfig::default()).expect("default config serialises")
    }

    pub fn pulse_sequence(&self) -> Result<PulseSequence, CliError> {
        build_pulse_sequence(&self.pulse.pulse_config()).map_err(|e| CliError::pipeline("detection_protocol", e))
    }

    pub fn phase_diagram_config(&self) -> PhaseDiagramConfig {
        let s = &self.phase_diagram;
        PhaseDiagramConfig {
            ensemble_size: s.ensemble_size,
            duration: s.duration_s,
            window_start: s.window_start_s,
            dt: s.dt_s,
            sample_every: s.sample_every,
            master_seed: self.master_seed,
            classifier: ClassifierConfig { mean_sig: s.mean_sig, big_var: s.big_var, squeeze_factor: s.squeeze_factor },
            execution: execution_for(self.workers),
        }
    }

    /// SHA-256 of the canonical config with the run-local keys
    /// (`output_dir`, `workers`) removed, so it names the science, not the host.
    pub fn content_hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.science_tree()).expect("value serialises").as_bytes())
    }

    /// The config without run-local keys; key order is canonical.
    pub fn science_tree(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
            m.remove("workers");
        }
        v
    }

    fn check_semantics(&self, out: &mut Vec<String>) {
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());

        if let Err(e) = self.circuit.params().validate() {
            need(false, &format!("circuit: {e}"));
        }
        need(self.circuit.flux_ratio.is_finite() && self.circuit.flux_ratio.abs() < 0.5, "circuit.flux_ratio: must satisfy |flux_ratio| < 0.5");
        if let Err(e) = self.operating_point.operating_point().validate() {
            need(false, &format!("operating_point: {e}"));
        }
        if let Err(e) = build_pulse_sequence(&self.pulse.pulse_config()) {
            need(false, &format!("pulse: {e}"));
        }

        let d = &self.dc_fit;
        need(d.synthetic_points >= 4, "dc_fit.synthetic_points: need at least 4");
        need(positive(d.synthetic_flux_max) && d.synthetic_flux_max < 0.5, "dc_fit.synthetic_flux_max: must lie in (0, 0.5)");
        need(positive(d.initial_omega_scale) && positive(d.initial_i_c_scale), "dc_fit.initial_*_scale: must be > 0");
        need(positive(d.max_rms_relative), "dc_fit.max_rms_relative: must be > 0");
        need(d.starts >= 1, "dc_fit.starts: must be >= 1");

        need(self.potential.points >= 3, "potential.points: need at least 3");
        need(positive(self.potential.half_width_scale), "potential.half_width_scale: must be > 0");
        need(self.potential.probe_n_bar.is_finite() && self.potential.probe_n_bar >= 0.0, "potential.probe_n_bar: must be >= 0");

        let p = &self.phase_diagram;
        need(p.alpha_steps >= 1 && p.delta_steps >= 1, "phase_diagram: alpha_steps and delta_steps must be >= 1");
        need(
            finite(&[p.alpha_ratio_min, p.alpha_ratio_max, p.delta_min_hz, p.delta_max_hz])
                && p.alpha_ratio_min >= 0.0
                && p.alpha_ratio_max >= p.alpha_ratio_min
                && p.delta_max_hz >= p.delta_min_hz,
            "phase_diagram: axes must be finite and ordered, alpha_ratio_min >= 0",
        );
        need(p.ensemble_size >= 1 && p.sample_every >= 1, "phase_diagram: ensemble_size and sample_every must be >= 1");
        need(positive(p.dt_s) && positive(p.duration_s), "phase_diagram: dt_s and duration_s must be > 0");
        need(p.window_start_s >= 0.0 && p.window_start_s < p.duration_s, "phase_diagram.window_start_s: must lie in [0, duration_s)");
        need(positive(p.mean_sig) && positive(p.big_var) && positive(p.squeeze_factor), "phase_diagram: classifier thresholds must be > 0");

        let f = &self.fp;
        need(f.n_points == 0 || f.n_points >= 3, "fp.n_points: 0 (auto) or at least 3");
        need(positive(f.dt_s) && positive(f.t_max_s) && positive(f.sample_interval_s), "fp: dt_s, t_max_s and sample_interval_s must be > 0");
        need(positive(f.snapshot_interval_s), "fp.snapshot_interval_s: must be > 0");
        need(f.stop_below >= 0.0 && f.stop_below < 1.0, "fp.stop_below: must lie in [0, 1)");
        need(!f.n_thermal_values.is_empty() && f.n_thermal_values.iter().all(|&n| n.is_finite() && n >= 0.0), "fp.n_thermal_values: non-empty, finite, >= 0");
        need(!f.q_threshold_ratios.is_empty() && f.q_threshold_ratios.iter().all(|&r| positive(r)), "fp.q_threshold_ratios: non-empty, > 0");
        need(f.n_bar_values.iter().all(|&n| n.is_finite() && n >= 0.0), "fp.n_bar_values: finite, >= 0");

        let t = &self.detect;
        need(!t.n_bar_values.is_empty() && t.n_bar_values.iter().all(|&n| n.is_finite() && n >= 0.0), "detect.n_bar_values: non-empty, finite, >= 0");
        need(t.n_pulses >= 1, "detect.n_pulses: must be >= 1");
        need(t.threshold.is_finite(), "detect.threshold: must be finite");
        need(positive(t.dt_s), "detect.dt_s: must be > 0");
        need(t.readout_noise_ratio.is_finite() && t.readout_noise_ratio >= 0.0, "detect.readout_noise_ratio: must be >= 0");
        need(positive(t.readout_scale), "detect.readout_scale: must be > 0");
        need(t.histogram_bins >= 1, "detect.histogram_bins: must be >= 1");
        need(t.histogram_max.is_finite() && t.histogram_max >= 0.0, "detect.histogram_max: must be >= 0");

        let r = &self.roc;
        need(r.n_bar.is_finite() && r.n_bar >= 0.0, "roc.n_bar: must be >= 0");
        need(r.n_pulses >= 1 && r.thresholds >= 2, "roc: n_pulses >= 1 and thresholds >= 2");

        let g = &self.figures;
        need(g.n_bar_values.iter().filter(|&&n| n > 0.0).count() >= 3, "figures.n_bar_values: need at least 3 values > 0");
        need(g.n_bar_values.iter().all(|&n| n.is_finite() && n >= 0.0), "figures.n_bar_values: finite, >= 0");
        need(g.n_pulses >= 1, "figures.n_pulses: must be >= 1");
        need(g.threshold.is_finite() && finite(&g.poisson_thresholds) && !g.poisson_thresholds.is_empty(), "figures: thresholds must be finite and poisson_thresholds non-empty");
        need(g.gamma_dark_hz.is_finite() && g.gamma_dark_hz >= 0.0, "figures.gamma_dark_hz: must be >= 0");
        need(positive(g.frequency_hz), "figures.frequency_hz: must be > 0");

        let c = &self.calibrate;
        need(c.synthetic_temperatures_k.len() >= 2 && c.synthetic_temperatures_k.iter().all(|&t| positive(t)), "calibrate.synthetic_temperatures_k: at least 2 values > 0");
        need(finite(&[c.synthetic_gain_db, c.synthetic_t_preamp_k, c.s21_db]), "calibrate: gains must be finite");
        need(c.sigma_components_db.iter().all(|&s| s.is_finite() && s >= 0.0), "calibrate.sigma_components_db: finite, >= 0");
        need(c.probe_power_w.is_finite() && c.probe_power_w >= 0.0, "calibrate.probe_power_w: must be >= 0");
        need(positive(c.frequency_hz), "calibrate.frequency_hz: must be > 0");
    }
}

/// Values taken from the process environment; only these two are honoured.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnvOverrides {
    pub output_dir: Option<String>,
    pub workers: Option<String>,
}

impl EnvOverrides {
    pub fn from_process() -> Self {
        Self { output_dir: std::env::var(ENV_OUTPUT_DIR).ok(), workers: std::env::var(ENV_WORKERS).ok() }
    }
}

/// Everything that can shape a run, in increasing precedence:
/// defaults, config file, environment, `--set` overrides, dedicated flags.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub file: Option<PathBuf>,
    pub env: EnvOverrides,
    pub sets: Vec<String>,
    pub subcommand: Option<Subcommand>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub master_seed: Option<u64>,
}

pub fn load(sources: &ConfigSources) -> Result<RunConfig, CliError> {
    let mut violations = Vec::new();
    let mut tree = match &sources.file {
        Some(path) => read_tree(path).map_err(|e| CliError::ConfigInvalid(vec![e]))?,
        None => Value::Object(Map::new()),
    };
    if !tree.is_object() {
        return Err(CliError::ConfigInvalid(vec!["config root must be a JSON object".into()]));
    }
    if let Some(dir) = &sources.env.output_dir {
        set_path(&mut tree, "output_dir", Value::String(dir.clone()), &mut violations);
    }
    if let Some(w) = &sources.env.workers {
        match w.trim().parse::<u64>() {
            Ok(n) => set_path(&mut tree, "workers", Value::from(n), &mut violations),
            Err(_) => violations.push(format!("{ENV_WORKERS}={w}: expected a non-negative integer")),
        }
    }
    for s in &sources.sets {
        match s.split_once('=') {
            Some((key, raw)) if !key.trim().is_empty() => {
                let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
                set_path(&mut tree, key.trim(), value, &mut violations);
            }
            _ => violations.push(format!("--set {s}: expected dotted.key=value")),
        }
    }
    if let Some(sc) = sources.subcommand {
        set_path(&mut tree, "subcommand", Value::String(sc.as_str().into()), &mut violations);
    }
    if let Some(dir) = &sources.output_dir {
        set_path(&mut tree, "output_dir", Value::String(dir.display().to_string()), &mut violations);
    }
    if let Some(w) = sources.workers {
        set_path(&mut tree, "workers", Value::from(w), &mut violations);
    }
    if let Some(seed) = sources.master_seed {
        set_path(&mut tree, "master_seed", Value::from(seed), &mut violations);
    }
    let cfg = validate_tree(&tree, &mut violations);
    match cfg {
        Some(cfg) if violations.is_empty() => Ok(cfg),
        _ => Err(CliError::ConfigInvalid(violations)),
    }
}

/// Checks a user tree and returns the merged config. Violations are appended.
pub fn validate_tree(user: &Value, violations: &mut Vec<String>) -> Option<RunConfig> {
    let defaults = RunConfig::defaults_tree();
    let before = violations.len();
    check_keys(user, &defaults, "", violations);
    let flagged: Vec<String> = violations[before..]
        .iter()
        .map(|v| v.split(['.', ':', '[']).next().unwrap_or_default().to_string())
        .collect();
    let mut merged = defaults;
    merge(&mut merged, user);
    // Per-section deserialisation keeps one malformed section from hiding the others.
    let mut cfg = None;
    match serde_json::from_value::<RunConfig>(merged.clone()) {
        Ok(c) => cfg = Some(c),
        Err(_) => {
            if let Value::Object(m) = &merged {
                for (k, v) in m.iter().filter(|(k, _)| !flagged.contains(k)) {
                    let mut probe = Map::new();
                    probe.insert(k.clone(), v.clone());
                    if let Err(e) = serde_json::from_value::<RunConfig>(Value::Object(probe)) {
                        violations.push(format!("{k}: {e}"));
                    }
                }
            }
            if violations.is_empty() {
                violations.push("config does not match the schema".into());
            }
        }
    }
    if let Some(c) = &cfg {
        c.check_semantics(violations);
        if c.subcommand.is_none() {
            violations.push("subcommand: not given in the config or on the command line".into());
        }
    }
    cfg
}

fn read_tree(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn check_keys(user: &Value, default: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(u), Value::Object(d)) = (user, default) else {
        return;
    };
    for (key, uv) in u {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        let Some(dv) = d.get(key) else {
            let suffixed: Vec<String> =
                UNIT_SUFFIXES.iter().map(|s| format!("{key}{s}")).filter(|k| d.contains_key(k)).collect();
            if let Some(k) = suffixed.first() {
                out.push(format!("{full}: missing unit suffix (expected `{k}`)"));
            } else {
                out.push(format!("{full}: unknown key"));
            }
            continue;
        };
        check_value(uv, dv, &full, out);
    }
}

fn check_value(uv: &Value, dv: &Value, full: &str, out: &mut Vec<String>) {
    match (uv, dv) {
        // Optional fields: the typed pass decides.
        (_, Value::Null) => {}
        (Value::Object(_), Value::Object(_)) => check_keys(uv, dv, full, out),
        (Value::Array(ua), Value::Array(da)) => {
            if let Some(template) = da.first() {
                for (i, item) in ua.iter().enumerate() {
                    check_value(item, template, &format!("{full}[{i}]"), out);
                }
            }
        }
        (Value::Number(un), Value::Number(dn)) => {
            if dn.is_u64() && !un.is_u64() {
                out.push(format!("{full}: expected a non-negative integer, got {un}"));
            }
        }
        _ if kind(uv) == kind(dv) => {}
        _ => out.push(format!("{full}: expected {}, got {}", kind(dv), kind(uv))),
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn set_path(tree: &mut Value, dotted: &str, value: Value, out: &mut Vec<String>) {
    let parts: Vec<&str> = dotted.split('.').collect();
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            out.push(format!("{dotted}: `{}` is not a section", parts[..i].join(".")));
            return;
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return;
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Numeric leaves (and numeric arrays) of the default tree.
pub fn numeric_leaf_keys() -> Vec<String> {
    fn walk(v: &Value, path: &str, out: &mut Vec<String>) {
        if let Value::Object(m) = v {
            for (k, v) in m {
                let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match v {
                    Value::Number(_) => out.push(full),
                    Value::Array(a) if a.first().is_some_and(Value::is_number) => out.push(full),
                    Value::Object(_) => walk(v, &full, out),
                    _ => {}
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(&RunConfig::defaults_tree(), "", &mut out);
    out
}

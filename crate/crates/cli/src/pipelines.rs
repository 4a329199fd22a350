//! One function per subcommand. Each reads the validated config, calls the
//! library as pure per-cell units and hands its files to `Outputs`.

use std::collections::BTreeMap;
use std::path::Path;

use critdet::calibration::{
    attenuation, db_error_to_relative, db_to_linear, fit_system_gain, photons_per_pulse, thermal_psd, CalibrationChain,
    LedgerEntry,
};
use critdet::circuit::{
    fit_dc_sweep, nonlinear_coefficients, pump_amplitude, pump_flux_for_amplitude, resonance_frequency, solve_mode,
    squid_inductance, synthetic_dc_sweep, DcFitOptions, DcPoint, ModeMethod,
};
use critdet::constants::{hz_to_rad, rad_to_hz};
use critdet::fokker_planck::{
    escape_rate, evolve, probabilities_from, survival_curve, switching_density, DensityProfile, EscapeFit, FpConfig,
};
use critdet::langevin::{map_phase_diagram, simulate_trajectory, ProbeField, SimOptions, StateMoments};
use critdet::potential::{
    barrier_maximum, classify_region, extrema, outer_minimum, q_span, uniform_grid, Extremum, OperatingPoint,
    PotentialProfile,
};
use critdet::protocol::{run_detection_experiment, DetectionOptions, DetectionRecord, PulseSequence};
use critdet::statistics::{
    auc_rank, efficiency_from_counts, eta_eff, fit_efficiency_curve, nep, optimize_threshold, poisson_check,
    responsivity, roc_curve, threshold_grid, DetectorModel, ThresholdCalibration,
};
use critdet::Execution;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Subcommand};
use crate::error::CliError;
use crate::output::Outputs;
use crate::sweep::{cell_seed, sweep, SweepAborted};

pub fn dispatch(subcommand: Subcommand, cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    match subcommand {
        Subcommand::Circuit => circuit(cfg, out),
        Subcommand::DcFit => dc_fit(cfg, out),
        Subcommand::Potential => potential(cfg, out),
        Subcommand::PhaseDiagram => phase_diagram(cfg, out),
        Subcommand::Fp => fokker_planck(cfg, out),
        Subcommand::Detect => detect(cfg, out),
        Subcommand::Roc => roc(cfg, out),
        Subcommand::Calibrate => calibrate(cfg, out),
        Subcommand::Figures => figures(cfg, out),
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Probe amplitude |b| delivering `n_bar` photons over the probe window.
fn probe_amplitude(n_bar: f64, pulse: &PulseSequence) -> f64 {
    (n_bar / pulse.timing.probe_duration).sqrt()
}

fn read_two_columns(path: &Path, module: &'static str) -> Result<Vec<(f64, f64)>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::pipeline(module, format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let row = rec.map_err(|e| CliError::pipeline(module, format!("{} row {}: {e}", path.display(), i + 2)))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct CircuitSummary {
    flux_ratio: f64,
    mode_method: ModeMethod,
    kd: f64,
    kd_approx: f64,
    chi: f64,
    constraint_residual: f64,
    f0_hz: f64,
    f0_zero_flux_hz: f64,
    c_mode_f: f64,
    phi_zpf: f64,
    l_squid_h: f64,
    kerr_hz: f64,
    sextic_hz: f64,
    /// Pump flux ratio giving the configured |alpha| under the approximate pump formula.
    pump_flux_ratio: f64,
    pump_alpha_approx_hz: f64,
    pump_alpha_exact_hz: f64,
}

fn circuit(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let err = |e| CliError::pipeline("circuit_model", e);
    let params = cfg.circuit.params();
    let flux = cfg.circuit.flux_ratio;
    let mode = solve_mode(&params, flux, cfg.circuit.mode_method).map_err(err)?;
    let nl = nonlinear_coefficients(&params, flux, &mode).map_err(err)?;
    let op = cfg.operating_point.operating_point();
    let pump_flux = pump_flux_for_amplitude(op.alpha_mag, flux, &mode);
    let pump = pump_amplitude(&params, flux, pump_flux, &mode).map_err(err)?;
    let summary = CircuitSummary {
        flux_ratio: flux,
        mode_method: mode.method,
        kd: mode.kd,
        kd_approx: mode.kd_approx,
        chi: mode.chi,
        constraint_residual: mode.residual,
        f0_hz: rad_to_hz(mode.omega_0),
        f0_zero_flux_hz: rad_to_hz(resonance_frequency(&params, 0.0).map_err(err)?),
        c_mode_f: mode.c_mode,
        phi_zpf: mode.phi_zpf,
        l_squid_h: squid_inductance(&params, flux).map_err(err)?,
        kerr_hz: rad_to_hz(nl.kerr),
        sextic_hz: rad_to_hz(nl.sextic),
        pump_flux_ratio: pump_flux,
        pump_alpha_approx_hz: rad_to_hz(pump.approximate),
        pump_alpha_exact_hz: rad_to_hz(pump.exact),
    };
    out.write_json("circuit.json", &summary)
}

#[derive(Debug, Serialize)]
struct DcFitSummary {
    source: String,
    n_points: usize,
    f_quarter_hz: f64,
    f_quarter_sigma_hz: f64,
    i_c_a: f64,
    i_c_sigma_a: f64,
    correlation: f64,
    rms_relative: f64,
    l_cav_h: f64,
    f0_zero_flux_hz: f64,
    l_squid_at_flux_h: f64,
}

fn dc_fit(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let err = |e| CliError::pipeline("circuit_model", e);
    let s = &cfg.dc_fit;
    let params = cfg.circuit.params();
    let (data, source) = if s.data_csv.is_empty() {
        let fluxes = linspace(0.0, s.synthetic_flux_max, s.synthetic_points);
        (synthetic_dc_sweep(&params, &fluxes).map_err(err)?, "synthetic".to_string())
    } else {
        let rows = read_two_columns(Path::new(&s.data_csv), "circuit_model")?;
        (rows.into_iter().map(|(flux_ratio, freq_hz)| DcPoint { flux_ratio, freq_hz }).collect(), s.data_csv.clone())
    };
    let mut guess = params.with_omega_quarter(params.omega_quarter() * s.initial_omega_scale);
    guess.i_c *= s.initial_i_c_scale;
    let opts = DcFitOptions { max_rms_relative: s.max_rms_relative, starts: s.starts };
    let fit = fit_dc_sweep(&data, &guess, opts).map_err(err)?;
    let rows: Vec<(f64, f64, f64, f64)> = data
        .iter()
        .zip(&fit.residuals_hz)
        .map(|(p, r)| (p.flux_ratio, p.freq_hz, p.freq_hz - r, *r))
        .collect();
    out.write_csv("dc_fit_residuals.csv", &["flux_ratio", "freq_hz", "model_hz", "residual_hz"], &rows)?;
    let c = fit.covariance;
    let summary = DcFitSummary {
        source,
        n_points: data.len(),
        f_quarter_hz: rad_to_hz(fit.omega_quarter),
        f_quarter_sigma_hz: rad_to_hz(c[0][0].sqrt()),
        i_c_a: fit.i_c,
        i_c_sigma_a: c[1][1].sqrt(),
        correlation: c[0][1] / (c[0][0] * c[1][1]).sqrt(),
        rms_relative: fit.rms_relative,
        l_cav_h: fit.params.l_cav,
        f0_zero_flux_hz: rad_to_hz(resonance_frequency(&fit.params, 0.0).map_err(err)?),
        l_squid_at_flux_h: squid_inductance(&fit.params, cfg.circuit.flux_ratio).map_err(err)?,
    };
    out.write_json("dc_fit.json", &summary)
}

#[derive(Debug, Serialize)]
struct PotentialSummary {
    region: &'static str,
    alpha_ratio: f64,
    delta_hz: f64,
    alpha_c_hz: f64,
    alpha_c0_hz: f64,
    probe_n_bar: f64,
    tilt_rad_per_s: f64,
    q_min: Option<f64>,
    q_max: Option<f64>,
    /// Closed-form extrema of the untilted potential.
    extrema: Vec<Extremum>,
    /// Extrema located on the sampled (possibly tilted) profile.
    profile_extrema: Vec<Extremum>,
}

fn potential(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let op = cfg.operating_point.operating_point();
    let pulse = cfg.pulse_sequence()?;
    let s = &cfg.potential;
    let tilt = op.tilt_for(probe_amplitude(s.probe_n_bar, &pulse));
    let grid = uniform_grid(q_span(&op) * s.half_width_scale, s.points);
    let profile = PotentialProfile::on_grid(&op, tilt, grid);
    out.write("potential.csv", profile.to_csv().as_bytes())?;
    let summary = PotentialSummary {
        region: classify_region(op.alpha_mag, op.delta, op.kappa, op.gamma).as_str(),
        alpha_ratio: cfg.operating_point.alpha_ratio,
        delta_hz: cfg.operating_point.delta_hz,
        alpha_c_hz: rad_to_hz(op.alpha_c()),
        alpha_c0_hz: rad_to_hz(op.alpha_c0()),
        probe_n_bar: s.probe_n_bar,
        tilt_rad_per_s: tilt,
        q_min: outer_minimum(&op),
        q_max: barrier_maximum(&op),
        extrema: extrema(&op),
        profile_extrema: profile.extrema.clone(),
    };
    out.write_json("extrema.json", &summary)
}

#[derive(Debug, Serialize)]
struct PhaseDiagramSummary {
    cells: usize,
    failed: usize,
    vacuum: StateMoments,
    label_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Serialize)]
struct TraceSidecar {
    dt_s: f64,
    seed: u64,
    n_samples: usize,
    layout: &'static str,
    operating_point: OperatingPoint,
}

fn phase_diagram(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let err = |e| CliError::pipeline("langevin_dynamics", e);
    let s = &cfg.phase_diagram;
    let template = cfg.operating_point.operating_point();
    let alphas = linspace(s.alpha_ratio_min, s.alpha_ratio_max, s.alpha_steps);
    let deltas: Vec<f64> = linspace(s.delta_min_hz, s.delta_max_hz, s.delta_steps).into_iter().map(hz_to_rad).collect();
    let pd = map_phase_diagram(&template, &alphas, &deltas, &cfg.phase_diagram_config()).map_err(err)?;
    let failed = pd.cells.iter().filter(|c| c.label.is_none()).count();
    if 2 * failed > pd.cells.len() {
        return Err(SweepAborted { failed, total: pd.cells.len() }.into());
    }
    out.write("phase_diagram.csv", pd.to_csv().as_bytes())?;
    let mut label_counts = BTreeMap::new();
    for c in &pd.cells {
        let key = c.label.map(|l| l.as_str()).unwrap_or("failed").to_string();
        *label_counts.entry(key).or_insert(0) += 1;
    }
    out.write_json("phase_diagram.json", &PhaseDiagramSummary { cells: pd.cells.len(), failed, vacuum: pd.vacuum, label_counts })?;

    if s.dump_trace {
        let seed = cell_seed(cfg.master_seed, usize::MAX);
        let opts = SimOptions { dt: s.dt_s, record_every: s.sample_every, ..SimOptions::default() };
        let pulse = PulseSequence::continuous(s.duration_s);
        let trace = simulate_trajectory(&template, &ProbeField::off(), &pulse, s.duration_s, &opts, seed).map_err(err)?;
        out.write("trace.bin", &trace.to_le_bytes())?;
        let sidecar = TraceSidecar {
            dt_s: trace.dt,
            seed,
            n_samples: trace.samples.len(),
            layout: "little-endian f64 pairs (Q, P)",
            operating_point: template,
        };
        out.write_json("trace.json", &sidecar)?;
    }
    Ok(())
}

fn fp_config(cfg: &RunConfig, op: &OperatingPoint) -> FpConfig {
    let mut c = FpConfig::for_operating_point(op);
    c.dt = cfg.fp.dt_s;
    if cfg.fp.n_points > 0 {
        c.n_points = cfg.fp.n_points;
    }
    c
}

#[derive(Debug, Clone, Serialize)]
struct EscapeRow {
    n_thermal: f64,
    q_threshold_ratio: f64,
    q_threshold: f64,
    gamma_hz: f64,
    r2: f64,
    window_start_s: f64,
    window_end_s: f64,
    points: usize,
    p_dark: f64,
    status: String,
}

#[derive(Debug, Serialize)]
struct EscapeSummary {
    q_reference: f64,
    cells: usize,
    failed: usize,
    gamma_min_hz: Option<f64>,
    gamma_max_hz: Option<f64>,
    rows: Vec<EscapeRow>,
}

#[derive(Debug, Serialize)]
struct DetectionCurveFit {
    q_threshold: f64,
    p_dark: f64,
    /// Fit of 1 - exp(-eta n_bar).
    eta: Option<f64>,
    r2: Option<f64>,
    /// Fit with the photon-number-dependent efficiency.
    eta_saturating: Option<f64>,
    epsilon: Option<f64>,
    r2_saturating: Option<f64>,
    fit_error: Option<String>,
}

fn escape_cell(cfg: &RunConfig, op: &OperatingPoint, q_ref: f64, n_thermal: f64, ratio: f64) -> Result<EscapeFit, String> {
    let mut o = *op;
    o.n_thermal = n_thermal;
    let mut c = fp_config(cfg, &o);
    c.q_threshold = ratio * q_ref;
    let profile = PotentialProfile::on_grid(&o, 0.0, c.grid());
    let w0 = DensityProfile::gaussian(c.grid(), o.vacuum_variance(), 0.0);
    let s = survival_curve(&w0, &profile, &c, cfg.fp.t_max_s, cfg.fp.sample_interval_s, cfg.fp.stop_below)
        .map_err(|e| e.to_string())?;
    escape_rate(&s).map_err(|e| e.to_string())
}

fn fokker_planck(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let err = |e| CliError::pipeline("fokker_planck", e);
    let op = cfg.operating_point.operating_point();
    let pulse = cfg.pulse_sequence()?;
    let base = fp_config(cfg, &op);
    let q_ref = base.q_threshold;
    let tau_p = pulse.timing.pump_duration;

    // Escape-rate sensitivity over thermal occupation and threshold.
    let f = &cfg.fp;
    let cells: Vec<(f64, f64)> =
        f.n_thermal_values.iter().flat_map(|&n| f.q_threshold_ratios.iter().map(move |&r| (n, r))).collect();
    let report = sweep(&cells, cfg.master_seed, cfg.workers, |&(n, r), _| escape_cell(cfg, &op, q_ref, n, r))?;
    let rows: Vec<EscapeRow> = cells
        .iter()
        .zip(&report.cells)
        .map(|(&(n_thermal, ratio), c)| match &c.result {
            Ok(fit) => EscapeRow {
                n_thermal,
                q_threshold_ratio: ratio,
                q_threshold: ratio * q_ref,
                gamma_hz: fit.rate,
                r2: fit.r_squared,
                window_start_s: fit.window.0,
                window_end_s: fit.window.1,
                points: fit.n_points,
                p_dark: 1.0 - (-fit.rate * tau_p).exp(),
                status: "ok".into(),
            },
            Err(e) => EscapeRow {
                n_thermal,
                q_threshold_ratio: ratio,
                q_threshold: ratio * q_ref,
                gamma_hz: f64::NAN,
                r2: f64::NAN,
                window_start_s: f64::NAN,
                window_end_s: f64::NAN,
                points: 0,
                p_dark: f64::NAN,
                status: e.clone(),
            },
        })
        .collect();
    out.write_csv(
        "fp_escape_sweep.csv",
        &["n_thermal", "q_threshold_ratio", "q_threshold", "gamma_hz", "r2", "window_start_s", "window_end_s", "points", "p_dark", "status"],
        &rows,
    )?;
    let ok: Vec<f64> = rows.iter().filter(|r| r.status == "ok").map(|r| r.gamma_hz).collect();
    let summary = EscapeSummary {
        q_reference: q_ref,
        cells: rows.len(),
        failed: report.failed,
        gamma_min_hz: ok.iter().cloned().reduce(f64::min),
        gamma_max_hz: ok.iter().cloned().reduce(f64::max),
        rows,
    };
    out.write_json("fp_escape_summary.json", &summary)?;

    // Detection curve from switching densities at the end of the pump.
    let dark = switching_density(&op, 0.0, &pulse, &base).map_err(err)?;
    let probed = sweep(&f.n_bar_values, cfg.master_seed, cfg.workers, |&n, _| {
        if n > 0.0 {
            switching_density(&op, probe_amplitude(n, &pulse), &pulse, &base).map_err(|e| e.to_string())
        } else {
            Ok(dark.clone())
        }
    })?;
    let mut curve = Vec::new();
    let mut points = Vec::new();
    for (&n, c) in f.n_bar_values.iter().zip(&probed.cells) {
        if let Ok(d) = &c.result {
            let p = probabilities_from(&dark, d, base.q_threshold);
            curve.push((n, probe_amplitude(n, &pulse), p.p_click, p.p_dark, p.p_ideal));
            points.push((n, p.p_ideal));
        }
    }
    out.write_csv("fp_detection.csv", &["n_bar", "b_mag", "p_click", "p_dark", "p_ideal"], &curve)?;
    let p_dark = 1.0 - dark.mass_within(base.q_threshold);
    let fit = fit_efficiency_curve(&points);
    let summary = match fit {
        Ok(fit) => DetectionCurveFit {
            q_threshold: base.q_threshold,
            p_dark,
            eta: Some(fit.eta_restricted),
            r2: Some(fit.r_squared_restricted),
            eta_saturating: Some(fit.eta),
            epsilon: Some(fit.epsilon),
            r2_saturating: Some(fit.r_squared),
            fit_error: None,
        },
        Err(e) => DetectionCurveFit {
            q_threshold: base.q_threshold,
            p_dark,
            eta: None,
            r2: None,
            eta_saturating: None,
            epsilon: None,
            r2_saturating: None,
            fit_error: Some(e.to_string()),
        },
    };
    out.write_json("fp_detection_fit.json", &summary)?;

    // Density snapshots of the probe-off evolution over the pump window.
    let flat = PotentialProfile::on_grid(&op, 0.0, base.grid());
    let w0 = DensityProfile::gaussian(base.grid(), op.vacuum_variance(), 0.0);
    let ev = evolve(&w0, &flat, &base, tau_p, Some(f.snapshot_interval_s)).map_err(err)?;
    let snap: Vec<(f64, f64, f64)> = ev
        .snapshots
        .iter()
        .flat_map(|d| d.q_grid.iter().zip(&d.w_values).map(move |(&q, &w)| (d.time, q, w)))
        .collect();
    out.write_csv("fp_snapshots.csv", &["time_s", "q", "w"], &snap)
}

fn detection_options(cfg: &RunConfig, op: &OperatingPoint) -> DetectionOptions {
    DetectionOptions {
        dt: cfg.detect.dt_s,
        readout_noise_var: cfg.detect.readout_noise_ratio * op.vacuum_variance(),
        scale: cfg.detect.readout_scale,
        // The sweep owns the parallelism; each record is one sequential task.
        execution: Execution::Sequential,
    }
}

/// Detection records for each photon number, one seeded cell per value.
fn records(cfg: &RunConfig, n_bars: &[f64], n_pulses: usize) -> Result<Vec<Result<DetectionRecord, String>>, CliError> {
    let op = cfg.operating_point.operating_point();
    let pulse = cfg.pulse_sequence()?;
    let opts = detection_options(cfg, &op);
    let report = sweep(n_bars, cfg.master_seed, cfg.workers, |&n, seed| {
        run_detection_experiment(&op, n, &pulse, n_pulses, seed, &opts).map_err(|e| e.to_string())
    })?;
    Ok(report.cells.into_iter().map(|c| c.result).collect())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecordSummary {
    pub n_bar: f64,
    pub threshold: f64,
    pub clicks: usize,
    pub n_pulses: usize,
    pub click_fraction: f64,
    pub mean_r: f64,
    pub status: String,
}

fn detect(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let s = &cfg.detect;
    let recs = records(cfg, &s.n_bar_values, s.n_pulses)?;
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for (&n, r) in s.n_bar_values.iter().zip(&recs) {
        match r {
            Ok(rec) => {
                let mut rec = rec.clone();
                rec.apply_threshold(s.threshold);
                rows.extend(rec.results.iter().enumerate().map(|(i, &v)| (n, i, v)));
                summaries.push(RecordSummary {
                    n_bar: n,
                    threshold: s.threshold,
                    clicks: rec.clicks,
                    n_pulses: rec.n_pulses,
                    click_fraction: rec.click_fraction(s.threshold),
                    mean_r: rec.mean(),
                    status: "ok".into(),
                });
            }
            Err(e) => summaries.push(RecordSummary {
                n_bar: n,
                threshold: s.threshold,
                clicks: 0,
                n_pulses: 0,
                click_fraction: f64::NAN,
                mean_r: f64::NAN,
                status: e.clone(),
            }),
        }
    }
    out.write_csv("detect_records.csv", &["n_bar", "pulse", "r"], &rows)?;
    out.write_json("detect_summary.json", &summaries)?;

    let hi = if s.histogram_max > 0.0 {
        s.histogram_max
    } else {
        rows.iter().map(|r| r.2).fold(0.0, f64::max) * (1.0 + 1e-9) + f64::MIN_POSITIVE
    };
    let mut hist = Vec::new();
    for (&n, r) in s.n_bar_values.iter().zip(&recs) {
        if let Ok(rec) = r {
            hist.extend(rec.histogram(0.0, hi, s.histogram_bins).into_iter().map(|(c, f)| (n, c, f)));
        }
    }
    out.write_csv("detect_histogram.csv", &["n_bar", "r_center", "fraction"], &hist)
}

fn both(recs: Vec<Result<DetectionRecord, String>>, module: &'static str) -> Result<Vec<DetectionRecord>, CliError> {
    recs.into_iter().collect::<Result<Vec<_>, _>>().map_err(|e| CliError::pipeline(module, e))
}

#[derive(Debug, Serialize)]
struct RocSummary {
    n_bar: f64,
    n_pulses: usize,
    auc: f64,
    auc_rank: f64,
    threshold: f64,
    objective: f64,
    p_click: f64,
    p_dark: f64,
}

fn roc(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let err = |e: critdet::statistics::StatsError| CliError::pipeline("detector_statistics", e);
    let s = &cfg.roc;
    let recs = both(records(cfg, &[s.n_bar, 0.0], s.n_pulses)?, "detection_protocol")?;
    let (on, off) = (&recs[0], &recs[1]);
    let grid = threshold_grid(on, off, s.thresholds);
    let curve = roc_curve(on, off, &grid).map_err(err)?;
    let best = optimize_threshold(on, off, &grid).map_err(err)?;
    let rows: Vec<(f64, f64, f64, f64)> = curve
        .points
        .iter()
        .zip(&best.values)
        .map(|(p, v)| (p.threshold, p.true_positive, p.false_positive, v.1))
        .collect();
    out.write_csv("roc.csv", &["threshold", "true_positive", "false_positive", "objective"], &rows)?;
    let summary = RocSummary {
        n_bar: s.n_bar,
        n_pulses: s.n_pulses,
        auc: curve.auc,
        auc_rank: auc_rank(on, off),
        threshold: best.threshold,
        objective: best.objective,
        p_click: on.click_fraction(best.threshold),
        p_dark: off.click_fraction(best.threshold),
    };
    out.write_json("roc_summary.json", &summary)
}

#[derive(Debug, Serialize)]
struct FiguresOfMerit {
    threshold: f64,
    eta: f64,
    epsilon: f64,
    p_dark: f64,
    gamma_dark_hz: f64,
    gamma_dark_source: &'static str,
    nep_w_per_sqrthz: f64,
    responsivity_per_w: f64,
    /// "saturating" when epsilon came from the two-parameter fit, "plain" when it was pinned to 0.
    model_fit: &'static str,
    r2: f64,
    eta_plain: f64,
    r2_plain: f64,
    poisson_thresholds: Vec<f64>,
    poisson_skipped: Vec<f64>,
    poisson_max_deviation: Option<f64>,
}

fn figures(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let err = |e: critdet::statistics::StatsError| CliError::pipeline("detector_statistics", e);
    let s = &cfg.figures;
    let pulse = cfg.pulse_sequence()?;
    let mut n_bars = vec![0.0];
    n_bars.extend(s.n_bar_values.iter().cloned().filter(|&n| n > 0.0));
    n_bars.dedup();
    let recs = both(records(cfg, &n_bars, s.n_pulses)?, "detection_protocol")?;
    let off = &recs[0];

    let p_dark = off.click_fraction(s.threshold);
    if p_dark >= 1.0 {
        return Err(CliError::pipeline("detector_statistics", "every probe-off pulse clicks at this threshold"));
    }
    let points: Vec<(f64, f64)> = n_bars[1..]
        .iter()
        .zip(&recs[1..])
        .map(|(&n, r)| (n, (r.click_fraction(s.threshold) - p_dark) / (1.0 - p_dark)))
        .collect();
    let fit = fit_efficiency_curve(&points).map_err(err)?;
    let (eta, epsilon, model_fit, r2) = if (0.0..1.0).contains(&fit.epsilon) {
        (fit.eta, fit.epsilon, "saturating", fit.r_squared)
    } else {
        log::warn!("fitted epsilon {} outside [0, 1); using the plain exponential fit", fit.epsilon);
        (fit.eta_restricted, 0.0, "plain", fit.r_squared_restricted)
    };
    let rows: Vec<(f64, f64, f64, f64, f64)> = points
        .iter()
        .zip(&recs[1..])
        .map(|(&(n, p_ideal), r)| {
            let model = eta_eff(eta, epsilon, n).map(|e| 1.0 - (-e * n).exp()).unwrap_or(f64::NAN);
            (n, r.click_fraction(s.threshold), p_ideal, model, p_ideal - model)
        })
        .collect();
    out.write_csv("efficiency_fit.csv", &["n_bar", "p_click", "p_ideal", "model", "residual"], &rows)?;

    let tau_p = pulse.timing.pump_duration;
    let (gamma_dark, gamma_dark_source) = if s.gamma_dark_hz > 0.0 {
        (s.gamma_dark_hz, "config")
    } else {
        (-(1.0 - p_dark).ln() / tau_p, "probe_off_record")
    };
    let model = DetectorModel {
        eta,
        epsilon,
        p_dark,
        gamma_dark,
        tau: pulse.timing.probe_duration,
        omega: hz_to_rad(s.frequency_hz),
    };
    model.validate().map_err(err)?;

    // Per-threshold calibration from the record nearest one photon.
    let k_ref = (1..n_bars.len())
        .min_by(|&a, &b| (n_bars[a] - 1.0).abs().total_cmp(&(n_bars[b] - 1.0).abs()))
        .expect("at least one probed record");
    let mut used = Vec::new();
    let mut skipped = Vec::new();
    let mut measured = Vec::new();
    let mut cals = Vec::new();
    for &th in &s.poisson_thresholds {
        let pd = off.click_fraction(th);
        match efficiency_from_counts(recs[k_ref].click_fraction(th), pd, n_bars[k_ref]) {
            Ok(e) if e > 0.0 && e.is_finite() && pd < 1.0 => {
                used.push(th);
                cals.push(Some(ThresholdCalibration { eta: e, p_dark: pd }));
                measured.push(recs.iter().map(|r| 1.0 - r.click_fraction(th)).collect::<Vec<_>>());
            }
            _ => skipped.push(th),
        }
    }
    let mut poisson_max = None;
    if !used.is_empty() {
        let check = poisson_check(&n_bars, &measured, &cals, epsilon).map_err(err)?;
        let mut prow = Vec::new();
        for (j, &th) in used.iter().enumerate() {
            for (k, &n) in n_bars.iter().enumerate() {
                prow.push((th, n, measured[j][k], check.model[j][k], check.deviation[j][k]));
            }
        }
        out.write_csv("poisson_check.csv", &["threshold", "n_bar", "measured_p0", "model_p0", "deviation"], &prow)?;
        poisson_max = Some(check.max_deviation);
    }

    let merit = FiguresOfMerit {
        threshold: s.threshold,
        eta,
        epsilon,
        p_dark,
        gamma_dark_hz: gamma_dark,
        gamma_dark_source,
        nep_w_per_sqrthz: nep(&model).map_err(err)?,
        responsivity_per_w: responsivity(&model).map_err(err)?,
        model_fit,
        r2,
        eta_plain: fit.eta_restricted,
        r2_plain: fit.r_squared_restricted,
        poisson_thresholds: used,
        poisson_skipped: skipped,
        poisson_max_deviation: poisson_max,
    };
    out.write_json("figures.json", &merit)
}

#[derive(Debug, Serialize)]
struct CalibrationLedger {
    source: String,
    gain_db: f64,
    gain_db_err: Option<f64>,
    t_preamp_k: f64,
    t_preamp_k_err: Option<f64>,
    s21_db: f64,
    attenuation_db: f64,
    extra: Vec<LedgerEntry>,
    total_input_db: f64,
    sigma_components_db: Vec<f64>,
    combined_sigma_db: f64,
    combined_sigma_relative: f64,
    probe_power_w: f64,
    input_power_w: f64,
    probe_duration_s: f64,
    n_bar: f64,
    b_mag: f64,
}

fn calibrate(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let err = |e| CliError::pipeline("calibration", e);
    let s = &cfg.calibrate;
    let pulse = cfg.pulse_sequence()?;
    let (points, source) = if s.psd_csv.is_empty() {
        let pts = s
            .synthetic_temperatures_k
            .iter()
            .map(|&t| (t, thermal_psd(t, s.synthetic_gain_db, s.synthetic_t_preamp_k)))
            .collect();
        (pts, "synthetic".to_string())
    } else {
        (read_two_columns(Path::new(&s.psd_csv), "calibration")?, s.psd_csv.clone())
    };
    let fit = fit_system_gain(&points).map_err(err)?;
    let rows: Vec<(f64, f64, f64)> = points.iter().zip(&fit.residuals).map(|(&(t, p), &r)| (t, p, r)).collect();
    out.write_csv("calibration_fit.csv", &["temperature_k", "psd_w_per_hz", "residual_w_per_hz"], &rows)?;

    // Extra entries carry their own sigma; it joins the quadrature sum.
    let mut sigmas = s.sigma_components_db.clone();
    sigmas.extend(s.extra.iter().map(|e| e.sigma_db).filter(|&x| x > 0.0));
    let chain = CalibrationChain {
        gain_db: fit.gain_db,
        t_preamp: fit.t_preamp,
        attenuation_db: attenuation(s.s21_db, fit.gain_db),
        sigma_db_components: sigmas.clone(),
        extra: s.extra.clone(),
    };
    chain.validate().map_err(err)?;
    let total = chain.total_input_db();
    let sigma = chain.combined_sigma_db().map_err(err)?;
    let input_power = s.probe_power_w * db_to_linear(total);
    let tau = pulse.timing.probe_duration;
    let flux = photons_per_pulse(input_power, tau, hz_to_rad(s.frequency_hz)).map_err(err)?;
    let ledger = CalibrationLedger {
        source,
        gain_db: fit.gain_db,
        gain_db_err: fit.gain_db_err,
        t_preamp_k: fit.t_preamp,
        t_preamp_k_err: fit.t_preamp_err,
        s21_db: s.s21_db,
        attenuation_db: chain.attenuation_db,
        extra: chain.extra.clone(),
        total_input_db: total,
        sigma_components_db: sigmas,
        combined_sigma_db: sigma,
        combined_sigma_relative: db_error_to_relative(sigma),
        probe_power_w: s.probe_power_w,
        input_power_w: input_power,
        probe_duration_s: tau,
        n_bar: flux.n_bar,
        b_mag: flux.b_mag,
    };
    out.write_json("calibration.json", &ledger)
}

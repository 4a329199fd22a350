//! Effective potential of the slow quadrature, its extrema and the
//! theoretical region map of the driven Kerr oscillator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::hz_to_rad;
use crate::numerics::bisect;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("invalid operating point: {0}")]
    InvalidOperatingPoint(String),
    #[error("potential grid needs at least 3 increasing samples")]
    BadGrid,
}

/// RWA model parameters. Rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub delta: f64,
    pub alpha_mag: f64,
    pub theta_p: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub kerr: f64,
    pub n_thermal: f64,
}

impl OperatingPoint {
    /// Working point of the detector experiment.
    pub fn reference() -> Self {
        let kappa = hz_to_rad(4.44e6);
        let gamma = hz_to_rad(2.30e6);
        Self {
            delta: hz_to_rad(0.7e6),
            alpha_mag: 0.51 * (kappa + gamma),
            theta_p: 0.0,
            kappa,
            gamma,
            kerr: hz_to_rad(-208.0),
            n_thermal: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        let bad = |m: &str| Err(PotentialError::InvalidOperatingPoint(m.to_string()));
        let all = [self.delta, self.alpha_mag, self.theta_p, self.kappa, self.gamma, self.kerr, self.n_thermal];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite field");
        }
        if self.kappa <= 0.0 || self.gamma <= 0.0 {
            return bad("kappa and gamma must be > 0");
        }
        if self.alpha_mag < 0.0 {
            return bad("alpha_mag must be >= 0");
        }
        if self.kerr >= 0.0 {
            return bad("kerr must be < 0");
        }
        if self.n_thermal < 0.0 {
            return bad("n_thermal must be >= 0");
        }
        Ok(())
    }

    pub fn total_loss(&self) -> f64 {
        self.kappa + self.gamma
    }

    /// alpha_c(0) = (kappa + gamma)/2.
    pub fn alpha_c0(&self) -> f64 {
        0.5 * self.total_loss()
    }

    pub fn alpha_c(&self) -> f64 {
        critical_amplitude(self.delta, self.kappa, self.gamma)
    }

    /// D = (kappa + gamma)/2 (n_T + 1/2).
    pub fn diffusion(&self) -> f64 {
        0.5 * self.total_loss() * (self.n_thermal + 0.5)
    }

    /// Stationary single-quadrature variance without pump.
    pub fn vacuum_variance(&self) -> f64 {
        self.n_thermal + 0.5
    }

    pub fn with_alpha_ratio(mut self, ratio: f64) -> Self {
        self.alpha_mag = ratio * self.total_loss();
        self
    }

    /// Sets |alpha| so the Q^2 coefficient vanishes, the edge of the monostable region.
    pub fn at_critical_pump(mut self) -> Self {
        self.alpha_mag = self.alpha_c();
        self
    }

    /// Probe amplitude entering the tilt, sqrt(2 kappa) |b|.
    pub fn tilt_for(&self, b_mag: f64) -> f64 {
        (2.0 * self.kappa).sqrt() * b_mag
    }
}

pub fn critical_amplitude(delta: f64, kappa: f64, gamma: f64) -> f64 {
    (delta * delta + 0.25 * (kappa + gamma).powi(2)).sqrt()
}

/// Polynomial coefficients of U(Q) = c2 Q^2 + c4 Q^4 + c6 Q^6 + tilt Q.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Coefficients {
    c2: f64,
    c4: f64,
    c6: f64,
}

fn coefficients(op: &OperatingPoint) -> Coefficients {
    let pref = 2.0 / (op.alpha_mag + op.alpha_c0());
    let ac = op.alpha_c();
    Coefficients {
        c2: pref * (ac * ac - op.alpha_mag * op.alpha_mag) / 4.0,
        c4: pref * 1.5 * op.delta * op.kerr,
        c6: pref * 3.0 * op.kerr * op.kerr,
    }
}

/// Effective potential with a linear probe tilt. rad/s.
pub fn potential(q: f64, op: &OperatingPoint, tilt: f64) -> f64 {
    let c = coefficients(op);
    let q2 = q * q;
    q2 * (c.c2 + q2 * (c.c4 + q2 * c.c6)) + tilt * q
}

pub fn potential_slope(q: f64, op: &OperatingPoint, tilt: f64) -> f64 {
    let c = coefficients(op);
    let q2 = q * q;
    q * (2.0 * c.c2 + q2 * (4.0 * c.c4 + 6.0 * c.c6 * q2)) + tilt
}

pub fn potential_curvature(q: f64, op: &OperatingPoint) -> f64 {
    let c = coefficients(op);
    let q2 = q * q;
    2.0 * c.c2 + q2 * (12.0 * c.c4 + 30.0 * c.c6 * q2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumKind {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub q: f64,
    pub u: f64,
    pub kind: ExtremumKind,
    /// U''(q), rad/s.
    pub curvature: f64,
}

fn classify(q: f64, op: &OperatingPoint, tilt: f64) -> Extremum {
    let mut curvature = potential_curvature(q, op);
    if curvature == 0.0 {
        // Degenerate origin: the quartic term decides.
        curvature = coefficients(op).c4.signum() * f64::MIN_POSITIVE;
    }
    Extremum {
        q,
        u: potential(q, op, tilt),
        kind: if curvature > 0.0 { ExtremumKind::Min } else { ExtremumKind::Max },
        curvature,
    }
}

/// Outer-minimum location, `None` while |alpha| <= alpha_c(0).
pub fn outer_minimum(op: &OperatingPoint) -> Option<f64> {
    let a2 = op.alpha_mag.powi(2) - op.alpha_c0().powi(2);
    if a2 <= 0.0 {
        return None;
    }
    let x = (op.delta + a2.sqrt()) / (6.0 * op.kerr.abs());
    (x > 0.0).then(|| x.sqrt())
}

/// Barrier-top location, present only in the tristable region.
pub fn barrier_maximum(op: &OperatingPoint) -> Option<f64> {
    let a2 = op.alpha_mag.powi(2) - op.alpha_c0().powi(2);
    if a2 <= 0.0 || op.delta <= 0.0 || op.alpha_mag >= op.alpha_c() {
        return None;
    }
    let x = (op.delta - a2.sqrt()) / (6.0 * op.kerr.abs());
    (x > 0.0).then(|| x.sqrt())
}

/// Closed-form extrema of the untilted potential, sorted by Q.
pub fn extrema(op: &OperatingPoint) -> Vec<Extremum> {
    let mut qs = vec![0.0];
    if let Some(qm) = outer_minimum(op) {
        qs.extend([-qm, qm]);
    }
    if let Some(qb) = barrier_maximum(op) {
        qs.extend([-qb, qb]);
    }
    qs.sort_by(f64::total_cmp);
    qs.into_iter().map(|q| classify(q, op, 0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Monostable,
    BistableSecondorder,
    TristableFirstorder,
    BistableAbove,
    /// Delta = 0 and |alpha| = alpha_c(0), where all boundaries meet.
    CriticalPoint,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Monostable => "monostable",
            Region::BistableSecondorder => "bistable_secondorder",
            Region::TristableFirstorder => "tristable_firstorder",
            Region::BistableAbove => "bistable_above",
            Region::CriticalPoint => "critical_point",
        }
    }
}

pub fn classify_region(alpha_mag: f64, delta: f64, kappa: f64, gamma: f64) -> Region {
    let ac0 = 0.5 * (kappa + gamma);
    let ac = critical_amplitude(delta, kappa, gamma);
    if delta == 0.0 && ((alpha_mag - ac0) / ac0).abs() < 1e-12 {
        return Region::CriticalPoint;
    }
    if delta <= 0.0 {
        if alpha_mag > ac { Region::BistableSecondorder } else { Region::Monostable }
    } else if alpha_mag <= ac0 {
        Region::Monostable
    } else if alpha_mag < ac {
        Region::TristableFirstorder
    } else {
        Region::BistableAbove
    }
}

/// Sampled potential with its extrema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialProfile {
    pub q_grid: Vec<f64>,
    pub u_values: Vec<f64>,
    pub extrema: Vec<Extremum>,
    pub tilt: f64,
}

/// Default half-span scale: covers the outer wells or the Kerr scale.
pub fn q_span(op: &OperatingPoint) -> f64 {
    let kerr_scale = (op.delta.max(0.0) / (6.0 * op.kerr.abs())).sqrt();
    outer_minimum(op).unwrap_or(0.0).max(kerr_scale).max(10.0)
}

pub fn uniform_grid(half_width: f64, n: usize) -> Vec<f64> {
    let h = 2.0 * half_width / (n - 1) as f64;
    (0..n).map(|i| -half_width + i as f64 * h).collect()
}

impl PotentialProfile {
    /// 4001 samples over +-1.5 q_span.
    pub fn new(op: &OperatingPoint, tilt: f64) -> Self {
        Self::on_grid(op, tilt, uniform_grid(1.5 * q_span(op), 4001))
    }

    pub fn on_grid(op: &OperatingPoint, tilt: f64, q_grid: Vec<f64>) -> Self {
        let u_values = q_grid.iter().map(|&q| potential(q, op, tilt)).collect();
        let extrema = if tilt == 0.0 {
            extrema(op)
        } else {
            tilted_extrema(op, tilt, &q_grid)
        };
        Self { q_grid, u_values, extrema, tilt }
    }

    /// Arbitrary sampled potential; extrema from parabolic fits to discrete turning points.
    pub fn from_samples(q_grid: Vec<f64>, u_values: Vec<f64>) -> Result<Self, PotentialError> {
        if q_grid.len() < 3 || q_grid.len() != u_values.len() || q_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PotentialError::BadGrid);
        }
        let mut ext = Vec::new();
        for i in 1..q_grid.len() - 1 {
            let (ul, u0, ur) = (u_values[i - 1], u_values[i], u_values[i + 1]);
            let is_min = u0 < ul && u0 <= ur;
            let is_max = u0 > ul && u0 >= ur;
            if !(is_min || is_max) {
                continue;
            }
            let (ql, q0, qr) = (q_grid[i - 1], q_grid[i], q_grid[i + 1]);
            let d1 = (u0 - ul) / (q0 - ql);
            let d2 = (ur - u0) / (qr - q0);
            let curvature = 2.0 * (d2 - d1) / (qr - ql);
            let slope0 = (d1 * (qr - q0) + d2 * (q0 - ql)) / (qr - ql);
            let vertex = q0 - slope0 / curvature;
            let qs = if (ql..=qr).contains(&vertex) { vertex } else { q0 };
            ext.push(Extremum {
                q: qs,
                u: u0 + slope0 * (qs - q0) + 0.5 * curvature * (qs - q0).powi(2),
                kind: if is_min { ExtremumKind::Min } else { ExtremumKind::Max },
                curvature,
            });
        }
        Ok(Self { q_grid, u_values, extrema: ext, tilt: 0.0 })
    }

    /// Two-column CSV (q, u_rad_per_s).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("q,u_rad_per_s\n");
        for (q, u) in self.q_grid.iter().zip(&self.u_values) {
            s.push_str(&format!("{q:.17e},{u:.17e}\n"));
        }
        s
    }
}

fn tilted_extrema(op: &OperatingPoint, tilt: f64, grid: &[f64]) -> Vec<Extremum> {
    let slope = |q: f64| potential_slope(q, op, tilt);
    let mut out = Vec::new();
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (sa, sb) = (slope(a), slope(b));
        if sa == 0.0 {
            out.push(classify(a, op, tilt));
        } else if sa.signum() != sb.signum() && sb != 0.0 {
            if let Some(r) = bisect(slope, a, b) {
                out.push(classify(r, op, tilt));
            }
        }
    }
    out
}

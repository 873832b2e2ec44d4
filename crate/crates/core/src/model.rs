//! Physical parameters, grids and the detection model.
//!
//! Internal units: time in ps, rates in 1/ps, angular frequencies in rad/ps.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const C_LIGHT: f64 = 299_792_458.0;
pub const PS_PER_S: f64 = 1e12;
/// Factor converting amplitude nepers to decibels of squeezing.
pub const DB_PER_NEPER: f64 = 8.685_889_638_065_035;

pub fn omega_from_wavelength_nm(lambda_nm: f64) -> f64 {
    2.0 * PI * C_LIGHT / (lambda_nm * 1e-9) / PS_PER_S
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    pub gamma_e: f64,
    pub gamma_i: f64,
    /// Nonlinear coupling Λ in 1/ps. Config values are given in 1/s and
    /// taken as angular rates (no factor 2π).
    pub lambda_nl: f64,
    pub delta_p: f64,
    pub d_int: f64,
    pub fsr_count_m: i32,
}

impl ResonatorParams {
    pub fn new(gamma_e: f64, gamma_i: f64, lambda_nl: f64, delta_p: f64, d_int: f64, fsr_count_m: i32) -> Result<Self> {
        let p = Self { gamma_e, gamma_i, lambda_nl, delta_p, d_int, fsr_count_m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_e > 0.0 && self.gamma_e.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma_e must be positive, got {}", self.gamma_e)));
        }
        if !(self.gamma_i >= 0.0 && self.gamma_i.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma_i must be non-negative, got {}", self.gamma_i)));
        }
        if !(self.lambda_nl >= 0.0 && self.lambda_nl.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda_nl must be non-negative, got {}", self.lambda_nl)));
        }
        if !self.delta_p.is_finite() || !self.d_int.is_finite() {
            return Err(Error::InvalidParameter("detuning and dispersion must be finite".into()));
        }
        Ok(())
    }

    /// Device of the reference experiment: 660 ps loaded and 2730 ps intrinsic
    /// lifetimes, Λ = 1.4 /s, D_int = -1.38e-6 /ps, m = 5.
    pub fn reference_device() -> Self {
        let gamma_tot = 1.0 / 660.0;
        let gamma_i = 1.0 / 2730.0;
        Self {
            gamma_e: gamma_tot - gamma_i,
            gamma_i,
            lambda_nl: lambda_from_per_second(1.4),
            delta_p: 0.0,
            d_int: -1.38e-6,
            fsr_count_m: 5,
        }
    }

    pub fn gamma_tot(&self) -> f64 {
        self.gamma_e + self.gamma_i
    }

    pub fn p_e(&self) -> f64 {
        self.gamma_e / self.gamma_tot()
    }

    pub fn delta_omega_d(&self) -> f64 {
        4.0 * PI * self.d_int * (self.fsr_count_m as f64).powi(2)
    }

    pub fn with_detuning(&self, delta_p: f64) -> Self {
        Self { delta_p, ..*self }
    }
}

pub fn lambda_from_per_second(v: f64) -> f64 {
    v / PS_PER_S
}

/// Λ = ħ ω_p² c n₂ / (n₀² V_eff), in 1/s.
pub fn compute_lambda(n2: f64, v_eff: f64, n0: f64, omega_p: f64) -> Result<f64> {
    for (name, v) in [("n2", n2), ("v_eff", v_eff), ("n0", n0), ("omega_p", omega_p)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(HBAR * omega_p * omega_p * C_LIGHT * n2 / (n0 * n0 * v_eff))
}

/// Energy decay rates from loaded and intrinsic quality factors, γ = ω/Q.
pub fn from_quality_factors(q_loaded: f64, q_intrinsic: f64, omega_p: f64) -> Result<(f64, f64)> {
    if !(q_loaded > 0.0) || !(omega_p > 0.0) {
        return Err(Error::InvalidParameter("quality factor and frequency must be positive".into()));
    }
    if !(q_intrinsic >= q_loaded) {
        return Err(Error::InvalidParameter(format!("intrinsic Q {q_intrinsic} below loaded Q {q_loaded}")));
    }
    let gamma_tot = omega_p / q_loaded;
    let gamma_i = if q_intrinsic.is_infinite() { 0.0 } else { omega_p / q_intrinsic };
    Ok((gamma_tot - gamma_i, gamma_i))
}

/// Minimum CW pump power (W) in the bus waveguide at which the signal/idler
/// gain equals the cavity loss, minimised over pump detuning. Returns
/// `(power, delta_p)`.
pub fn cw_threshold(params: &ResonatorParams, omega_p: f64) -> (f64, f64) {
    let g = params.gamma_tot();
    let lam = params.lambda_nl;
    let dwd = params.delta_omega_d();
    let power_at = |dp: f64| -> f64 {
        // threshold condition Λ|c|² = sqrt(γ²/4 + κ²), κ = (4x - 2Δ_p - Δω_D)/2
        let f = |x: f64| x * x - g * g / 4.0 - ((4.0 * x - 2.0 * dp - dwd) / 2.0).powi(2);
        // f is a downward parabola in x; take the smallest positive root
        let a = -3.0;
        let b = 2.0 * (2.0 * dp + dwd);
        let c = -g * g / 4.0 - ((2.0 * dp + dwd) / 2.0).powi(2);
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return f64::INFINITY;
        }
        let r1 = (-b + disc.sqrt()) / (2.0 * a);
        let r2 = (-b - disc.sqrt()) / (2.0 * a);
        let x = [r1, r2].into_iter().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        if !x.is_finite() {
            return f64::INFINITY;
        }
        debug_assert!(f(x).abs() < 1e-6 * g * g);
        let n = x / lam;
        let rate = n * ((dp - x).powi(2) + g * g / 4.0) / (2.0 * params.gamma_e);
        rate * PS_PER_S * HBAR * omega_p * PS_PER_S
    };
    let mut best = (f64::INFINITY, 0.0);
    let n = 4000;
    for k in 0..=n {
        let dp = -2.0 * g + 8.0 * g * k as f64 / n as f64;
        let p = power_at(dp);
        if p < best.0 {
            best = (p, dp);
        }
    }
    let (mut lo, mut hi) = (best.1 - 2e-3 * g, best.1 + 2e-3 * g);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if power_at(m1) < power_at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let dp = 0.5 * (lo + hi);
    (power_at(dp), dp)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpPulse {
    /// Average power in the bus waveguide, W.
    pub avg_power: f64,
    /// Repetition rate, Hz.
    pub rep_rate: f64,
    /// Top-hat duration, ps.
    pub duration_t: f64,
    /// Carrier angular frequency, rad/ps.
    pub carrier_omega_p: f64,
}

impl PumpPulse {
    pub fn new(avg_power: f64, rep_rate: f64, duration_t: f64, carrier_omega_p: f64) -> Result<Self> {
        let p = Self { avg_power, rep_rate, duration_t, carrier_omega_p };
        if !(duration_t > 0.0) || !(rep_rate > 0.0) || !(avg_power >= 0.0) || !(carrier_omega_p > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid pump pulse {p:?}")));
        }
        Ok(p)
    }

    /// Pulse from its energy in pJ at the reference 100 kHz rate and 1544.53 nm carrier.
    pub fn from_energy_pj(energy_pj: f64, duration_t: f64) -> Self {
        let rep_rate = 1e5;
        Self { avg_power: energy_pj * 1e-12 * rep_rate, rep_rate, duration_t, carrier_omega_p: omega_from_wavelength_nm(1544.53) }
    }

    pub fn energy_j(&self) -> f64 {
        self.avg_power / self.rep_rate
    }

    pub fn energy_pj(&self) -> f64 {
        self.energy_j() * 1e12
    }

    pub fn photon_energy_j(&self) -> f64 {
        HBAR * self.carrier_omega_p * PS_PER_S
    }

    /// Height of the top-hat drive, photons^(1/2)/ps^(1/2): the pulse energy
    /// is spread uniformly over the duration T.
    pub fn drive_amplitude(&self) -> f64 {
        let photons = self.energy_j() / self.photon_energy_j();
        (photons / self.duration_t).sqrt()
    }

    pub fn drive(&self, t: f64) -> f64 {
        if (0.0..=self.duration_t).contains(&t) {
            self.drive_amplitude()
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub dt: f64,
    pub n_points: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, dt: f64, n_points: usize) -> Result<Self> {
        if !(dt > 0.0) || n_points < 2 || !t_start.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid grid dt={dt}, n={n_points}")));
        }
        Ok(Self { t_start, dt, n_points })
    }

    /// Grid from `t_start` to at least `t_end` with step `dt`.
    pub fn spanning(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        let n = ((t_end - t_start) / dt).ceil() as usize + 1;
        Self::new(t_start, dt, n.max(2))
    }

    /// Default analysis grid: 50 points, 80 ps.
    pub fn analysis_default() -> Self {
        Self { t_start: 0.0, dt: 80.0, n_points: 50 }
    }

    pub fn t(&self, k: usize) -> f64 {
        self.t_start + self.dt * k as f64
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.n_points - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.t(k)).collect()
    }

    /// Bin index of time `t`, bins centred on grid points.
    pub fn bin_of(&self, t: f64) -> Option<usize> {
        let k = ((t - self.t_start) / self.dt + 0.5).floor();
        if k >= 0.0 && (k as usize) < self.n_points {
            Some(k as usize)
        } else {
            None
        }
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_points == other.n_points
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
            && (self.t_start - other.t_start).abs() <= 1e-9 * self.dt.max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub eta_s: Vec<f64>,
    pub eta_i: Vec<f64>,
}

impl DetectionModel {
    pub fn new(eta_s: Vec<f64>, eta_i: Vec<f64>) -> Result<Self> {
        let m = Self { eta_s, eta_i };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_s", &self.eta_s), ("eta_i", &self.eta_i)] {
            if v.is_empty() {
                return Err(Error::InvalidParameter(format!("{name} needs at least one port")));
            }
            if v.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(Error::InvalidParameter(format!("{name} entries must lie in [0,1]")));
            }
            if v.iter().sum::<f64>() > 1.0 + 1e-12 {
                return Err(Error::InvalidParameter(format!("{name} sums above 1")));
            }
        }
        Ok(())
    }

    /// Balanced split of a total efficiency per species over `ports` detectors.
    pub fn balanced(eta_s_total: f64, eta_i_total: f64, ports: usize) -> Result<Self> {
        let p = ports.max(1) as f64;
        Self::new(vec![eta_s_total / p; ports.max(1)], vec![eta_i_total / p; ports.max(1)])
    }

    pub fn total_s(&self) -> f64 {
        self.eta_s.iter().sum()
    }

    pub fn total_i(&self) -> f64 {
        self.eta_i.iter().sum()
    }
}

/// Everything a simulation run needs, as read from a flat key-value config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: ResonatorParams,
    pub pulse: PumpPulse,
    pub grid: TimeGrid,
    pub detection: DetectionModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ResonatorParams::reference_device(),
            pulse: PumpPulse::from_energy_pj(1000.0, 800.0),
            grid: TimeGrid::analysis_default(),
            detection: DetectionModel { eta_s: vec![0.05, 0.05], eta_i: vec![0.05, 0.05] },
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "gamma_e", "gamma_i", "lambda_nl", "delta_p", "d_int", "fsr_m", "power", "rep_rate", "duration", "wavelength_pump", "grid.dt",
    "grid.n", "grid.t0", "eta_s", "eta_i",
];

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Rates in 1/s,
    /// detuning in rad/s, power in W, durations and grid in ps, wavelength
    /// in nm, efficiencies as comma-separated lists.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut gamma_e = None;
        let mut gamma_i = None;
        let mut wavelength = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let num = || -> Result<f64> {
                value.parse::<f64>().map_err(|_| Error::Config(format!("line {}: bad number for {key}: {value}", lineno + 1)))
            };
            let list = || -> Result<Vec<f64>> {
                value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("line {}: bad list for {key}", lineno + 1))))
                    .collect()
            };
            match key {
                "gamma_e" => gamma_e = Some(num()? / PS_PER_S),
                "gamma_i" => gamma_i = Some(num()? / PS_PER_S),
                "lambda_nl" => cfg.params.lambda_nl = lambda_from_per_second(num()?),
                "delta_p" => cfg.params.delta_p = num()? / PS_PER_S,
                "d_int" => cfg.params.d_int = num()?,
                "fsr_m" => cfg.params.fsr_count_m = num()? as i32,
                "power" => cfg.pulse.avg_power = num()?,
                "rep_rate" => cfg.pulse.rep_rate = num()?,
                "duration" => cfg.pulse.duration_t = num()?,
                "wavelength_pump" => wavelength = Some(num()?),
                "grid.dt" => cfg.grid.dt = num()?,
                "grid.n" => cfg.grid.n_points = num()? as usize,
                "grid.t0" => cfg.grid.t_start = num()?,
                "eta_s" => cfg.detection.eta_s = list()?,
                "eta_i" => cfg.detection.eta_i = list()?,
                other => return Err(Error::Config(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        if let Some(g) = gamma_e {
            cfg.params.gamma_e = g;
        }
        if let Some(g) = gamma_i {
            cfg.params.gamma_i = g;
        }
        if let Some(w) = wavelength {
            cfg.pulse.carrier_omega_p = omega_from_wavelength_nm(w);
        }
        cfg.params.validate().map_err(|e| Error::Config(e.to_string()))?;
        PumpPulse::new(cfg.pulse.avg_power, cfg.pulse.rep_rate, cfg.pulse.duration_t, cfg.pulse.carrier_omega_p)
            .map_err(|e| Error::Config(e.to_string()))?;
        TimeGrid::new(cfg.grid.t_start, cfg.grid.dt, cfg.grid.n_points).map_err(|e| Error::Config(e.to_string()))?;
        cfg.detection.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

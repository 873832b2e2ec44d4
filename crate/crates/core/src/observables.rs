//! Measured quantities at the output waveguide.

use crate::error::{Error, Result};
use crate::model::{PumpPulse, ResonatorParams, TimeGrid};
use crate::moments::{evolve_moments, MomentState, TwoTimeMoment};
use crate::pump::{pump_grid, solve_pump, PumpTrajectory};
use crate::schmidt::SchmidtDecomposition;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct ObservableSet {
    pub flux: Vec<f64>,
    pub n_per_pulse: f64,
    pub g2: f64,
    pub taus: Vec<f64>,
    pub g1_tilde: Vec<f64>,
    pub omegas: Vec<f64>,
    pub spectrum: Vec<f64>,
}

/// Photon flux in the bus waveguide, γ_e n_s(t), photons/ps.
pub fn output_flux(state: &MomentState, params: &ResonatorParams) -> Vec<f64> {
    state.n_s.iter().map(|n| params.gamma_e * n).collect()
}

/// Trapezoidal integral of a sampled curve.
pub fn integrate_curve(values: &[f64], grid: &TimeGrid) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    grid.dt * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

/// Pump and moment solution at one operating point.
#[derive(Clone, Debug)]
pub struct PointSim {
    pub traj: PumpTrajectory,
    pub state: MomentState,
    pub flux: Vec<f64>,
    pub n_per_pulse: f64,
}

pub const FINE_DT: f64 = 5.0;
pub const RINGDOWN_LIFETIMES: f64 = 12.0;

pub fn simulate_point(params: &ResonatorParams, pulse: &PumpPulse) -> Result<PointSim> {
    let grid = pump_grid(params, pulse, FINE_DT, RINGDOWN_LIFETIMES);
    simulate_point_on(params, pulse, &grid)
}

pub fn simulate_point_on(params: &ResonatorParams, pulse: &PumpPulse, grid: &TimeGrid) -> Result<PointSim> {
    let traj = solve_pump(params, pulse, grid)?;
    let state = evolve_moments(&traj, params)?;
    let flux = output_flux(&state, params);
    let n_per_pulse = integrate_curve(&flux, grid);
    Ok(PointSim { traj, state, flux, n_per_pulse })
}

pub fn photons_per_pulse(params: &ResonatorParams, pulse: &PumpPulse) -> Result<f64> {
    Ok(simulate_point(params, pulse)?.n_per_pulse)
}

/// Δ_p maximising ⟨n_s⟩ inside `range` (rad/ps): grid scan then golden
/// section to `γ_tot/100`.
pub fn optimal_detuning(params: &ResonatorParams, pulse: &PumpPulse, range: (f64, f64)) -> Result<f64> {
    optimal_detuning_with(params, pulse, range, 21)
}

pub fn optimal_detuning_with(params: &ResonatorParams, pulse: &PumpPulse, range: (f64, f64), scan: usize) -> Result<f64> {
    let (lo, hi) = range;
    if !(hi > lo) || scan < 3 {
        return Err(Error::InvalidParameter("empty detuning search range".into()));
    }
    let f = |dp: f64| -> Result<f64> { photons_per_pulse(&params.with_detuning(dp), pulse) };
    let step = (hi - lo) / (scan - 1) as f64;
    let mut vals = Vec::with_capacity(scan);
    for k in 0..scan {
        vals.push(f(lo + step * k as f64)?);
    }
    let kbest = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|x| x.0).unwrap_or(0);
    if kbest == 0 || kbest == scan - 1 {
        return Err(Error::Bracket { lo, hi });
    }
    let tol = params.gamma_tot() / 100.0;
    let (mut a, mut b) = (lo + step * (kbest - 1) as f64, lo + step * (kbest + 1) as f64);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > tol {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// g² = 1 + Σ sinh⁴ξ / (Σ sinh²ξ)².
pub fn g2_from_schmidt(decomp: &SchmidtDecomposition) -> Result<f64> {
    g2_from_xi(&decomp.xi)
}

pub fn g2_from_xi(xi: &[f64]) -> Result<f64> {
    let s2: f64 = xi.iter().map(|x| x.sinh().powi(2)).sum();
    if s2 == 0.0 {
        return Err(Error::UndefinedG2);
    }
    let s4: f64 = xi.iter().map(|x| x.sinh().powi(4)).sum();
    Ok(1.0 + s4 / (s2 * s2))
}

/// Output first-order correlation ⟨a_out†(t) a_out(t')⟩ = p_e C(t,t').
fn output_c(two_time: &TwoTimeMoment) -> DMatrix<C64> {
    two_time.c_matrix.map(|c| c * two_time.p_e)
}

/// G̃(τ) = Σ_t |⟨a_out†(t) a_out(t+τ)⟩| Δt on the grid lags, τ from −(N−1)Δt to (N−1)Δt.
pub fn g1_tilde(two_time: &TwoTimeMoment) -> (Vec<f64>, Vec<f64>) {
    let c = output_c(two_time);
    let n = c.nrows() as isize;
    let dt = two_time.grid.dt;
    let mut taus = Vec::with_capacity((2 * n - 1) as usize);
    let mut vals = Vec::with_capacity((2 * n - 1) as usize);
    for lag in -(n - 1)..n {
        let mut acc = 0.0;
        for t in 0..n {
            let u = t + lag;
            if (0..n).contains(&u) {
                acc += c[(t as usize, u as usize)].norm();
            }
        }
        taus.push(lag as f64 * dt);
        vals.push(acc * dt);
    }
    (taus, vals)
}

/// Unnormalised spectrum (1/2π) Σ_{t,t'} ⟨a_out†(t) a_out(t')⟩ e^{iω(t'−t)} Δt²,
/// ω relative to the cold signal resonance, rad/ps.
pub fn spectrum_raw(two_time: &TwoTimeMoment, omegas: &[f64]) -> Vec<f64> {
    let c = output_c(two_time);
    let n = c.nrows();
    let ts = two_time.grid.times();
    let dt = two_time.grid.dt;
    omegas
        .iter()
        .map(|w| {
            let ph: Vec<C64> = ts.iter().map(|t| C64::from_polar(1.0, w * t)).collect();
            let mut acc = C64::new(0.0, 0.0);
            for q in 0..n {
                let mut row = C64::new(0.0, 0.0);
                for p in 0..n {
                    row += c[(q, p)] * ph[p];
                }
                acc += row * ph[q].conj();
            }
            acc.re * dt * dt / (2.0 * std::f64::consts::PI)
        })
        .collect()
}

pub fn single_photon_spectrum(two_time: &TwoTimeMoment, omegas: &[f64]) -> Vec<f64> {
    let raw = spectrum_raw(two_time, omegas);
    let peak = raw.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        raw.iter().map(|v| v.max(0.0) / peak).collect()
    } else {
        raw
    }
}

pub const PLATEAU_SETTLE_LIFETIMES: f64 = 3.0;

/// Grid over the flat top of the drive once the cavity has settled, where the
/// state approximates the steady state at the plateau pump level.
pub fn plateau_grid(params: &ResonatorParams, pulse: &PumpPulse, dt: f64) -> Result<TimeGrid> {
    let start = PLATEAU_SETTLE_LIFETIMES / params.gamma_tot();
    let n = ((pulse.duration_t - start) / dt).floor() as i64 + 1;
    if n < 16 {
        return Err(Error::InvalidParameter(format!("pulse of {} ps has no settled plateau at Δt = {dt} ps", pulse.duration_t)));
    }
    TimeGrid::new(start, dt, n as usize)
}

/// Angular frequencies spanning the grid's Nyquist band with `n` points.
pub fn nyquist_omegas(grid: &TimeGrid, n: usize) -> Vec<f64> {
    let wmax = std::f64::consts::PI / grid.dt;
    (0..n).map(|k| -wmax + 2.0 * wmax * k as f64 / (n - 1) as f64).collect()
}

/// ⟨a†(t₁)a†(t₂)a(t₂)a(t₁)⟩ of a zero-mean Gaussian field given its normal
/// correlator `c` and anomalous correlator `a` (⟨a(t₁)a(t₂)⟩).
pub fn wick_fourth_moment(c: &DMatrix<C64>, a: Option<&DMatrix<C64>>) -> DMatrix<f64> {
    let n = c.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let direct = c[(i, i)].re * c[(j, j)].re;
        let exchange = (c[(i, j)] * c[(j, i)]).re;
        let anomalous = a.map_or(0.0, |a| a[(i, j)].norm_sqr());
        direct + exchange + anomalous
    })
}

/// Estimator ⟨a†a†aa⟩(t₁,t₂) − n(t₁)n(t₂), equal to |C(t₁,t₂)|² for thermal marginals.
pub fn first_order_from_fourth(fourth: &DMatrix<f64>, c: &DMatrix<C64>) -> DMatrix<f64> {
    DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| fourth[(i, j)] - c[(i, i)].re * c[(j, j)].re)
}

/// Indices of strict local maxima whose value exceeds `min_frac` of the global maximum.
pub fn local_maxima(values: &[f64], min_frac: f64) -> Vec<usize> {
    let peak = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    let n = values.len();
    let mut k = 1;
    while k + 1 < n {
        if values[k] > values[k - 1] {
            // walk a plateau
            let mut j = k;
            while j + 1 < n && values[j + 1] == values[k] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[k] && values[k] >= min_frac * peak {
                out.push(k);
            }
            k = j + 1;
        } else {
            k += 1;
        }
    }
    out
}

/// Full width at half maximum of a sampled curve with spacing `dx`, by linear interpolation.
pub fn fwhm(values: &[f64], dx: f64) -> f64 {
    let (kmax, peak) = values.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (k, v)| if *v > acc.1 { (k, *v) } else { acc });
    let half = 0.5 * peak;
    let mut left = 0.0;
    for k in (0..kmax).rev() {
        if values[k] <= half {
            left = k as f64 + (half - values[k]) / (values[k + 1] - values[k]);
            break;
        }
    }
    let mut right = (values.len() - 1) as f64;
    for k in kmax + 1..values.len() {
        if values[k] <= half {
            right = (k - 1) as f64 + (values[k - 1] - half) / (values[k - 1] - values[k]);
            break;
        }
    }
    (right - left) * dx
}

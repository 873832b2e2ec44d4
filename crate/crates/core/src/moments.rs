//! Gaussian second moments of the signal/idler cavity modes and two-time
//! correlators by quantum regression.
//!
//! Heisenberg equations in the frame of the pump trajectory:
//!   d c_s/dt  = (iΔ_X − γ/2) c_s  + i G c_i†
//!   d c_i†/dt = (−iΔ_X − γ/2) c_i† − i G* c_s
//! with G(t) = Λ c_p(t)² e^{iΔω_D t} and Δ_X = 2Λ|c_p|².

use crate::error::{Error, Result};
use crate::model::{ResonatorParams, TimeGrid};
use crate::ode::{integrate, OdeOptions};
use crate::pump::PumpTrajectory;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use std::io::Write;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const BLOWUP: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct MomentState {
    pub grid: TimeGrid,
    pub n_s: Vec<f64>,
    pub n_i: Vec<f64>,
    pub m_si: Vec<C64>,
    /// False when the cavity signal occupation exceeds 1% of the pump photon number.
    pub undepleted_ok: bool,
}

impl MomentState {
    pub fn max_n(&self) -> f64 {
        self.n_s.iter().cloned().fold(0.0, f64::max)
    }
}

/// Pump-derived coupling coefficients at time t.
#[derive(Clone, Copy, Debug)]
pub struct Coupling {
    pub g: C64,
    pub delta_x: f64,
}

pub fn coupling(traj: &PumpTrajectory, params: &ResonatorParams, t: f64) -> Coupling {
    let c = traj.cp_at(t);
    let lam = params.lambda_nl;
    Coupling { g: lam * c * c * C64::from_polar(1.0, params.delta_omega_d() * t), delta_x: 2.0 * lam * c.norm_sqr() }
}

fn split_points(traj: &PumpTrajectory, a: f64, b: f64) -> Vec<f64> {
    let mut pts = vec![a];
    for bp in traj.breakpoints() {
        if bp > a && bp < b {
            pts.push(bp);
        }
    }
    pts.push(b);
    pts
}

fn moment_rhs(traj: &PumpTrajectory, params: &ResonatorParams, t: f64, y: &[f64], d: &mut [f64]) {
    let gamma = params.gamma_tot();
    let k = coupling(traj, params, t);
    let n = y[0];
    let m = C64::new(y[1], y[2]);
    d[0] = -gamma * n + 2.0 * (k.g.conj() * m).im;
    let dm = -(gamma - 2.0 * I * k.delta_x) * m + I * k.g * (1.0 + 2.0 * n);
    d[1] = dm.re;
    d[2] = dm.im;
}

/// Integrates along `pts` segments, sampling at the sorted `ts`.
fn run_segments<F>(mut f: F, pts: &[f64], y0: &[f64], ts: &[f64], opts: &OdeOptions, out: &mut Vec<Vec<f64>>) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut y = y0.to_vec();
    let mut k = 0usize;
    while k < ts.len() && ts[k] <= pts[0] {
        out.push(y.clone());
        k += 1;
    }
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        y = integrate(&mut f, a, b, &y, opts, |s| {
            while k < ts.len() && ts[k] <= s.t1() {
                out.push(s.eval(ts[k]));
                k += 1;
            }
        })?;
    }
    while k < ts.len() {
        out.push(y.clone());
        k += 1;
    }
    Ok(y)
}

fn moment_opts(params: &ResonatorParams) -> OdeOptions {
    OdeOptions { rtol: 1e-10, atol: 1e-16, h_max: 0.05 / params.gamma_tot(), ..Default::default() }
}

pub fn evolve_moments(traj: &PumpTrajectory, params: &ResonatorParams) -> Result<MomentState> {
    evolve_moments_on(traj, params, &traj.grid)
}

/// Moment evolution sampled on an arbitrary grid.
pub fn evolve_moments_on(traj: &PumpTrajectory, params: &ResonatorParams, grid: &TimeGrid) -> Result<MomentState> {
    let ts = grid.times();
    let t_end = grid.t_end();
    let mut samples = Vec::with_capacity(ts.len());
    if t_end > 0.0 {
        let pts = split_points(traj, 0.0, t_end);
        let opts = moment_opts(params);
        run_segments(|t, y, d| moment_rhs(traj, params, t, y, d), &pts, &[0.0; 3], &ts, &opts, &mut samples).map_err(|e| match e {
            Error::Integration { t, .. } => Error::ThresholdExceeded { t },
            other => other,
        })?;
    } else {
        samples = vec![vec![0.0; 3]; ts.len()];
    }
    let mut n_s = Vec::with_capacity(ts.len());
    let mut m_si = Vec::with_capacity(ts.len());
    for (t, y) in ts.iter().zip(&samples) {
        if !y.iter().all(|v| v.is_finite()) || y[0] > BLOWUP {
            return Err(Error::ThresholdExceeded { t: *t });
        }
        n_s.push(y[0]);
        m_si.push(C64::new(y[1], y[2]));
    }
    let max_n = n_s.iter().cloned().fold(0.0, f64::max);
    let undepleted_ok = max_n <= 0.01 * traj.max_abs2().max(f64::MIN_POSITIVE) || max_n == 0.0;
    Ok(MomentState { grid: *grid, n_i: n_s.clone(), n_s, m_si, undepleted_ok })
}

#[derive(Clone, Debug)]
pub struct TwoTimeMoment {
    pub grid: TimeGrid,
    /// M(t_q, t_p) = γ_tot ⟨T c_s(t_q) c_i(t_p)⟩, rows indexed by signal time.
    pub m_matrix: DMatrix<C64>,
    /// C(t_q, t_p) = γ_tot ⟨c_s†(t_q) c_s(t_p)⟩.
    pub c_matrix: DMatrix<C64>,
    pub gamma_tot: f64,
    pub p_e: f64,
}

impl TwoTimeMoment {
    pub fn write_csv<W: Write>(&self, mut w: W, which: &str) -> Result<()> {
        let m = match which {
            "m" => &self.m_matrix,
            "c" => &self.c_matrix,
            _ => return Err(Error::InvalidParameter(format!("unknown matrix {which}"))),
        };
        writeln!(w, "# t_start={} dt={} n={} matrix={which} layout=row-major re,im", self.grid.t_start, self.grid.dt, self.grid.n_points)?;
        for r in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.10e},{:.10e}", m[(r, c)].re, m[(r, c)].im)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Regression generator applied to pairs (a, b) = (⟨X c(t)⟩, ⟨X c'†(t)⟩).
fn regression_rhs(traj: &PumpTrajectory, params: &ResonatorParams, t: f64, y: &[f64], d: &mut [f64]) {
    let gh = 0.5 * params.gamma_tot();
    let k = coupling(traj, params, t);
    for pair in 0..y.len() / 4 {
        let o = 4 * pair;
        let a = C64::new(y[o], y[o + 1]);
        let b = C64::new(y[o + 2], y[o + 3]);
        let da = (I * k.delta_x - gh) * a + I * k.g * b;
        let db = (-I * k.delta_x - gh) * b - I * k.g.conj() * a;
        d[o] = da.re;
        d[o + 1] = da.im;
        d[o + 2] = db.re;
        d[o + 3] = db.im;
    }
}

pub fn two_time_correlators(traj: &PumpTrajectory, params: &ResonatorParams, grid: &TimeGrid) -> Result<TwoTimeMoment> {
    let state = evolve_moments_on(traj, params, grid)?;
    two_time_from_state(traj, params, &state, grid)
}

/// Regression seeded from an existing equal-time solution on the same grid.
pub fn two_time_from_state(traj: &PumpTrajectory, params: &ResonatorParams, state: &MomentState, grid: &TimeGrid) -> Result<TwoTimeMoment> {
    if !state.grid.same_as(grid) {
        return Err(Error::GridMismatch(format!("moment grid {:?} vs analysis grid {:?}", state.grid, grid)));
    }
    let n = grid.n_points;
    let ts = grid.times();
    let gamma = params.gamma_tot();
    let opts = OdeOptions { atol: 1e-16, ..moment_opts(params) };

    // each row p: three pairs regressed forward from t_p
    //   signal later:  (⟨c_s(t) c_i(t_p)⟩, ⟨c_i†(t) c_i(t_p)⟩)
    //   idler later:   (⟨c_i(t) c_s(t_p)⟩, ⟨c_s†(t) c_s(t_p)⟩)
    //   first order:   (⟨c_s†(t_p) c_s(t)⟩, ⟨c_s†(t_p) c_i†(t)⟩)
    let rows: Vec<Result<Vec<[C64; 3]>>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let m = state.m_si[p];
            let seed = [m.re, m.im, state.n_i[p], 0.0, m.re, m.im, state.n_s[p], 0.0, state.n_s[p], 0.0, m.re, -m.im];
            let later = &ts[p..];
            let mut samples = Vec::with_capacity(later.len());
            if p + 1 < n {
                let pts = split_points(traj, ts[p], ts[n - 1]);
                run_segments(|t, y, d| regression_rhs(traj, params, t, y, d), &pts, &seed, later, &opts, &mut samples)?;
            } else {
                samples.push(seed.to_vec());
            }
            Ok(samples
                .iter()
                .map(|y| [C64::new(y[0], y[1]), C64::new(y[4], y[5]), C64::new(y[8], y[9])])
                .collect())
        })
        .collect();

    let mut mm = DMatrix::<C64>::zeros(n, n);
    let mut cm = DMatrix::<C64>::zeros(n, n);
    for (p, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (j, v) in row.iter().enumerate() {
            let q = p + j;
            mm[(q, p)] = gamma * v[0];
            if q != p {
                mm[(p, q)] = gamma * v[1];
            }
            cm[(p, q)] = gamma * v[2];
            cm[(q, p)] = gamma * v[2].conj();
        }
        cm[(p, p)] = C64::new(gamma * state.n_s[p], 0.0);
    }
    Ok(TwoTimeMoment { grid: *grid, m_matrix: mm, c_matrix: cm, gamma_tot: gamma, p_e: params.p_e() })
}

/// Analysis grid of `n` points and step `dt` placed to capture the largest
/// share of ∫n_s dt; returns the grid and the captured fraction.
pub fn analysis_grid(state: &MomentState, n: usize, dt: f64) -> Result<(TimeGrid, f64)> {
    let g = &state.grid;
    let total: f64 = state.n_s.iter().sum::<f64>() * g.dt;
    let width = dt * (n as f64 - 1.0) + dt;
    let captured = |t0: f64| -> f64 {
        let (a, b) = (t0 - 0.5 * dt, t0 - 0.5 * dt + width);
        state.n_s.iter().enumerate().filter(|(k, _)| (a..b).contains(&g.t(*k))).map(|(_, v)| v).sum::<f64>() * g.dt
    };
    let mut best = (0.0, f64::NEG_INFINITY);
    let mut t0 = 0.0;
    while t0 <= g.t_end() {
        let c = captured(t0);
        if c > best.1 + 1e-12 * total.abs() {
            best = (t0, c);
        }
        t0 += 0.25 * dt;
    }
    let frac = if total > 0.0 { best.1 / total } else { 1.0 };
    Ok((TimeGrid::new(best.0, dt, n)?, frac))
}

//! Classical intracavity pump amplitude with self-phase modulation.
//!
//! Rotating frame: the drive enters as `-i sqrt(2 γ_e) β(t) e^{i Δ_p t}`, so a
//! positive `Δ_p` makes `c_p` rotate as `e^{+i Δ_p t}` in steady state.

use crate::error::{Error, Result};
use crate::model::{PumpPulse, ResonatorParams, TimeGrid};
use crate::ode::{integrate, DenseSolution, OdeOptions};
use num_complex::Complex64 as C64;
use std::io::Write;

#[derive(Clone, Debug)]
pub struct PumpTrajectory {
    pub grid: TimeGrid,
    pub cp: Vec<C64>,
    pub delta_spm: Vec<f64>,
    pub delta_xpm: Vec<f64>,
    pub params: ResonatorParams,
    pub pulse: PumpPulse,
    dense: DenseSolution,
}

impl PumpTrajectory {
    /// Pump amplitude at any time, zero before the pulse, free decay after
    /// the solved span.
    pub fn cp_at(&self, t: f64) -> C64 {
        if t <= 0.0 || self.dense.steps.is_empty() {
            return C64::new(0.0, 0.0);
        }
        let t_end = self.dense.t_end();
        let mut y = [0.0; 2];
        if t <= t_end {
            self.dense.eval_into(t, &mut y);
            C64::new(y[0], y[1])
        } else {
            self.dense.eval_into(t_end, &mut y);
            C64::new(y[0], y[1]) * (-0.5 * self.params.gamma_tot() * (t - t_end)).exp()
        }
    }

    /// Drive switching times, where downstream integrations are split.
    pub fn breakpoints(&self) -> [f64; 2] {
        [0.0, self.pulse.duration_t]
    }

    pub fn max_abs2(&self) -> f64 {
        self.cp.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_ps,re_cp,im_cp,abs2_cp,delta_spm,delta_xpm,delta_omega")?;
        let dw = energy_mismatch(self, &self.params);
        for k in 0..self.grid.n_points {
            let c = self.cp[k];
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                self.grid.t(k),
                c.re,
                c.im,
                c.norm_sqr(),
                self.delta_spm[k],
                self.delta_xpm[k],
                dw[k]
            )?;
        }
        Ok(())
    }
}

/// A grid from 0 through the drive and `lifetimes` cavity lifetimes of ring-down.
pub fn pump_grid(params: &ResonatorParams, pulse: &PumpPulse, dt: f64, lifetimes: f64) -> TimeGrid {
    let t_end = pulse.duration_t + lifetimes / params.gamma_tot();
    TimeGrid::spanning(0.0, t_end, dt).expect("positive dt")
}

pub fn solve_pump(params: &ResonatorParams, pulse: &PumpPulse, grid: &TimeGrid) -> Result<PumpTrajectory> {
    solve_pump_with(params, pulse, grid, 1e-9)
}

pub fn solve_pump_with(params: &ResonatorParams, pulse: &PumpPulse, grid: &TimeGrid, rtol: f64) -> Result<PumpTrajectory> {
    params.validate()?;
    let gamma = params.gamma_tot();
    let needed = pulse.duration_t + 5.0 / gamma;
    if grid.t_start > 0.0 || grid.t_end() < needed {
        return Err(Error::Coverage(format!(
            "pump grid [{}, {}] ps must include [0, {needed:.1}] ps",
            grid.t_start,
            grid.t_end()
        )));
    }
    let lam = params.lambda_nl;
    let dp = params.delta_p;
    let kd = (2.0 * params.gamma_e).sqrt();
    let beta = pulse.drive_amplitude();
    let scale = (kd * beta / (0.5 * gamma)).max(1e-300);
    let opts = OdeOptions { rtol, atol: rtol * 1e-3 * scale, h_max: 0.05 / gamma, ..Default::default() };

    let rhs = |t: f64, y: &[f64], d: &mut [f64], on: bool| {
        let c = C64::new(y[0], y[1]);
        let mut dc = c * C64::new(-0.5 * gamma, lam * c.norm_sqr());
        if on {
            dc -= C64::new(0.0, kd * beta) * C64::from_polar(1.0, dp * t);
        }
        d[0] = dc.re;
        d[1] = dc.im;
    };
    let mut dense = DenseSolution::default();
    let y1 = integrate(|t, y, d| rhs(t, y, d, true), 0.0, pulse.duration_t, &[0.0, 0.0], &opts, |s| dense.steps.push(s.clone()))?;
    integrate(|t, y, d| rhs(t, y, d, false), pulse.duration_t, grid.t_end(), &y1, &opts, |s| dense.steps.push(s.clone()))?;

    let mut traj = PumpTrajectory {
        grid: *grid,
        cp: Vec::new(),
        delta_spm: Vec::new(),
        delta_xpm: Vec::new(),
        params: *params,
        pulse: *pulse,
        dense,
    };
    let cp: Vec<C64> = grid.times().into_iter().map(|t| traj.cp_at(t)).collect();
    traj.delta_spm = cp.iter().map(|c| lam * c.norm_sqr()).collect();
    traj.delta_xpm = traj.delta_spm.iter().map(|d| 2.0 * d).collect();
    traj.cp = cp;
    Ok(traj)
}

/// Δω(t) = 2(ω_p(t) − Δ_p) − ω_s(t) − ω_i(t) with the cold-resonance
/// offsets removed, i.e. 2Δ_XPM − 2Δ_SPM − 2Δ_p.
pub fn energy_mismatch(traj: &PumpTrajectory, params: &ResonatorParams) -> Vec<f64> {
    traj.delta_spm
        .iter()
        .zip(&traj.delta_xpm)
        .map(|(s, x)| 2.0 * x - 2.0 * s - 2.0 * params.delta_p)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_params(dp: f64) -> ResonatorParams {
        ResonatorParams { lambda_nl: 0.0, delta_p: dp, ..ResonatorParams::reference_device() }
    }

    fn analytic(params: &ResonatorParams, pulse: &PumpPulse, t: f64) -> C64 {
        // c(t) = A (e^{iΔt} - e^{-γt/2}) / (iΔ + γ/2) during the drive
        let g2 = 0.5 * params.gamma_tot();
        let amp = C64::new(0.0, -(2.0 * params.gamma_e).sqrt() * pulse.drive_amplitude());
        let z = C64::new(g2, params.delta_p);
        let during = |s: f64| amp * (C64::from_polar(1.0, params.delta_p * s) - (-g2 * s).exp()) / z;
        if t <= 0.0 {
            C64::new(0.0, 0.0)
        } else if t <= pulse.duration_t {
            during(t)
        } else {
            during(pulse.duration_t) * (-g2 * (t - pulse.duration_t)).exp()
        }
    }

    #[test]
    fn linear_cavity_matches_closed_form() {
        for dp in [0.0, 1e-3, -2.5e-3] {
            let params = linear_params(dp);
            let pulse = PumpPulse::from_energy_pj(500.0, 800.0);
            let grid = pump_grid(&params, &pulse, 10.0, 8.0);
            let traj = solve_pump(&params, &pulse, &grid).unwrap();
            for (k, c) in traj.cp.iter().enumerate() {
                let a = analytic(&params, &pulse, grid.t(k));
                if a.norm() > 1e-6 * traj.max_abs2().sqrt() {
                    assert!((c.norm_sqr() - a.norm_sqr()).abs() / a.norm_sqr() < 1e-6, "t={}", grid.t(k));
                }
            }
        }
    }

    #[test]
    fn buildup_then_exponential_decay() {
        let params = ResonatorParams::reference_device();
        let pulse = PumpPulse::from_energy_pj(1000.0, 800.0);
        let grid = pump_grid(&params, &pulse, 5.0, 10.0);
        let traj = solve_pump(&params, &pulse, &grid).unwrap();
        let abs2: Vec<f64> = traj.cp.iter().map(|c| c.norm_sqr()).collect();
        let kmax = abs2.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        // builds up during the drive, SPM pulls the peak slightly ahead of its end
        assert!(grid.t(kmax) > 400.0 && grid.t(kmax) <= 800.0);
        let kend = grid.bin_of(800.0).unwrap();
        assert!(abs2[kend..].windows(2).all(|w| w[1] < w[0]));
        // late decay rate approaches γ_tot once SPM is negligible
        let k1 = grid.bin_of(800.0 + 6.0 * 660.0).unwrap();
        let k2 = grid.bin_of(800.0 + 8.0 * 660.0).unwrap();
        let rate = (abs2[k1] / abs2[k2]).ln() / (grid.t(k2) - grid.t(k1));
        assert!((rate * 660.0 - 1.0).abs() < 1e-3);
        assert_eq!(traj.cp_at(-5.0), C64::new(0.0, 0.0));
        for (s, x) in traj.delta_spm.iter().zip(&traj.delta_xpm) {
            assert_eq!(2.0 * s, *x);
        }
    }

    #[test]
    fn short_grid_is_rejected() {
        let params = ResonatorParams::reference_device();
        let pulse = PumpPulse::from_energy_pj(100.0, 800.0);
        let grid = TimeGrid::new(0.0, 10.0, 200).unwrap();
        assert!(matches!(solve_pump(&params, &pulse, &grid), Err(Error::Coverage(_))));
    }

    #[test]
    fn mismatch_without_pump() {
        let params = linear_params(2e-4);
        let pulse = PumpPulse::from_energy_pj(0.0, 800.0);
        let grid = pump_grid(&params, &pulse, 20.0, 6.0);
        let traj = solve_pump(&params, &pulse, &grid).unwrap();
        assert!(energy_mismatch(&traj, &params).iter().all(|d| (d + 4e-4).abs() < 1e-15));
    }
}

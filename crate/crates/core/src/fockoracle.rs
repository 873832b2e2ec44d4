//! Brute-force Lindblad integration on a truncated two-mode Fock space.
//!
//! H/ħ = −(G a_s†a_i† + G* a_s a_i) − Δ_X (n_s + n_i), dissipators at γ_tot on
//! both modes. Emitted signal photons are counted by splitting ρ into
//! blocks ρ_k conditioned on k signal emissions so far.

use crate::error::{Error, Result};
use crate::model::{ResonatorParams, TimeGrid};
use crate::moments::coupling;
use crate::ode::{integrate, OdeOptions};
use crate::pump::PumpTrajectory;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const TRUNCATION_LIMIT: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct FockState {
    pub cutoff: usize,
    pub rho: DMatrix<C64>,
}

impl FockState {
    pub fn vacuum(cutoff: usize) -> Self {
        let d = (cutoff + 1) * (cutoff + 1);
        let mut rho = DMatrix::zeros(d, d);
        rho[(0, 0)] = C64::new(1.0, 0.0);
        Self { cutoff, rho }
    }

    /// Two-mode squeezed vacuum with squeezing ξ, truncated and renormalised.
    pub fn two_mode_squeezed(xi: f64, cutoff: usize) -> Self {
        let d = cutoff + 1;
        let dim = d * d;
        let mut psi = vec![C64::new(0.0, 0.0); dim];
        for n in 0..=cutoff {
            psi[n * d + n] = C64::new(xi.tanh().powi(n as i32) / xi.cosh(), 0.0);
        }
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        let rho = DMatrix::from_fn(dim, dim, |r, c| psi[r] * psi[c].conj() / norm);
        Self { cutoff, rho }
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    pub fn n_s(&self) -> f64 {
        let d = self.cutoff + 1;
        (0..d * d).map(|r| (r / d) as f64 * self.rho[(r, r)].re).sum()
    }

    pub fn n_i(&self) -> f64 {
        let d = self.cutoff + 1;
        (0..d * d).map(|r| (r % d) as f64 * self.rho[(r, r)].re).sum()
    }

    /// ⟨a_s a_i⟩.
    pub fn m_si(&self) -> C64 {
        let d = self.cutoff + 1;
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..d * d {
            let (ns, ni) = (r / d, r % d);
            if ns < self.cutoff && ni < self.cutoff {
                acc += ((ns + 1) as f64 * (ni + 1) as f64).sqrt() * self.rho[(r + d + 1, r)];
            }
        }
        acc
    }

    /// Normalised second-order correlation of the signal marginal.
    pub fn g2_signal(&self) -> f64 {
        let d = self.cutoff + 1;
        let f2: f64 = (0..d * d).map(|r| {
            let ns = (r / d) as f64;
            ns * (ns - 1.0) * self.rho[(r, r)].re
        })
        .sum();
        f2 / self.n_s().powi(2)
    }

    /// Population on the highest retained level of either mode.
    pub fn top_population(&self) -> f64 {
        top_population(self.cutoff, self.rho.as_slice(), self.cutoff + 1)
    }
}

fn top_population(cutoff: usize, rho: &[C64], d: usize) -> f64 {
    let dim = d * d;
    (0..dim).filter(|r| r / d == cutoff || r % d == cutoff).map(|r| rho[r * dim + r].re).sum()
}

/// Signal photon-number marginal from the joint Fock diagonal.
pub fn pair_number_distribution(state: &FockState) -> Vec<f64> {
    let d = state.cutoff + 1;
    let mut r = vec![0.0; d];
    for k in 0..d * d {
        r[k / d] += state.rho[(k, k)].re;
    }
    r
}

/// Liouvillian action on row-major `dim × dim` operators.
struct Liouvillian {
    cutoff: usize,
    d: usize,
    gamma: f64,
}

impl Liouvillian {
    fn new(cutoff: usize, gamma: f64) -> Self {
        Self { cutoff, d: cutoff + 1, gamma }
    }

    fn dim(&self) -> usize {
        self.d * self.d
    }

    /// out += L(x) with the signal jump term scaled by `jump_s` and the
    /// jump itself written to `jump_out` when provided.
    fn apply(&self, g: C64, dx: f64, x: &[C64], out: &mut [C64], jump_s: bool, mut jump_out: Option<&mut [C64]>) {
        let d = self.d;
        let dim = self.dim();
        let cut = self.cutoff;
        let gam = self.gamma;
        for r in 0..dim {
            let (nsr, nir) = (r / d, r % d);
            let row = r * dim;
            // entries of H in row r: diagonal, A† (from r-d-1), A (from r+d+1)
            let hdiag = -dx * (nsr + nir) as f64;
            let h_lo = if nsr > 0 && nir > 0 { -g * ((nsr * nir) as f64).sqrt() } else { C64::new(0.0, 0.0) };
            let h_hi = if nsr < cut && nir < cut { -g.conj() * (((nsr + 1) * (nir + 1)) as f64).sqrt() } else { C64::new(0.0, 0.0) };
            for c in 0..dim {
                let (nsc, nic) = (c / d, c % d);
                let xv = x[row + c];
                // H x
                let mut hx = hdiag * xv;
                if nsr > 0 && nir > 0 {
                    hx += h_lo * x[(r - d - 1) * dim + c];
                }
                if nsr < cut && nir < cut {
                    hx += h_hi * x[(r + d + 1) * dim + c];
                }
                // x H: H[k][c] for k = c, c+d+1 (A†), c-d-1 (A)
                let mut xh = xv * (-dx * (nsc + nic) as f64);
                if nsc < cut && nic < cut {
                    xh += x[row + c + d + 1] * (-g * (((nsc + 1) * (nic + 1)) as f64).sqrt());
                }
                if nsc > 0 && nic > 0 {
                    xh += x[row + c - d - 1] * (-g.conj() * ((nsc * nic) as f64).sqrt());
                }
                let mut v = -I * (hx - xh);
                v -= 0.5 * gam * ((nsr + nsc + nir + nic) as f64) * xv;
                if nir < cut && nic < cut {
                    v += gam * (((nir + 1) * (nic + 1)) as f64).sqrt() * x[(r + 1) * dim + c + 1];
                }
                if nsr < cut && nsc < cut {
                    let j = gam * (((nsr + 1) * (nsc + 1)) as f64).sqrt() * x[(r + d) * dim + c + d];
                    if jump_s {
                        v += j;
                    }
                    if let Some(jo) = jump_out.as_deref_mut() {
                        jo[row + c] += j;
                    }
                }
                out[row + c] += v;
            }
        }
    }
}

fn as_complex(y: &[f64]) -> &[C64] {
    // C64 is repr(C) with two f64 fields
    unsafe { std::slice::from_raw_parts(y.as_ptr() as *const C64, y.len() / 2) }
}

fn as_complex_mut(y: &mut [f64]) -> &mut [C64] {
    unsafe { std::slice::from_raw_parts_mut(y.as_mut_ptr() as *mut C64, y.len() / 2) }
}

/// Oracle evolution: observables on the pump grid plus the emitted signal
/// photon-number distribution.
#[derive(Clone, Debug)]
pub struct FockEvolution {
    pub grid: TimeGrid,
    pub cutoff: usize,
    pub n_s: Vec<f64>,
    pub n_i: Vec<f64>,
    pub m_si: Vec<C64>,
    pub g2_signal: Vec<f64>,
    pub trace: Vec<f64>,
    pub max_top_population: f64,
    /// Probability of k emitted signal photons, last entry collects ≥ its index.
    pub emitted: Vec<f64>,
    pub final_state: FockState,
}

pub fn evolve_fock(traj: &PumpTrajectory, params: &ResonatorParams, cutoff: usize) -> Result<FockEvolution> {
    evolve_fock_on(traj, params, cutoff, &traj.grid, 8)
}

pub fn evolve_fock_on(traj: &PumpTrajectory, params: &ResonatorParams, cutoff: usize, grid: &TimeGrid, count_max: usize) -> Result<FockEvolution> {
    if cutoff < 2 {
        return Err(Error::InvalidParameter("fock cutoff must be at least 2".into()));
    }
    let lv = Liouvillian::new(cutoff, params.gamma_tot());
    let dim = lv.dim();
    let blocks = count_max + 1;
    let block_len = dim * dim;
    let mut y0 = vec![0.0; 2 * block_len * blocks];
    y0[0] = 1.0;
    let ts = grid.times();
    let opts = OdeOptions { rtol: 1e-10, atol: 1e-15, h_max: 0.05 / params.gamma_tot(), ..Default::default() };

    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let k = coupling(traj, params, t);
        let x = as_complex(y);
        let out = as_complex_mut(dy);
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for b in 0..blocks {
            let (head, tail) = out.split_at_mut((b + 1) * block_len);
            let own = &mut head[b * block_len..];
            // the final bucket keeps its own jumps
            if b + 1 < blocks {
                lv.apply(k.g, k.delta_x, &x[b * block_len..(b + 1) * block_len], own, false, Some(&mut tail[..block_len]));
            } else {
                lv.apply(k.g, k.delta_x, &x[b * block_len..(b + 1) * block_len], own, true, None);
            }
        }
    };

    let mut pts = vec![ts[0].min(0.0)];
    for bp in traj.breakpoints() {
        if bp > pts[0] && bp < grid.t_end() {
            pts.push(bp);
        }
    }
    pts.push(grid.t_end());

    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(ts.len());
    let mut kk = 0;
    while kk < ts.len() && ts[kk] <= pts[0] {
        samples.push(y0.clone());
        kk += 1;
    }
    let mut y = y0;
    for w in pts.windows(2) {
        y = integrate(rhs, w[0], w[1], &y, &opts, |s| {
            while kk < ts.len() && ts[kk] <= s.t1() {
                samples.push(s.eval(ts[kk]));
                kk += 1;
            }
        })?;
    }
    while kk < ts.len() {
        samples.push(y.clone());
        kk += 1;
    }

    let collapse = |v: &[f64]| -> DMatrix<C64> {
        let x = as_complex(v);
        let mut acc = vec![C64::new(0.0, 0.0); block_len];
        for b in 0..blocks {
            for (a, s) in acc.iter_mut().zip(&x[b * block_len..(b + 1) * block_len]) {
                *a += *s;
            }
        }
        DMatrix::from_row_slice(dim, dim, &acc)
    };

    let mut ev = FockEvolution {
        grid: *grid,
        cutoff,
        n_s: Vec::new(),
        n_i: Vec::new(),
        m_si: Vec::new(),
        g2_signal: Vec::new(),
        trace: Vec::new(),
        max_top_population: 0.0,
        emitted: Vec::new(),
        final_state: FockState::vacuum(cutoff),
    };
    for s in &samples {
        let st = FockState { cutoff, rho: collapse(s) };
        ev.n_s.push(st.n_s());
        ev.n_i.push(st.n_i());
        ev.m_si.push(st.m_si());
        ev.g2_signal.push(st.g2_signal());
        ev.trace.push(st.trace().re);
        ev.max_top_population = ev.max_top_population.max(st.top_population());
    }
    let x = as_complex(&y);
    ev.emitted = (0..blocks)
        .map(|b| (0..dim).map(|r| x[b * block_len + r * dim + r].re).sum())
        .collect();
    ev.final_state = FockState { cutoff, rho: collapse(&y) };
    if ev.max_top_population > TRUNCATION_LIMIT {
        return Err(Error::Truncation { cutoff, population: ev.max_top_population });
    }
    Ok(ev)
}

/// Two-time correlators on the truncated Fock space by direct regression,
/// scaled by γ_tot like [`crate::moments::TwoTimeMoment`].
pub fn fock_two_time(traj: &PumpTrajectory, params: &ResonatorParams, cutoff: usize, grid: &TimeGrid) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let lv = Liouvillian::new(cutoff, params.gamma_tot());
    let dim = lv.dim();
    let block = dim * dim;
    let d = cutoff + 1;
    let n = grid.n_points;
    let ts = grid.times();
    let gamma = params.gamma_tot();
    let opts = OdeOptions { rtol: 1e-10, atol: 1e-16, h_max: 0.05 / gamma, ..Default::default() };

    let evo = |a: f64, b: f64, y: &[f64], nops: usize| -> Result<Vec<f64>> {
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            let k = coupling(traj, params, t);
            let x = as_complex(y);
            let out = as_complex_mut(dy);
            out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for o in 0..nops {
                lv.apply(k.g, k.delta_x, &x[o * block..(o + 1) * block], &mut out[o * block..(o + 1) * block], true, None);
            }
        };
        let mut pts = vec![a];
        for bp in traj.breakpoints() {
            if bp > a && bp < b {
                pts.push(bp);
            }
        }
        pts.push(b);
        let mut y = y.to_vec();
        for w in pts.windows(2) {
            y = integrate(rhs, w[0], w[1], &y, &opts, |_| {})?;
        }
        Ok(y)
    };

    // operator helpers on row-major dim × dim
    let left_a_i = |x: &[C64]| -> Vec<C64> {
        let mut o = vec![C64::new(0.0, 0.0); block];
        for r in 0..dim {
            if r % d < cutoff {
                let f = ((r % d + 1) as f64).sqrt();
                for c in 0..dim {
                    o[r * dim + c] = f * x[(r + 1) * dim + c];
                }
            }
        }
        o
    };
    let left_a_s = |x: &[C64]| -> Vec<C64> {
        let mut o = vec![C64::new(0.0, 0.0); block];
        for r in 0..dim {
            if r / d < cutoff {
                let f = ((r / d + 1) as f64).sqrt();
                for c in 0..dim {
                    o[r * dim + c] = f * x[(r + d) * dim + c];
                }
            }
        }
        o
    };
    let right_a_s_dag = |x: &[C64]| -> Vec<C64> {
        // (x a_s†)[r][c] = x[r][c+d] sqrt(ns_c + 1)
        let mut o = vec![C64::new(0.0, 0.0); block];
        for r in 0..dim {
            for c in 0..dim {
                if c / d < cutoff {
                    o[r * dim + c] = x[r * dim + c + d] * ((c / d + 1) as f64).sqrt();
                }
            }
        }
        o
    };
    let tr_a_s = |x: &[C64]| -> C64 {
        (0..dim).filter(|r| r / d < cutoff).map(|r| ((r / d + 1) as f64).sqrt() * x[(r + d) * dim + r]).sum()
    };
    let tr_a_i = |x: &[C64]| -> C64 {
        (0..dim).filter(|r| r % d < cutoff).map(|r| ((r % d + 1) as f64).sqrt() * x[(r + 1) * dim + r]).sum()
    };

    let mut mm = DMatrix::<C64>::zeros(n, n);
    let mut cm = DMatrix::<C64>::zeros(n, n);
    let mut rho = vec![0.0; 2 * block];
    rho[0] = 1.0;
    let mut t_cur = ts[0].min(0.0);
    for p in 0..n {
        rho = evo(t_cur, ts[p], &rho, 1)?;
        t_cur = ts[p];
        let r = as_complex(&rho);
        let mut pack: Vec<C64> = Vec::with_capacity(3 * block);
        pack.extend(left_a_i(r));
        pack.extend(left_a_s(r));
        pack.extend(right_a_s_dag(r));
        let diag_m: C64 = {
            let s = left_a_i(r);
            tr_a_s(&s)
        };
        mm[(p, p)] = gamma * diag_m;
        cm[(p, p)] = gamma * tr_a_s(&right_a_s_dag(r));
        let mut y: Vec<f64> = pack.iter().flat_map(|c| [c.re, c.im]).collect();
        let mut tq = ts[p];
        for q in p + 1..n {
            y = evo(tq, ts[q], &y, 3)?;
            tq = ts[q];
            let x = as_complex(&y);
            mm[(q, p)] = gamma * tr_a_s(&x[0..block]);
            mm[(p, q)] = gamma * tr_a_i(&x[block..2 * block]);
            let c = gamma * tr_a_s(&x[2 * block..3 * block]);
            cm[(p, q)] = c;
            cm[(q, p)] = c.conj();
        }
    }
    Ok((mm, cm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squeezed_vacuum_distribution() {
        let xi: f64 = 0.3;
        let st = FockState::two_mode_squeezed(xi, 40);
        let r = pair_number_distribution(&st);
        for (n, rn) in r.iter().enumerate().take(8) {
            let exact = xi.tanh().powi(2 * n as i32) / xi.cosh().powi(2);
            assert!((rn - exact).abs() < 1e-6);
        }
        assert!((st.g2_signal() - 2.0).abs() < 1e-9);
        assert!((st.m_si().re - xi.sinh() * xi.cosh()).abs() < 1e-9);
    }

    #[test]
    fn vacuum_distribution() {
        let r = pair_number_distribution(&FockState::vacuum(4));
        assert_eq!(r[0], 1.0);
        assert!(r[1..].iter().all(|v| *v == 0.0));
    }
}

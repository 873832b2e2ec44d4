//! Metropolis–Hastings over the 2n emission-time indices of an n-pair
//! event with target |Perm(J̃ submatrix)|².

use super::permanent::{permanent_row_major, PERMANENT_CAP};
use crate::error::{Error, Result};
use crate::model::TimeGrid;
use crate::schmidt::JointTemporalAmplitude;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Retained samples, summed over chains.
    pub samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub chains: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { samples: 80_000, burn_in: 1000, thinning: 200, seed: 0, chains: 4 }
    }
}

impl McmcConfig {
    fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.thinning == 0 || self.chains == 0 {
            return Err(Error::InvalidParameter("mcmc samples, thinning and chains must be positive".into()));
        }
        Ok(())
    }
}

pub const ACCEPTANCE_WINDOW: (f64, f64) = (0.05, 0.7);

/// Retained joint draws; sample `k` occupies `signal[k*n..(k+1)*n]` and
/// `idler[k*n..(k+1)*n]` as grid-bin indices.
#[derive(Clone, Debug)]
pub struct JointSamples {
    pub n_pairs: usize,
    pub grid: TimeGrid,
    pub signal: Vec<u16>,
    pub idler: Vec<u16>,
    pub acceptance_rate: f64,
}

impl JointSamples {
    pub fn len(&self) -> usize {
        self.signal.len() / self.n_pairs.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn sample(&self, k: usize) -> (&[u16], &[u16]) {
        let n = self.n_pairs;
        (&self.signal[k * n..(k + 1) * n], &self.idler[k * n..(k + 1) * n])
    }

    /// One (t_s, t_i) point per sample, the first signal and first idler photon.
    pub fn time_pairs(&self) -> Vec<[f64; 2]> {
        (0..self.len())
            .map(|k| {
                let (s, i) = self.sample(k);
                [self.grid.t(s[0] as usize), self.grid.t(i[0] as usize)]
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PairTimeDistribution {
    pub n_pairs: usize,
    #[serde(skip)]
    pub grid: TimeGrid,
    /// Probability mass per (signal bin, idler bin), summing to one.
    #[serde(skip)]
    pub p: DMatrix<f64>,
    #[serde(skip)]
    pub mc_stderr: DMatrix<f64>,
    pub acceptance_rate: Option<f64>,
    pub warning: Option<String>,
}

impl PairTimeDistribution {
    pub fn signal_marginal(&self) -> Vec<f64> {
        self.p.row_iter().map(|r| r.sum()).collect()
    }

    pub fn idler_marginal(&self) -> Vec<f64> {
        self.p.column_iter().map(|c| c.sum()).collect()
    }
}

fn chain(j: &JointTemporalAmplitude, n: usize, retained: usize, cfg: &McmcConfig, stream: u64) -> (Vec<u16>, Vec<u16>, u64, u64) {
    let nb = j.j_matrix.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let (mut q0, mut p0, mut best) = (0, 0, -1.0);
    for q in 0..nb {
        for p in 0..nb {
            let v = j.j_matrix[(q, p)].norm_sqr();
            if v > best {
                (q0, p0, best) = (q, p, v);
            }
        }
    }
    let mut s = vec![q0; n];
    let mut i = vec![p0; n];
    let mut sub = vec![C64::new(0.0, 0.0); n * n];
    let mut trial = sub.clone();
    let mut scratch = vec![C64::new(0.0, 0.0); n];
    let fill = |sub: &mut [C64], s: &[usize], i: &[usize]| {
        for r in 0..n {
            for c in 0..n {
                sub[r * n + c] = j.j_matrix[(s[r], i[c])];
            }
        }
    };
    fill(&mut sub, &s, &i);
    let mut w = permanent_row_major(&sub, n, &mut scratch).norm_sqr();

    let mut out_s = Vec::with_capacity(retained * n);
    let mut out_i = Vec::with_capacity(retained * n);
    let (mut accepted, mut proposed) = (0u64, 0u64);
    let total = cfg.burn_in + retained * cfg.thinning;
    for step in 1..=total {
        let k = rng.gen_range(0..2 * n);
        let v = rng.gen_range(0..nb);
        trial.copy_from_slice(&sub);
        if k < n {
            for c in 0..n {
                trial[k * n + c] = j.j_matrix[(v, i[c])];
            }
        } else {
            let c = k - n;
            for r in 0..n {
                trial[r * n + c] = j.j_matrix[(s[r], v)];
            }
        }
        let w_new = permanent_row_major(&trial, n, &mut scratch).norm_sqr();
        proposed += 1;
        if w_new >= w || rng.gen::<f64>() * w < w_new {
            accepted += 1;
            std::mem::swap(&mut sub, &mut trial);
            w = w_new;
            if k < n {
                s[k] = v;
            } else {
                i[k - n] = v;
            }
        }
        if step > cfg.burn_in && (step - cfg.burn_in) % cfg.thinning == 0 {
            out_s.extend(s.iter().map(|x| *x as u16));
            out_i.extend(i.iter().map(|x| *x as u16));
        }
    }
    (out_s, out_i, accepted, proposed)
}

/// Joint draws of all 2n emission times.
pub fn sample_joint(jta: &JointTemporalAmplitude, n: usize, cfg: &McmcConfig) -> Result<JointSamples> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("n_pairs must be at least 1".into()));
    }
    if n > PERMANENT_CAP {
        return Err(Error::Size { n, cap: PERMANENT_CAP });
    }
    if jta.j_matrix.nrows() > u16::MAX as usize {
        return Err(Error::Size { n: jta.j_matrix.nrows(), cap: u16::MAX as usize });
    }
    if jta.j_matrix.iter().all(|c| c.norm_sqr() == 0.0) {
        return Err(Error::InvalidParameter("joint temporal amplitude is zero".into()));
    }
    let chains = cfg.chains.min(cfg.samples);
    let per: Vec<usize> = (0..chains).map(|c| cfg.samples / chains + usize::from(c < cfg.samples % chains)).collect();
    let runs: Vec<_> = per
        .par_iter()
        .enumerate()
        .map(|(c, &r)| chain(jta, n, r, cfg, c as u64))
        .collect();
    let mut out = JointSamples { n_pairs: n, grid: jta.grid, signal: Vec::new(), idler: Vec::new(), acceptance_rate: 0.0 };
    let (mut acc, mut prop) = (0u64, 0u64);
    for (s, i, a, p) in runs {
        out.signal.extend(s);
        out.idler.extend(i);
        acc += a;
        prop += p;
    }
    out.acceptance_rate = acc as f64 / prop.max(1) as f64;
    Ok(out)
}

const BATCHES: usize = 20;

/// All n² (signal, idler) combinations of each sample go into the histogram.
pub fn histogram_samples(samples: &JointSamples) -> (DMatrix<f64>, DMatrix<f64>) {
    let nb = samples.grid.n_points;
    let len = samples.len();
    let batches = BATCHES.min(len.max(1));
    let mut parts = vec![DMatrix::<f64>::zeros(nb, nb); batches];
    for k in 0..len {
        let b = k * batches / len;
        let (s, i) = samples.sample(k);
        for q in s {
            for p in i {
                parts[b][(*q as usize, *p as usize)] += 1.0;
            }
        }
    }
    let total: f64 = parts.iter().map(|m| m.sum()).sum();
    let sum = parts.iter().fold(DMatrix::zeros(nb, nb), |a, m| a + m);
    let p = &sum / total.max(1.0);
    let mut se = DMatrix::zeros(nb, nb);
    if batches > 1 {
        let bw: Vec<f64> = parts.iter().map(|m| m.sum()).collect();
        for q in 0..nb {
            for c in 0..nb {
                let mean = p[(q, c)];
                let var: f64 = parts.iter().zip(&bw).map(|(m, w)| (m[(q, c)] / w - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
                se[(q, c)] = (var / batches as f64).sqrt();
            }
        }
    }
    (p, se)
}

/// Marginal P_n(t_s, t_i); exact |J̃|² for n = 1, sampled otherwise.
pub fn marginal_pn(jta: &JointTemporalAmplitude, n: usize, cfg: &McmcConfig) -> Result<PairTimeDistribution> {
    if n == 1 {
        let nb = jta.grid.n_points;
        return Ok(PairTimeDistribution {
            n_pairs: 1,
            grid: jta.grid,
            p: jta.jti(),
            mc_stderr: DMatrix::zeros(nb, nb),
            acceptance_rate: None,
            warning: None,
        });
    }
    let samples = sample_joint(jta, n, cfg)?;
    Ok(from_samples(&samples))
}

pub fn from_samples(samples: &JointSamples) -> PairTimeDistribution {
    let (p, se) = histogram_samples(samples);
    let a = samples.acceptance_rate;
    let warning = (a < ACCEPTANCE_WINDOW.0 || a > ACCEPTANCE_WINDOW.1)
        .then(|| format!("acceptance rate {a:.3} outside [{}, {}]", ACCEPTANCE_WINDOW.0, ACCEPTANCE_WINDOW.1));
    PairTimeDistribution { n_pairs: samples.n_pairs, grid: samples.grid, p, mc_stderr: se, acceptance_rate: Some(a), warning }
}

//! Threshold-detector click statistics given n generated pairs, and the
//! pair-number distribution implied by a Schmidt spectrum.

use crate::error::{Error, Result};
use crate::model::DetectionModel;
use crate::schmidt::{SchmidtDecomposition, XI_FLOOR};
use serde::Serialize;

pub const N_MAX_CAP: usize = 30;

/// Index `n` of each vector is the number of generated pairs.
#[derive(Clone, Debug, Serialize)]
pub struct DetectionProbabilities {
    /// At least one signal and one idler click.
    pub h1: Vec<f64>,
    /// At least two signal and two idler ports click.
    pub h2: Vec<f64>,
    pub h3: Vec<f64>,
    /// Expected all-pairings histogram weight of m-fold selections,
    /// m²·E[C(K_s,m)]·E[C(K_i,m)] with K the number of clicking ports.
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w3: Vec<f64>,
    pub model: DetectionModel,
}

/// Which normalisation the coincidence data follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Convention {
    /// One count per coincidence event, the h_n^{(m)} weights.
    ClickProbability,
    /// Every signal/idler click pairing counted, the w_m weights.
    AllPairings,
}

impl DetectionProbabilities {
    pub fn n_max(&self) -> usize {
        self.h1.len() - 1
    }

    pub fn weights(&self, m: usize, conv: Convention) -> &[f64] {
        match (m, conv) {
            (1, Convention::ClickProbability) => &self.h1,
            (2, Convention::ClickProbability) => &self.h2,
            (3, Convention::ClickProbability) => &self.h3,
            (1, Convention::AllPairings) => &self.w1,
            (2, Convention::AllPairings) => &self.w2,
            (3, Convention::AllPairings) => &self.w3,
            _ => panic!("coincidence order {m} not tabulated"),
        }
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_fact(n) - ln_fact(k) - ln_fact(n - k)
}

fn ln_fact(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn binom_pmf(n: usize, k: usize, p: f64) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// h_n^{(1)} as the double binomial sum over photons reaching the detectors.
pub fn h1_binomial(n: usize, eta_s: f64, eta_i: f64) -> f64 {
    let side = |eta: f64| (1..=n).map(|k| binom_pmf(n, k, eta)).sum::<f64>();
    side(eta_s) * side(eta_i)
}

/// Distribution of the number of clicking ports when `n` photons are routed
/// multinomially: port j with probability η_j, lost otherwise. Enumerated
/// port by port through the conditional binomials of the multinomial law.
pub fn clicked_ports_pmf(n: usize, eta: &[f64]) -> Vec<f64> {
    let ports = eta.len();
    // state[u][k]: u photons routed so far, k ports clicked
    let mut state = vec![vec![0.0; ports + 1]; n + 1];
    state[0][0] = 1.0;
    let mut left = 1.0;
    for &e in eta {
        let cond = if left > 0.0 { (e / left).min(1.0) } else { 0.0 };
        let mut next = vec![vec![0.0; ports + 1]; n + 1];
        for u in 0..=n {
            for k in 0..ports {
                let mass = state[u][k];
                if mass == 0.0 {
                    continue;
                }
                for take in 0..=(n - u) {
                    let pr = binom_pmf(n - u, take, cond);
                    if pr == 0.0 {
                        continue;
                    }
                    next[u + take][k + usize::from(take > 0)] += mass * pr;
                }
            }
        }
        state = next;
        left -= e;
    }
    let mut pmf = vec![0.0; ports + 1];
    for row in &state {
        for (k, v) in row.iter().enumerate() {
            pmf[k] += v;
        }
    }
    pmf
}

fn choose_f(n: usize, k: usize) -> f64 {
    if k > n {
        0.0
    } else {
        ln_choose(n, k).exp().round()
    }
}

pub fn detection_probs(model: &DetectionModel, n_max: usize) -> Result<DetectionProbabilities> {
    model.validate()?;
    if n_max > N_MAX_CAP {
        return Err(Error::Size { n: n_max, cap: N_MAX_CAP });
    }
    let (ts, ti) = (model.total_s(), model.total_i());
    let mut out = DetectionProbabilities {
        h1: Vec::with_capacity(n_max + 1),
        h2: Vec::new(),
        h3: Vec::new(),
        w1: Vec::new(),
        w2: Vec::new(),
        w3: Vec::new(),
        model: model.clone(),
    };
    for n in 0..=n_max {
        let ks = clicked_ports_pmf(n, &model.eta_s);
        let ki = clicked_ports_pmf(n, &model.eta_i);
        let at_least = |pmf: &[f64], m: usize| pmf.iter().skip(m).sum::<f64>();
        let expect_choose = |pmf: &[f64], m: usize| pmf.iter().enumerate().map(|(k, p)| choose_f(k, m) * p).sum::<f64>();
        out.h1.push(h1_binomial(n, ts, ti));
        out.h2.push(at_least(&ks, 2) * at_least(&ki, 2));
        out.h3.push(at_least(&ks, 3) * at_least(&ki, 3));
        for (m, w) in [(1usize, &mut out.w1), (2, &mut out.w2), (3, &mut out.w3)] {
            w.push((m * m) as f64 * expect_choose(&ks, m) * expect_choose(&ki, m));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PairNumberDistribution {
    /// r_n for n = 0..=n_max.
    pub r: Vec<f64>,
    /// 1 − Σ r_n, the probability of more than n_max pairs.
    pub tail: f64,
}

impl PairNumberDistribution {
    pub fn mean(&self) -> f64 {
        self.r.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

/// Independent geometric pair numbers per Schmidt mode, x = tanh²ξ,
/// convolved over modes.
pub fn rn_from_schmidt(decomp: &SchmidtDecomposition, n_max: usize) -> PairNumberDistribution {
    rn_from_xi(decomp.active_xi(), n_max)
}

pub fn rn_from_xi(xi: impl IntoIterator<Item = f64>, n_max: usize) -> PairNumberDistribution {
    let mut r = vec![0.0; n_max + 1];
    r[0] = 1.0;
    for x in xi.into_iter().filter(|x| *x >= XI_FLOOR) {
        let t = x.tanh().powi(2);
        let c = 1.0 - t;
        let mut next = vec![0.0; n_max + 1];
        for (a, ra) in r.iter().enumerate() {
            if *ra == 0.0 {
                continue;
            }
            let mut pk = c;
            for slot in next.iter_mut().skip(a) {
                *slot += ra * pk;
                pk *= t;
            }
        }
        r = next;
    }
    let tail = (1.0 - r.iter().sum::<f64>()).max(0.0);
    PairNumberDistribution { r, tail }
}

/// Per-port efficiencies reproducing measured single-click probabilities
/// per pulse, 1 − Σ r_n (1 − η)ⁿ, by bisection.
pub fn fit_efficiencies(singles_s: &[f64], singles_i: &[f64], rn: &PairNumberDistribution) -> Result<DetectionModel> {
    let click = |eta: f64| -> f64 { rn.r.iter().enumerate().map(|(n, r)| r * (1.0 - (1.0 - eta).powi(n as i32))).sum() };
    let solve = |target: f64| -> Result<f64> {
        let top = click(1.0);
        if !(0.0..=top).contains(&target) {
            return Err(Error::InvalidParameter(format!("click probability {target:.4e} unreachable (max {top:.4e})")));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if click(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    };
    let es = singles_s.iter().map(|s| solve(*s)).collect::<Result<Vec<_>>>()?;
    let ei = singles_i.iter().map(|s| solve(*s)).collect::<Result<Vec<_>>>()?;
    DetectionModel::new(es, ei)
}

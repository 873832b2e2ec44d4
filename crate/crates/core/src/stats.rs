//! Energy-distance two-sample test and grid-distribution fidelity.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct EnergyTestResult {
    pub d2: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub sample_sizes: (usize, usize),
}

pub const DEFAULT_PERMUTATIONS: usize = 1000;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check<P: AsRef<[f64]>>(x: &[P], y: &[P]) -> Result<usize> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidParameter("energy distance needs at least two samples per set".into()));
    }
    let d = x[0].as_ref().len();
    if x.iter().chain(y).any(|p| p.as_ref().len() != d) {
        return Err(Error::Shape("samples of unequal dimension".into()));
    }
    Ok(d)
}

/// D² = 2A − B − C with A, B, C the mean Euclidean distances between and
/// within the two sample sets.
pub fn energy_distance<P: AsRef<[f64]>>(x: &[P], y: &[P]) -> Result<f64> {
    check(x, y)?;
    let mean = |u: &[P], v: &[P]| -> f64 {
        let s: f64 = u.iter().map(|a| v.iter().map(|b| dist(a.as_ref(), b.as_ref())).sum::<f64>()).sum();
        s / (u.len() * v.len()) as f64
    };
    Ok(2.0 * mean(x, y) - mean(x, x) - mean(y, y))
}

/// Pooled pairwise distances, packed upper triangle.
struct Pooled {
    n: usize,
    d: Vec<f64>,
    total: f64,
}

impl Pooled {
    fn new<P: AsRef<[f64]>>(pts: &[&P]) -> Self {
        let n = pts.len();
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                d.push(dist(pts[i].as_ref(), pts[j].as_ref()));
            }
        }
        let total = d.iter().sum();
        Pooled { n, d, total }
    }

    /// D² when `labels[k]` marks membership of the first sample.
    fn statistic(&self, labels: &[bool], m: usize) -> f64 {
        let (mut sxx, mut syy) = (0.0, 0.0);
        let mut k = 0;
        for i in 0..self.n {
            let row = &self.d[k..k + self.n - i - 1];
            k += row.len();
            let li = labels[i];
            for (dv, lj) in row.iter().zip(&labels[i + 1..]) {
                if li == *lj {
                    if li {
                        sxx += dv;
                    } else {
                        syy += dv;
                    }
                }
            }
        }
        let k = self.n - m;
        let sxy = self.total - sxx - syy;
        2.0 * sxy / (m * k) as f64 - 2.0 * sxx / (m * m) as f64 - 2.0 * syy / (k * k) as f64
    }
}

/// Permutation p-value (1 + #{D²_perm ≥ D²_obs}) / (1 + n_perm); each
/// permutation draws from its own seeded stream.
pub fn permutation_test<P: AsRef<[f64]> + Sync>(x: &[P], y: &[P], n_perm: usize, seed: u64) -> Result<EnergyTestResult> {
    check(x, y)?;
    if n_perm < 100 {
        return Err(Error::InvalidParameter(format!("n_perm = {n_perm} is below 100")));
    }
    let pts: Vec<&P> = x.iter().chain(y).collect();
    let pooled = Pooled::new(&pts);
    let m = x.len();
    let base: Vec<bool> = (0..pts.len()).map(|k| k < m).collect();
    let observed = pooled.statistic(&base, m);
    let exceed: usize = (0..n_perm)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut labels = base.clone();
            labels.shuffle(&mut rng);
            // a relative slack keeps exact ties counted despite summation order
            usize::from(pooled.statistic(&labels, m) >= observed - 1e-12 * observed.abs())
        })
        .sum();
    Ok(EnergyTestResult {
        d2: observed.max(0.0),
        p_value: (1 + exceed) as f64 / (1 + n_perm) as f64,
        n_permutations: n_perm,
        sample_sizes: (x.len(), y.len()),
    })
}

/// p-values at increasing matched sample sizes, using leading subsets.
pub fn sample_size_sweep<P: AsRef<[f64]> + Sync>(x: &[P], y: &[P], sizes: &[usize], n_perm: usize, seed: u64) -> Result<Vec<EnergyTestResult>> {
    sizes
        .iter()
        .map(|&s| {
            if s > x.len() || s > y.len() {
                return Err(Error::InvalidParameter(format!("sample size {s} exceeds available samples")));
            }
            permutation_test(&x[..s], &y[..s], n_perm, seed)
        })
        .collect()
}

/// F = Σpq / sqrt(Σp² Σq²).
pub fn fidelity(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", p.shape(), q.shape())));
    }
    if p.iter().chain(q.iter()).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("fidelity needs finite non-negative distributions".into()));
    }
    let (pp, qq) = (p.norm_squared(), q.norm_squared());
    if pp == 0.0 || qq == 0.0 {
        return Err(Error::UndefinedFidelity);
    }
    Ok((p.dot(q) / (pp * qq).sqrt()).min(1.0))
}

/// P^{(s)}(t_s) P^{(i)}(t_i) from the row and column sums of `p`.
pub fn product_of_marginals(p: &DMatrix<f64>) -> DMatrix<f64> {
    let total = p.sum();
    let rows: Vec<f64> = p.row_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = p.column_iter().map(|c| c.sum()).collect();
    DMatrix::from_fn(p.nrows(), p.ncols(), |q, c| if total > 0.0 { rows[q] * cols[c] / total } else { 0.0 })
}

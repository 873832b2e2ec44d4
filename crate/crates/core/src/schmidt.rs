//! Schmidt decomposition of the sampled pair correlator and the joint
//! temporal amplitude.

use crate::error::{Error, Result};
use crate::model::{TimeGrid, DB_PER_NEPER};
use crate::moments::TwoTimeMoment;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use std::io::Write;

/// Modes below this squeezing are dropped from downstream sums.
pub const XI_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct SchmidtDecomposition {
    pub d_vals: Vec<f64>,
    pub xi: Vec<f64>,
    /// Signal temporal modes, one per column.
    pub p_s: DMatrix<C64>,
    /// Idler temporal modes, one per column; M = P_s diag(D) P_i†.
    pub p_i: DMatrix<C64>,
    pub dt: f64,
    pub grid: TimeGrid,
}

/// ξ from a sampled singular value, the inverse of D = sinh(2ξ)/(2Δt).
pub fn xi_from_singular(d: f64, dt: f64) -> f64 {
    0.5 * (2.0 * d * dt).asinh()
}

pub fn decompose(two_time: &TwoTimeMoment) -> Result<SchmidtDecomposition> {
    decompose_matrix(&two_time.m_matrix, &two_time.grid)
}

pub fn decompose_matrix(m: &DMatrix<C64>, grid: &TimeGrid) -> Result<SchmidtDecomposition> {
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical("pair correlator contains non-finite entries".into()));
    }
    if m.nrows() != m.ncols() || m.nrows() != grid.n_points {
        return Err(Error::Shape(format!("matrix {}x{} on a grid of {}", m.nrows(), m.ncols(), grid.n_points)));
    }
    let n = m.nrows();
    let svd = m.clone().try_svd(true, true, 1e-15, 10_000).ok_or_else(|| {
        let norm = m.norm();
        Error::Numerical(format!("SVD did not converge (Frobenius norm {norm:.3e})"))
    })?;
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let d_vals: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let p_s = DMatrix::from_fn(n, n, |r, c| u[(r, order[c])]);
    let p_i = DMatrix::from_fn(n, n, |r, c| v_t[(order[c], r)].conj());
    let xi = d_vals.iter().map(|d| xi_from_singular(*d, grid.dt)).collect();
    Ok(SchmidtDecomposition { d_vals, xi, p_s, p_i, dt: grid.dt, grid: *grid })
}

impl SchmidtDecomposition {
    pub fn active_xi(&self) -> impl Iterator<Item = f64> + '_ {
        self.xi.iter().cloned().filter(|x| *x >= XI_FLOOR)
    }

    /// Mean pre-loss pair number Σ sinh²ξ.
    pub fn mean_pairs(&self) -> f64 {
        self.active_xi().map(|x| x.sinh().powi(2)).sum()
    }

    pub fn schmidt_number(&self) -> f64 {
        let s2: f64 = self.mean_pairs();
        let s4: f64 = self.active_xi().map(|x| x.sinh().powi(4)).sum();
        if s4 == 0.0 {
            1.0
        } else {
            s2 * s2 / s4
        }
    }

    pub fn purity(&self) -> f64 {
        1.0 / self.schmidt_number()
    }

    pub fn xi_max(&self) -> f64 {
        self.xi.first().cloned().unwrap_or(0.0)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, p_e: f64) -> Result<()> {
        writeln!(w, "mode,d_val,xi,xi_db,xi_out_db")?;
        for (k, (d, x)) in self.d_vals.iter().zip(&self.xi).enumerate() {
            let (_, out_db) = output_squeezing(*x, p_e)?;
            writeln!(w, "{k},{d:.10e},{x:.10e},{:.6},{:.6}", x * DB_PER_NEPER, out_db)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct JointTemporalAmplitude {
    pub j_matrix: DMatrix<C64>,
    pub grid: TimeGrid,
}

/// J̃_qp = Σ_λ (ξ_λ/(2Δt)) P_s[q,λ] P_i[p,λ]*.
pub fn jta(decomp: &SchmidtDecomposition) -> JointTemporalAmplitude {
    let n = decomp.p_s.nrows();
    let r = DVector::from_iterator(
        n,
        decomp.xi.iter().map(|x| if *x >= XI_FLOOR { C64::new(x / (2.0 * decomp.dt), 0.0) } else { C64::new(0.0, 0.0) }),
    );
    let scaled = DMatrix::from_fn(n, n, |q, l| decomp.p_s[(q, l)] * r[l]);
    JointTemporalAmplitude { j_matrix: scaled * decomp.p_i.adjoint(), grid: decomp.grid }
}

impl JointTemporalAmplitude {
    /// |J̃|² normalised to unit sum over bins.
    pub fn jti(&self) -> DMatrix<f64> {
        let m = self.j_matrix.map(|c| c.norm_sqr());
        let s = m.sum();
        if s > 0.0 {
            m / s
        } else {
            m
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# t_start={} dt={} n={} jta layout=row-major re,im", self.grid.t_start, self.grid.dt, self.grid.n_points)?;
        for r in 0..self.j_matrix.nrows() {
            let row: Vec<String> = (0..self.j_matrix.ncols())
                .map(|c| format!("{:.10e},{:.10e}", self.j_matrix[(r, c)].re, self.j_matrix[(r, c)].im))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Purity bound of a joint intensity: Schmidt purity of its element-wise square root.
pub fn purity_bound(jti: &DMatrix<f64>) -> Result<f64> {
    if jti.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("joint intensity must be finite and non-negative".into()));
    }
    let amp = jti.map(f64::sqrt);
    let s = amp.singular_values();
    let s2: f64 = s.iter().map(|v| v * v).sum();
    if s2 == 0.0 {
        return Err(Error::InvalidParameter("joint intensity is zero".into()));
    }
    let s4: f64 = s.iter().map(|v| v.powi(4)).sum();
    Ok(s4 / (s2 * s2))
}

/// Squeezing left after escape: −½ ln(1 − p_e + p_e e^{−2ξ}); returns nepers and dB.
pub fn output_squeezing(xi: f64, p_e: f64) -> Result<(f64, f64)> {
    if !(xi >= 0.0) || !(p_e > 0.0 && p_e <= 1.0) {
        return Err(Error::InvalidParameter(format!("xi={xi}, p_e={p_e}")));
    }
    let out = if p_e == 1.0 { xi } else { -0.5 * (1.0 - p_e + p_e * (-2.0 * xi).exp()).ln() };
    Ok((out, out * DB_PER_NEPER))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, f: impl Fn(usize) -> C64) -> DVector<C64> {
        let v = DVector::from_fn(n, |k, _| f(k));
        let norm = v.norm();
        v / C64::new(norm, 0.0)
    }

    #[test]
    fn rank_one() {
        let n = 12;
        let grid = TimeGrid::new(0.0, 80.0, n).unwrap();
        let u = unit(n, |k| C64::new((k as f64 * 0.3).sin() + 1.5, 0.1 * k as f64));
        let v = unit(n, |k| C64::new(1.0 / (1.0 + k as f64), -0.2));
        let d = 3e-3;
        let m = (&u * v.adjoint()) * C64::new(d, 0.0);
        let dec = decompose_matrix(&m, &grid).unwrap();
        assert!((dec.xi[0] - xi_from_singular(d, 80.0)).abs() < 1e-12);
        assert!((dec.schmidt_number() - 1.0).abs() < 1e-12);
        let j = jta(&dec);
        let direct = (&u * v.adjoint()) * C64::new(dec.xi[0] / 160.0, 0.0);
        assert!((j.j_matrix - direct).norm() < 1e-12);
    }

    #[test]
    fn zero_matrix() {
        let grid = TimeGrid::new(0.0, 80.0, 5).unwrap();
        let dec = decompose_matrix(&DMatrix::zeros(5, 5), &grid).unwrap();
        assert!(dec.xi.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn output_squeezing_limits() {
        let (x, _) = output_squeezing(0.0, 0.75).unwrap();
        assert_eq!(x, 0.0);
        let (_, db) = output_squeezing(60.0, 0.75).unwrap();
        assert!((db - 6.02).abs() < 0.01);
        assert_eq!(output_squeezing(2.0, 1.0).unwrap().0, 2.0);
    }

    #[test]
    fn purity_bound_of_product_is_one() {
        let a = DVector::from_vec(vec![0.1, 0.5, 0.3]);
        let b = DVector::from_vec(vec![0.2, 0.2, 0.7]);
        assert!((purity_bound(&(&a * b.transpose())).unwrap() - 1.0).abs() < 1e-12);
    }
}

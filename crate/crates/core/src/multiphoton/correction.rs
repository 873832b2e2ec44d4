//! Forward coincidence model and the four-/six-fold subtraction recovering
//! the single-pair joint temporal intensity.

use super::detection::{Convention, DetectionProbabilities, PairNumberDistribution};
use super::mcmc::PairTimeDistribution;
use crate::error::{Error, Result};
use crate::schmidt::purity_bound;
use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::Serialize;

pub const CONDITION_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CorrectionOrder {
    FourFold,
    SixFold,
}

#[derive(Clone, Debug)]
pub struct CoincidenceModel {
    pub p: DMatrix<f64>,
    /// Upper bound on the mass carried by pair numbers beyond the supplied P_n.
    pub tail_bound: f64,
    pub warning: Option<String>,
}

/// p_qp = Σ_n weight_n r_n P_n(q,p).
pub fn coincidence_model(pn: &[PairTimeDistribution], rn: &PairNumberDistribution, det: &DetectionProbabilities, conv: Convention) -> Result<CoincidenceModel> {
    let first = pn.first().ok_or_else(|| Error::InvalidParameter("no P_n supplied".into()))?;
    let w = det.weights(1, conv);
    let mut p = DMatrix::zeros(first.p.nrows(), first.p.ncols());
    let mut covered = vec![false; rn.r.len().max(w.len())];
    for d in pn {
        if d.p.shape() != p.shape() {
            return Err(Error::Shape("P_n grids differ".into()));
        }
        let n = d.n_pairs;
        let (Some(r), Some(wn)) = (rn.r.get(n), w.get(n)) else {
            return Err(Error::InvalidParameter(format!("no weight tabulated for n = {n}")));
        };
        p += &d.p * (wn * r);
        covered[n] = true;
    }
    let w_cap = match conv {
        Convention::ClickProbability => 1.0,
        Convention::AllPairings => (det.model.eta_s.len() * det.model.eta_i.len()) as f64,
    };
    let missing: f64 = rn.r.iter().enumerate().skip(1).filter(|(n, _)| !covered[*n]).map(|(_, r)| r).sum::<f64>() + rn.tail;
    let tail_bound = missing * w_cap;
    let total = p.sum();
    let warning = (tail_bound > 0.01 * total).then(|| format!("truncated pair numbers may carry up to {tail_bound:.3e} of {total:.3e}"));
    Ok(CoincidenceModel { p, tail_bound, warning })
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrectionResult {
    pub order: CorrectionOrder,
    pub alpha_opt: f64,
    pub beta_opt: Option<f64>,
    pub condition: Option<f64>,
    #[serde(skip)]
    pub p1_estimate: DMatrix<f64>,
    /// Negative mass removed by flooring, relative to the total absolute mass.
    pub clipped_fraction: f64,
    pub purity_bound_raw: f64,
    pub purity_bound: f64,
}

/// α_opt = −Σ_{n≥2} w¹_n r_n / Σ_{n≥2} w²_n r_n.
pub fn alpha_opt(det: &DetectionProbabilities, rn: &PairNumberDistribution, conv: Convention) -> Result<f64> {
    let (w1, w2) = (det.weights(1, conv), det.weights(2, conv));
    let upto = rn.r.len().min(w1.len());
    let num: f64 = (2..upto).map(|n| w1[n] * rn.r[n]).sum();
    let den: f64 = (2..upto).map(|n| w2[n] * rn.r[n]).sum();
    if den <= 0.0 {
        return Err(Error::NoMultipair);
    }
    Ok(-num / den)
}

/// (α, β) cancelling the n = 2 and n = 3 contamination, with the condition number.
pub fn alpha_beta_opt(det: &DetectionProbabilities, conv: Convention) -> Result<(f64, f64, f64)> {
    let (w1, w2, w3) = (det.weights(1, conv), det.weights(2, conv), det.weights(3, conv));
    if w1.len() < 4 {
        return Err(Error::InvalidParameter("six-fold correction needs weights up to n = 3".into()));
    }
    let a = Matrix2::new(w2[2], w3[2], w2[3], w3[3]);
    let sv = a.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > CONDITION_LIMIT {
        return Err(Error::IllConditioned { cond });
    }
    let x = a.lu().solve(&Vector2::new(-w1[2], -w1[3])).ok_or(Error::IllConditioned { cond })?;
    Ok((x[0], x[1], cond))
}

/// P₁ ≈ (p_qp + α Σp_qpmn [+ β Σp_qpmnrs]) / w¹₁, floored at zero afterwards.
/// Inputs are per-pulse probabilities in the normalisation named by `conv`.
pub fn correct_p1(
    p2: &DMatrix<f64>,
    p4m: &DMatrix<f64>,
    p6m: Option<&DMatrix<f64>>,
    det: &DetectionProbabilities,
    rn: &PairNumberDistribution,
    order: CorrectionOrder,
    conv: Convention,
) -> Result<CorrectionResult> {
    if p2.shape() != p4m.shape() || p6m.is_some_and(|m| m.shape() != p2.shape()) {
        return Err(Error::Shape("coincidence histograms are on different grids".into()));
    }
    let w11 = det.weights(1, conv).get(1).copied().unwrap_or(0.0);
    if w11 <= 0.0 {
        return Err(Error::InvalidParameter("single-pair detection probability is zero".into()));
    }
    let (alpha, beta, cond) = match order {
        CorrectionOrder::FourFold => (alpha_opt(det, rn, conv)?, None, None),
        CorrectionOrder::SixFold => {
            let (a, b, c) = alpha_beta_opt(det, conv)?;
            (a, Some(b), Some(c))
        }
    };
    let mut est = p2 + p4m * alpha;
    if let Some(b) = beta {
        let six = p6m.ok_or_else(|| Error::InvalidParameter("six-fold correction needs the six-fold histogram".into()))?;
        est += six * b;
    }
    est /= w11;
    let abs_total: f64 = est.iter().map(|v| v.abs()).sum();
    let neg: f64 = est.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    let clipped_fraction = if abs_total > 0.0 { neg / abs_total } else { 0.0 };
    est.iter_mut().for_each(|v| *v = v.max(0.0));
    let purity_bound_raw = purity_bound(p2)?;
    let bound = purity_bound(&est)?;
    Ok(CorrectionResult {
        order,
        alpha_opt: alpha,
        beta_opt: beta,
        condition: cond,
        p1_estimate: est,
        clipped_fraction,
        purity_bound_raw,
        purity_bound: bound,
    })
}

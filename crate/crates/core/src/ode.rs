//! Dormand–Prince 5(4) integrator with dense output.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-12, h_init: 0.0, h_max: f64::INFINITY, max_steps: 2_000_000 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its continuous extension.
#[derive(Clone, Debug)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    r: [Vec<f64>; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        for i in 0..out.len() {
            out[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.r[0].len()];
        self.eval_into(t, &mut out);
        out
    }
}

/// Piecewise dense solution assembled from accepted steps.
#[derive(Clone, Debug, Default)]
pub struct DenseSolution {
    pub steps: Vec<DenseStep>,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.t0)
    }

    pub fn t_end(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.t1())
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let k = self.steps.partition_point(|s| s.t1() < t).min(self.steps.len() - 1);
        self.steps[k].eval_into(t, out);
    }
}

/// Integrates `f` from `t0` to `t1`, calling `on_step` for every accepted step.
pub fn integrate<F, S>(mut f: F, t0: f64, t1: f64, y0: &[f64], opts: &OdeOptions, mut on_step: S) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(&DenseStep),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if t1 <= t0 {
        return Ok(y);
    }
    let span = t1 - t0;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut yt = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    f(t0, &y, &mut k1);

    let mut h = if opts.h_init > 0.0 {
        opts.h_init
    } else {
        let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
        let d0 = rms(&y, &sc);
        let d1 = rms(&k1, &sc);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
        h0.min(span * 0.01)
    };
    h = h.min(opts.h_max).max(1e-12 * span);

    let mut t = t0;
    let mut steps = 0usize;
    let mut last = false;
    while !last {
        if steps >= opts.max_steps {
            return Err(Error::Integration { t, reason: "step budget exhausted".into() });
        }
        if t + h >= t1 {
            h = t1 - t;
        }
        for i in 0..n {
            yt[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &yt, &mut k2);
        for i in 0..n {
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &yt, &mut k3);
        for i in 0..n {
            yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &yt, &mut k4);
        for i in 0..n {
            yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &yt, &mut k5);
        for i in 0..n {
            yt[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &yt, &mut k6);
        for i in 0..n {
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &ynew, &mut k7);
        steps += 1;

        let mut err = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err += (e / sk) * (e / sk);
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            h *= 0.1;
            if h < 1e-14 * span {
                return Err(Error::Integration { t, reason: "non-finite state".into() });
            }
            last = false;
            continue;
        }
        if err <= 1.0 {
            let r1 = y.clone();
            let mut r2 = vec![0.0; n];
            let mut r3 = vec![0.0; n];
            let mut r4 = vec![0.0; n];
            let mut r5 = vec![0.0; n];
            for i in 0..n {
                let dy = ynew[i] - y[i];
                let bspl = h * k1[i] - dy;
                r2[i] = dy;
                r3[i] = bspl;
                r4[i] = dy - h * k7[i] - bspl;
                r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            y.copy_from_slice(&ynew);
            let step = DenseStep { t0: t, h, r: [r1, r2, r3, r4, r5] };
            on_step(&step);
            last = t + h >= t1;
            t += h;
            std::mem::swap(&mut k1, &mut k7);
            let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
            h = (h * fac).min(opts.h_max);
        } else {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            h *= fac;
            if h < 1e-14 * span {
                return Err(Error::Integration { t, reason: "step size underflow".into() });
            }
        }
    }
    Ok(y)
}

fn rms(v: &[f64], sc: &[f64]) -> f64 {
    let s: f64 = v.iter().zip(sc).map(|(a, b)| (a / b) * (a / b)).sum();
    (s / v.len().max(1) as f64).sqrt()
}

/// Integrates and samples the solution at the sorted times `ts` lying in `[t0, t1]`.
pub fn integrate_sampled<F>(f: F, t0: f64, t1: f64, y0: &[f64], ts: &[f64], opts: &OdeOptions) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut out = Vec::with_capacity(ts.len());
    let mut k = 0usize;
    while k < ts.len() && ts[k] <= t0 {
        out.push(y0.to_vec());
        k += 1;
    }
    let y = integrate(f, t0, t1, y0, opts, |s| {
        while k < ts.len() && ts[k] <= s.t1() {
            out.push(s.eval(ts[k]));
            k += 1;
        }
    })?;
    while k < ts.len() && ts[k] <= t1 {
        out.push(y.clone());
        k += 1;
    }
    Ok((y, out))
}

//! Matrix permanent, Glynn's formula with Gray-code ordering, O(2ⁿ⁻¹ n).

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

pub const PERMANENT_CAP: usize = 20;

pub fn permanent(a: &DMatrix<C64>) -> Result<C64> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape(format!("permanent of a {}x{} matrix", n, a.ncols())));
    }
    if n > PERMANENT_CAP {
        return Err(Error::Size { n, cap: PERMANENT_CAP });
    }
    let mut rows = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            rows.push(a[(r, c)]);
        }
    }
    let mut scratch = vec![C64::new(0.0, 0.0); n];
    Ok(permanent_row_major(&rows, n, &mut scratch))
}

/// Permanent of a row-major `n × n` slice; `scratch` must hold `n` entries.
/// No size check, callers keep `n` small.
pub fn permanent_row_major(a: &[C64], n: usize, scratch: &mut [C64]) -> C64 {
    match n {
        0 => return C64::new(1.0, 0.0),
        1 => return a[0],
        2 => return a[0] * a[3] + a[1] * a[2],
        _ => {}
    }
    let sums = &mut scratch[..n];
    for (c, s) in sums.iter_mut().enumerate() {
        *s = (0..n).map(|r| a[r * n + c]).sum();
    }
    let mut delta = vec![true; n];
    let mut total: C64 = sums.iter().product();
    let mut sign = 1.0;
    let terms = 1usize << (n - 1);
    for k in 1..terms {
        let i = k.trailing_zeros() as usize + 1;
        let row = &a[i * n..(i + 1) * n];
        if delta[i] {
            for (s, v) in sums.iter_mut().zip(row) {
                *s -= 2.0 * v;
            }
        } else {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += 2.0 * v;
            }
        }
        delta[i] = !delta[i];
        sign = -sign;
        let prod: C64 = sums.iter().product();
        total += prod * sign;
    }
    total / terms as f64
}

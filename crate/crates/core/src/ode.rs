//! Dormand-Prince 5(4) with step-size control and exact landing on output nodes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { atol: 1e-10, rtol: 1e-10 }
    }
}

/// Dense record of an integration: values and right-hand sides at the output nodes.
#[derive(Debug, Clone)]
pub struct Solution<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub dy: Vec<[f64; N]>,
    pub accepted: usize,
    pub rejected: usize,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates y' = f(t, y) from `t0` and records the state at `t0 + k*stride`
/// for k = 0..=ceil((t_end - t0)/stride) (last node clamped to `t_end`).
/// `check` runs on every accepted state and may abort the integration.
pub fn integrate<const N: usize, F, G>(
    f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    stride: f64,
    tol: Tolerances,
    mut check: G,
) -> Result<Solution<N>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: FnMut(f64, &[f64; N]) -> Result<()>,
{
    if !(t_end > t0) || !(stride > 0.0) {
        return Err(Error::Integration(format!("bad interval [{t0}, {t_end}] / stride {stride}")));
    }
    let n_out = ((t_end - t0) / stride - 1e-9).ceil() as usize;
    let node = |k: usize| if k >= n_out { t_end } else { t0 + k as f64 * stride };

    let mut sol = Solution { t: vec![t0], y: vec![y0], dy: vec![f(t0, &y0)], accepted: 0, rejected: 0 };
    let mut t = t0;
    let mut y = y0;
    let mut k1 = sol.dy[0];
    let mut h = (stride * 0.5).min(0.1);
    let h_min = 1e-12 * (t_end - t0).abs().max(1.0);
    let mut next = 1;

    while next <= n_out {
        let target = node(next);
        let mut landing = false;
        if t + h >= target - 1e-14 * target.abs().max(1.0) {
            h = target - t;
            landing = true;
        }
        let mut k = [[0.0; N]; 7];
        k[0] = k1;
        for s in 1..7 {
            let mut ys = y;
            for i in 0..N {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                ys[i] += h * acc;
            }
            k[s] = f(t + C[s] * h, &ys);
        }
        let mut y_new = y;
        let mut err = 0.0f64;
        for i in 0..N {
            let mut acc = 0.0;
            let mut e = 0.0;
            for s in 0..7 {
                acc += B[s] * k[s][i];
                e += E[s] * k[s][i];
            }
            y_new[i] += h * acc;
            let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((h * e / sc).abs());
        }
        if !err.is_finite() {
            return Err(Error::Integration(format!("non-finite error estimate at t = {t}")));
        }
        if err <= 1.0 {
            t = if landing { target } else { t + h };
            y = y_new;
            k1 = k[6];
            sol.accepted += 1;
            check(t, &y)?;
            if landing {
                sol.t.push(t);
                sol.y.push(y);
                sol.dy.push(k1);
                next += 1;
            }
        } else {
            sol.rejected += 1;
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
        if h < h_min {
            return Err(Error::Integration(format!("step size underflow at t = {t}")));
        }
    }
    Ok(sol)
}

/// Cubic Hermite interpolation on [t0, t1] from values and slopes.
#[inline]
pub fn hermite(t0: f64, t1: f64, y0: f64, y1: f64, d0: f64, d1: f64, t: f64) -> (f64, f64) {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let v = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dv = ((6.0 * s2 - 6.0 * s) * y0 + (3.0 * s2 - 4.0 * s + 1.0) * h * d0
        + (-6.0 * s2 + 6.0 * s) * y1
        + (3.0 * s2 - 2.0 * s) * h * d1)
        / h;
    (v, dv)
}

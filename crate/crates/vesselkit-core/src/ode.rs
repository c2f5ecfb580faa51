//! Adaptive Dormand-Prince 5(4) integration over real and complex state vectors.

use crate::algebra::C64;
use crate::error::{Error, Result};

/// Step-control settings of [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-10, max_steps: 1_000_000 }
    }
}

impl OdeOptions {
    /// Equal relative and absolute tolerance `tol`.
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
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

fn combo(y: &[f64], h: f64, terms: &[(f64, &[f64])], out: &mut [f64]) {
    for i in 0..y.len() {
        let mut s = 0.0;
        for (a, k) in terms {
            s += a * k[i];
        }
        out[i] = y[i] + h * s;
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction) and
/// returns `y(t1)`.
pub fn integrate<F>(mut f: F, t0: f64, t1: f64, y0: &[f64], opts: OdeOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if t1 == t0 || n == 0 {
        return Ok(y);
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut t = t0;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    f(t, &y, &mut k1);

    let scale0: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let d0 = rms_scaled(&y, &scale0);
    let d1 = rms_scaled(&k1, &scale0);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span).max(1e-12 * span.max(1.0));
    let h_min = 1e-14 * span.max(t0.abs()).max(1.0);

    let mut steps = 0usize;
    let mut reject_streak = 0usize;
    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::IntegratorFailure(format!("exceeded {} steps at t={t}", opts.max_steps)));
        }
        let hs = h * dir;
        combo(&y, hs, &[(A21, &k1)], &mut tmp);
        f(t + C2 * hs, &tmp, &mut k2);
        combo(&y, hs, &[(A31, &k1), (A32, &k2)], &mut tmp);
        f(t + C3 * hs, &tmp, &mut k3);
        combo(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)], &mut tmp);
        f(t + C4 * hs, &tmp, &mut k4);
        combo(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], &mut tmp);
        f(t + C5 * hs, &tmp, &mut k5);
        combo(&y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], &mut tmp);
        f(t + hs, &tmp, &mut k6);
        combo(&y, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], &mut ynew);
        let t_new = if last { t1 } else { t + hs };
        f(t_new, &ynew, &mut k7);

        let mut err = 0.0;
        for i in 0..n {
            let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err += (e / sc) * (e / sc);
        }
        err = (err / n as f64).sqrt();
        if !err.is_finite() {
            h *= 0.1;
            reject_streak += 1;
            if h < h_min || reject_streak > 50 {
                return Err(Error::IntegratorFailure(format!("non-finite state near t={t}")));
            }
            continue;
        }
        if err <= 1.0 {
            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            reject_streak = 0;
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
            if last {
                break;
            }
        } else {
            reject_streak += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            if h < h_min {
                return Err(Error::IntegratorFailure(format!("step size underflow at t={t}")));
            }
        }
    }
    Ok(y)
}

fn rms_scaled(v: &[f64], scale: &[f64]) -> f64 {
    let s: f64 = v.iter().zip(scale).map(|(a, b)| (a / b) * (a / b)).sum();
    (s / v.len() as f64).sqrt()
}

/// Complex-state wrapper of [`integrate`]; real and imaginary parts are
/// controlled as separate components.
pub fn integrate_complex<F>(mut f: F, t0: f64, t1: f64, y0: &[C64], opts: OdeOptions) -> Result<Vec<C64>>
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let n = y0.len();
    let packed: Vec<f64> = y0.iter().flat_map(|z| [z.re, z.im]).collect();
    let mut yc = vec![C64::new(0.0, 0.0); n];
    let mut dc = vec![C64::new(0.0, 0.0); n];
    let out = integrate(
        |t, y, dy| {
            for i in 0..n {
                yc[i] = C64::new(y[2 * i], y[2 * i + 1]);
            }
            f(t, &yc, &mut dc);
            for i in 0..n {
                dy[2 * i] = dc[i].re;
                dy[2 * i + 1] = dc[i].im;
            }
        },
        t0,
        t1,
        &packed,
        opts,
    )?;
    Ok((0..n).map(|i| C64::new(out[2 * i], out[2 * i + 1])).collect())
}

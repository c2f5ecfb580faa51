//! Fundamental matrices of the input and output linear differential equations
//! for the Sturm-Liouville parameters.
//!
//! The input equation `lambda s2 u - s1 u' + gamma u = 0` has the fundamental
//! matrix `Phi(lambda, x) = exp(x s1 (lambda s2 + gamma))` with `Phi(lambda, 0) = I`.
//! The output equation replaces `gamma` by
//! `gamma_* = [[-i pi11, -beta], [beta, i]]`, `pi11 = beta' - beta^2`,
//! `q = 2 beta'`; its fundamental matrix is assembled from the solutions
//! `phi`, `psi` of `-y'' + q y = mu y`.

use std::fmt;
use std::sync::Arc;

use crate::algebra::{c, mat2, max_abs2, CMat2, VesselParams, C64, I};
use crate::error::{Error, Result};
use crate::ode::{integrate, OdeOptions};

/// Default absolute and relative integration tolerance.
pub const ODE_TOL: f64 = 1e-10;

/// `exp(s s1 (lambda s2 + gamma))` for complex `lambda` and complex argument `s`.
pub fn phi_general(lambda: C64, s: C64) -> CMat2 {
    let w = (I * lambda).sqrt();
    let z = s * w;
    let (ch, sh_over_w) = if z.norm() < 1e-4 {
        let z2 = z * z;
        (c(1.0, 0.0) + z2 / 2.0, s * (c(1.0, 0.0) + z2 / 6.0))
    } else {
        (z.cosh(), z.sinh() / w)
    };
    mat2(ch, I * sh_over_w, lambda * sh_over_w, ch)
}

/// `Phi(i mu, x)` for `mu >= 0`:
/// `[[cos(r x), i sin(r x)/r], [i r sin(r x), cos(r x)]]` with `r = sqrt(mu)`,
/// and `[[1, i x], [0, 1]]` at `mu = 0`.
pub fn phi(mu: f64, x: f64) -> CMat2 {
    if mu == 0.0 {
        return mat2(c(1.0, 0.0), c(0.0, x), c(0.0, 0.0), c(1.0, 0.0));
    }
    let r = mu.sqrt();
    let (sn, cs) = (r * x).sin_cos();
    mat2(c(cs, 0.0), c(0.0, sn / r), c(0.0, r * sn), c(cs, 0.0))
}

/// Largest central-difference residual of `lambda s2 u - s1 u' + g(x) u` over
/// the interior points of `x_grid`, for both columns of `u`.
pub fn lde_residual<U, G>(lambda: C64, x_grid: &[f64], u: U, g: G) -> f64
where
    U: Fn(f64) -> CMat2,
    G: Fn(f64) -> CMat2,
{
    let p = VesselParams::sturm_liouville();
    let mut worst = 0.0_f64;
    for w in x_grid.windows(3) {
        let du = (u(w[2]) - u(w[0])) / c(w[2] - w[0], 0.0);
        let ux = u(w[1]);
        let r = p.sigma2 * ux * lambda - p.sigma1 * du + g(w[1]) * ux;
        worst = worst.max(max_abs2(&r));
    }
    worst
}

/// Residual of the input equation for the columns of `phi_general(lambda, .)`.
pub fn input_lde_residual(lambda: C64, x_grid: &[f64]) -> f64 {
    let gamma = VesselParams::sturm_liouville().gamma;
    lde_residual(lambda, x_grid, |x| phi_general(lambda, c(x, 0.0)), |_| gamma)
}

/// Where the values of a potential evaluator come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QSource {
    Series,
    Grid,
    Closure,
}

/// Real potential `x -> q(x)` trusted on `[x_min, x_max]`.
#[derive(Clone)]
pub struct QEvaluator {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub x_min: f64,
    pub x_max: f64,
    pub source: QSource,
}

impl fmt::Debug for QEvaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QEvaluator")
            .field("x_min", &self.x_min)
            .field("x_max", &self.x_max)
            .field("source", &self.source)
            .finish()
    }
}

impl QEvaluator {
    /// Wraps a closure.
    pub fn new<F>(f: F, x_min: f64, x_max: f64, source: QSource) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self { f: Arc::new(f), x_min, x_max, source }
    }

    /// Constant potential on the whole line.
    pub fn constant(value: f64) -> Self {
        Self::new(move |_| value, f64::NEG_INFINITY, f64::INFINITY, QSource::Closure)
    }

    /// Polynomial `sum_k coeffs[k] x^k` on `[-radius, radius]`.
    pub fn polynomial(coeffs: Vec<f64>, radius: f64) -> Self {
        Self::new(move |x| coeffs.iter().rev().fold(0.0, |acc, &ck| acc * x + ck), -radius, radius, QSource::Series)
    }

    /// Value `q(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    fn check(&self, x: f64) -> Result<()> {
        if x < self.x_min || x > self.x_max {
            return Err(Error::Dimension(format!(
                "x={x} lies outside the trust interval [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        Ok(())
    }
}

/// Solutions of `-y'' + q y = mu y` with `phi(0)=1, phi'(0)=0`,
/// `psi(0)=0, psi'(0)=1`, and `beta(x) = beta0 + 1/2 int_0^x q`.
#[derive(Clone, Copy, Debug)]
pub struct SlState {
    pub phi: f64,
    pub dphi: f64,
    pub psi: f64,
    pub dpsi: f64,
    pub beta: f64,
}

/// Integrates the Sturm-Liouville pair from 0 to `x`.
pub fn sl_solve(q: &QEvaluator, mu: f64, x: f64, beta0: f64, opts: OdeOptions) -> Result<SlState> {
    q.check(0.0)?;
    q.check(x)?;
    let y = integrate(
        |s, y, dy| {
            let qs = q.eval(s);
            dy[0] = y[1];
            dy[1] = (qs - mu) * y[0];
            dy[2] = y[3];
            dy[3] = (qs - mu) * y[2];
            dy[4] = 0.5 * qs;
        },
        0.0,
        x,
        &[1.0, 0.0, 0.0, 1.0, beta0],
        opts,
    )?;
    Ok(SlState { phi: y[0], dphi: y[1], psi: y[2], dpsi: y[3], beta: y[4] })
}

fn structured(s: &SlState) -> CMat2 {
    mat2(c(s.phi, 0.0), c(0.0, s.psi), c(0.0, -(s.dphi - s.beta * s.phi)), c(s.dpsi - s.beta * s.psi, 0.0))
}

/// `[[phi, i psi], [-i(phi' - beta phi), psi' - beta psi]]` at `x` with
/// `beta = 1/2 int_0^x q`; equals `I` at `x = 0`.
pub fn phi_star(q: &QEvaluator, mu: f64, x: f64) -> Result<CMat2> {
    phi_star_with_beta0(q, mu, x, 0.0)
}

/// Fundamental matrix of the output equation with `beta(0) = beta0`,
/// normalized to `I` at `x = 0`.
pub fn phi_star_with_beta0(q: &QEvaluator, mu: f64, x: f64, beta0: f64) -> Result<CMat2> {
    let s = sl_solve(q, mu, x, beta0, OdeOptions::with_tol(ODE_TOL))?;
    let f0_inv = mat2(c(1.0, 0.0), c(0.0, 0.0), c(0.0, -beta0), c(1.0, 0.0));
    Ok(structured(&s) * f0_inv)
}

/// `gamma_*` for the Sturm-Liouville parameters from `q` and `beta` at a point.
pub fn gamma_star_from(q: f64, beta: f64) -> CMat2 {
    let pi11 = 0.5 * q - beta * beta;
    mat2(c(0.0, -pi11), c(-beta, 0.0), c(beta, 0.0), I)
}

/// Residual of the output equation for the structured matrix at `x`, using
/// the exact derivatives of the integrated state.
pub fn output_lde_residual(q: &QEvaluator, mu: f64, x: f64, beta0: f64) -> Result<f64> {
    let s = sl_solve(q, mu, x, beta0, OdeOptions::with_tol(ODE_TOL))?;
    let qx = q.eval(x);
    let ddphi = (qx - mu) * s.phi;
    let ddpsi = (qx - mu) * s.psi;
    let dbeta = 0.5 * qx;
    let f = structured(&s);
    let df = mat2(
        c(s.dphi, 0.0),
        c(0.0, s.dpsi),
        c(0.0, -(ddphi - dbeta * s.phi - s.beta * s.dphi)),
        c(ddpsi - dbeta * s.psi - s.beta * s.dpsi, 0.0),
    );
    let p = VesselParams::sturm_liouville();
    let lambda = c(0.0, mu);
    let r = p.sigma2 * f * lambda - p.sigma1 * df + gamma_star_from(qx, s.beta) * f;
    Ok(max_abs2(&r))
}

/// `|phi psi' - phi' psi - 1|` at `x`.
pub fn wronskian_check(q: &QEvaluator, mu: f64, x: f64) -> Result<f64> {
    let s = sl_solve(q, mu, x, 0.0, OdeOptions::with_tol(ODE_TOL))?;
    Ok((s.phi * s.dpsi - s.dphi * s.psi - 1.0).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: &CMat2, b: &CMat2, tol: f64) -> bool {
        max_abs2(&(a - b)) <= tol
    }

    #[test]
    fn phi_is_identity_at_origin() {
        for mu in [0.0, 0.3, 4.0] {
            assert_eq!(phi(mu, 0.0), CMat2::identity());
        }
    }

    #[test]
    fn phi_quarter_period() {
        let expect = mat2(c(0.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(0.0, 0.0));
        assert!(close(&phi(1.0, PI / 2.0), &expect, 1e-15));
        let adjoint = mat2(c(0.0, 0.0), c(0.0, -1.0), c(0.0, -1.0), c(0.0, 0.0));
        assert!(close(&phi(1.0, PI / 2.0).adjoint(), &adjoint, 1e-15));
    }

    #[test]
    fn phi_zero_mu_limit() {
        let expect = mat2(c(1.0, 0.0), c(0.0, 2.0), c(0.0, 0.0), c(1.0, 0.0));
        assert_eq!(phi(0.0, 2.0), expect);
        assert!(close(&phi(1e-12, 2.0), &expect, 1e-10));
        let adjoint = mat2(c(1.0, 0.0), c(0.0, 0.0), c(0.0, -2.0), c(1.0, 0.0));
        assert_eq!(phi(0.0, 2.0).adjoint(), adjoint);
    }

    #[test]
    fn general_phi_matches_real_form() {
        for &(mu, x) in &[(0.0, 1.3), (2.5, -0.7), (9.0, 2.0)] {
            assert!(close(&phi_general(c(0.0, mu), c(x, 0.0)), &phi(mu, x), 1e-13));
        }
    }

    #[test]
    fn input_residual_small_and_second_order() {
        let grid = |h: f64| -> Vec<f64> { (0..=200).map(|k| -0.1 + k as f64 * h).collect() };
        let lambda = c(0.0, 2.0);
        let r1 = input_lde_residual(lambda, &grid(1e-3));
        let r2 = input_lde_residual(lambda, &grid(5e-4));
        assert!(r1 <= 1e-6);
        assert!(r1 / r2 > 3.5 && r1 / r2 < 4.5);
    }

    #[test]
    fn constant_vector_is_not_a_solution() {
        let gamma = VesselParams::sturm_liouville().gamma;
        let grid: Vec<f64> = (0..5).map(|k| k as f64 * 0.1).collect();
        let u = |_x: f64| mat2(c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
        let r = lde_residual(c(0.0, 0.0), &grid, u, |_| gamma);
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn phi_star_free_potential() {
        let q = QEvaluator::constant(0.0);
        for &(mu, x) in &[(1.0, 0.8), (4.0, -1.1), (0.25, 2.0)] {
            let got = phi_star(&q, mu, x).unwrap();
            assert!(close(&got, &phi(mu, x), 1e-8));
        }
        assert_eq!(phi_star(&q, 1.0, 0.0).unwrap(), CMat2::identity());
    }

    #[test]
    fn phi_star_constant_potential() {
        let cval = 0.4;
        let q = QEvaluator::constant(cval);
        for &(mu, x) in &[(1.0, 1.5), (2.0, -2.0)] {
            let s = sl_solve(&q, mu, x, 0.0, OdeOptions::with_tol(ODE_TOL)).unwrap();
            assert!((s.phi - ((mu - cval).sqrt() * x).cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn output_residual_fixes_beta_sign() {
        let q = QEvaluator::polynomial(vec![0.3, -0.5, 0.2], 5.0);
        assert!(output_lde_residual(&q, 1.7, 1.2, 0.0).unwrap() <= ODE_TOL);
        let flipped = QEvaluator::polynomial(vec![0.3, -0.5, 0.2], 5.0);
        let s = sl_solve(&flipped, 1.7, 1.2, 0.0, OdeOptions::with_tol(ODE_TOL)).unwrap();
        let wrong = SlState { beta: -s.beta, ..s };
        let p = VesselParams::sturm_liouville();
        let qx = flipped.eval(1.2);
        let f = structured(&wrong);
        let h = 1e-5;
        let fd = |x: f64| {
            let t = sl_solve(&flipped, 1.7, x, 0.0, OdeOptions::with_tol(1e-12)).unwrap();
            structured(&SlState { beta: -t.beta, ..t })
        };
        let df = (fd(1.2 + h) - fd(1.2 - h)) / c(2.0 * h, 0.0);
        let r = p.sigma2 * f * c(0.0, 1.7) - p.sigma1 * df + gamma_star_from(qx, wrong.beta) * f;
        assert!(max_abs2(&r) > 1e-3);
    }

    #[test]
    fn wronskian_is_preserved() {
        assert_eq!(wronskian_check(&QEvaluator::constant(0.0), 2.0, 0.0).unwrap(), 0.0);
        let q = QEvaluator::polynomial(vec![0.5, -1.0, 0.3, 0.1], 4.0);
        assert!(wronskian_check(&q, 3.0, 2.5).unwrap() <= 1e-8);
    }

    #[test]
    fn outside_trust_interval_is_rejected() {
        let q = QEvaluator::polynomial(vec![1.0], 1.0);
        assert!(phi_star(&q, 1.0, 2.0).is_err());
    }
}

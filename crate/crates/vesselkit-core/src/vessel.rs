//! The vessel of a finite atomic measure: node construction, evolution of
//! `B`, `C`, `X` in `x` and `t`, recovery of `tau`, `H_0`, `gamma_*`, `q`,
//! transfer functions, and numerical checks of the structural identities.
//!
//! For a measure with atoms `mu_k` and weights `W_k` the node is
//! `A = blockdiag(i mu_k I_2)`, `B_0` = stacked `I_2`, `C_0 = [W_1 ... W_K]`,
//! `X_0 = I`, `A_zeta = -A - B_0 s1 C_0`; it satisfies
//! `A X + X A_zeta + B s1 C = 0` for all `(x, t)`.

use std::sync::Mutex;

use nalgebra::Schur;

use crate::algebra::{
    block, c, mat_exp, max_abs, max_abs2, min_sum_gap, solve_sylvester_kronecker, to_dyn, CMat, CMat2, VesselParams,
    C64, I, KRONECKER_MAX_UNKNOWNS, SEPARATION_TOL,
};
use crate::error::{Error, Result};
use crate::fundsol::{phi, phi_general, phi_star_with_beta0, QEvaluator, QSource};
use crate::ode::{integrate_complex, OdeOptions};
use crate::series::TruncSeries;
use crate::spectrum::SpectralMeasure;

/// Numerical tolerances of the vessel engine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Minimum accepted `|a_i + lambda_j|` for the Sylvester solve.
    pub separation_tol: f64,
    /// `tau_floor = tau_floor_rel * max(1, |X|)`.
    pub tau_floor_rel: f64,
    pub lyap_tol: f64,
    pub inv_tol: f64,
    pub struct_tol: f64,
    pub ode_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            separation_tol: SEPARATION_TOL,
            tau_floor_rel: 1e-10,
            lyap_tol: 1e-9,
            inv_tol: 1e-7,
            struct_tol: 1e-9,
            ode_tol: 1e-10,
        }
    }
}

/// Static node of a measure together with cached spectral data of `A_zeta`.
#[derive(Clone, Debug)]
pub struct VesselData {
    pub meas: SpectralMeasure,
    pub params: VesselParams,
    pub a: CMat,
    pub a_zeta: CMat,
    pub b0: CMat,
    pub c0: CMat,
    pub x0: CMat,
    /// Vectorized generator of the `C` flow in `x` (column-major `vec`).
    pub mx: CMat,
    /// Vectorized generator of the `C` flow in `t`.
    pub mt: CMat,
    /// Eigenvalues of `A_zeta`.
    pub a_zeta_eigs: Vec<C64>,
    /// `min |i mu_k + lambda_j(A_zeta)|`.
    pub gap: f64,
    pub tol: Tolerances,
    schur_zeta: Option<(CMat, CMat)>,
}

fn kron_identity_right(m: &CMat, n: usize) -> CMat {
    m.kronecker(&CMat::identity(n, n))
}

fn kron_identity_left(n: usize, m: &CMat) -> CMat {
    CMat::identity(n, n).kronecker(m)
}

impl VesselData {
    /// Atom locations repeated per block row, i.e. the diagonal of `A`.
    pub fn a_diag(&self) -> Vec<C64> {
        (0..self.a.nrows()).map(|i| self.a[(i, i)]).collect()
    }

    /// Operator dimension `2K`.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Number of atoms `K`.
    pub fn atoms(&self) -> usize {
        self.meas.len()
    }

    /// Schur factors `(Q, T)` of `A_zeta` with `A_zeta = Q T Q^*`.
    pub fn schur_factors(&self) -> Option<&(CMat, CMat)> {
        self.schur_zeta.as_ref()
    }

    /// True when `q` can be extracted (Sturm-Liouville parameters).
    pub fn is_sl(&self) -> bool {
        self.params.is_sturm_liouville()
    }
}

/// Builds the node of `meas` with parameters `params`.
pub fn build_node(meas: &SpectralMeasure, params: &VesselParams) -> Result<VesselData> {
    build_node_with(meas, params, Tolerances::default())
}

/// [`build_node`] with explicit tolerances.
pub fn build_node_with(meas: &SpectralMeasure, params: &VesselParams, tol: Tolerances) -> Result<VesselData> {
    let k = meas.len();
    let n = 2 * k;
    let mut a = CMat::zeros(n, n);
    let mut b0 = CMat::zeros(n, 2);
    let mut c0 = CMat::zeros(2, n);
    for (j, atom) in meas.atoms.iter().enumerate() {
        let z = c(0.0, atom.mu);
        a[(2 * j, 2 * j)] = z;
        a[(2 * j + 1, 2 * j + 1)] = z;
        b0[(2 * j, 0)] = c(1.0, 0.0);
        b0[(2 * j + 1, 1)] = c(1.0, 0.0);
        let w = atom.weight();
        for r in 0..2 {
            for s in 0..2 {
                c0[(r, 2 * j + s)] = w[(r, s)];
            }
        }
    }
    let s1 = to_dyn(&params.sigma1);
    let a_zeta = -&a - &b0 * &s1 * &c0;
    let s1i = to_dyn(&params.sigma1_inv());
    let g = to_dyn(&params.gamma);
    let s2 = to_dyn(&params.sigma2);
    let mx = kron_identity_left(n, &(&s1i * &g)) - a_zeta.transpose().kronecker(&(&s1i * &s2));
    let mt = kron_identity_right(&a_zeta.transpose(), 2) * &mx * c(0.0, -1.0);
    let (a_zeta_eigs, schur_zeta) = if n == 0 {
        (Vec::new(), None)
    } else {
        let (q, t) = Schur::try_new(a_zeta.clone(), f64::EPSILON, 0)
            .ok_or_else(|| Error::Singular("Schur iteration did not converge".into()))?
            .unpack();
        ((0..n).map(|i| t[(i, i)]).collect(), Some((q, t)))
    };
    let a_eigs: Vec<C64> = (0..n).map(|i| a[(i, i)]).collect();
    let gap = min_sum_gap(&a_eigs, &a_zeta_eigs);
    Ok(VesselData {
        meas: meas.clone(),
        params: params.clone(),
        x0: CMat::identity(n, n),
        a,
        a_zeta,
        b0,
        c0,
        mx,
        mt,
        a_zeta_eigs,
        gap,
        tol,
        schur_zeta,
    })
}

/// `A X_0 + X_0 A_zeta + B_0 s1 C_0` (zero by construction).
pub fn node_residual(v: &VesselData) -> f64 {
    let s1 = to_dyn(&v.params.sigma1);
    max_abs(&(&v.a * &v.x0 + &v.x0 * &v.a_zeta + &v.b0 * s1 * &v.c0))
}

/// `S(lambda) = I - sum_k W_k s1 / (lambda - i mu_k)` at `x = 0`.
pub fn transfer_at_origin(meas: &SpectralMeasure, params: &VesselParams, lambda: C64) -> CMat2 {
    let mut s = CMat2::identity();
    for atom in &meas.atoms {
        s -= atom.weight() * params.sigma1 / (lambda - c(0.0, atom.mu));
    }
    s
}

/// One block of `B(x, t)`: `exp(-s (i mu s2 + gamma) s1^{-1})` at `s = x - mu t`.
fn b_block(params: &VesselParams, mu: f64, s: f64) -> CMat2 {
    if params.is_sturm_liouville() {
        phi(mu, s).adjoint()
    } else {
        let m = (params.sigma2 * c(0.0, mu) + params.gamma) * params.sigma1_inv();
        let e = mat_exp(&to_dyn(&m), -s).expect("2x2 exponential");
        block(&e, 0, 0)
    }
}

/// `B(x, t)` with blocks `B_k(x - mu_k t)`.
pub fn evolve_b_xt(v: &VesselData, x: f64, t: f64) -> CMat {
    let mut b = CMat::zeros(v.dim(), 2);
    for (k, atom) in v.meas.atoms.iter().enumerate() {
        let blk = b_block(&v.params, atom.mu, x - atom.mu * t);
        for i in 0..2 {
            for j in 0..2 {
                b[(2 * k + i, j)] = blk[(i, j)];
            }
        }
    }
    b
}

/// `B(x)`; solves `dB/dx = -(A B s2 + B gamma) s1^{-1}` with `B(0) = B_0`.
pub fn evolve_b(v: &VesselData, x: f64) -> CMat {
    evolve_b_xt(v, x, 0.0)
}

/// `C(x, t) = unvec(exp(x M_x + t M_t) vec C_0)`.
pub fn evolve_c_xt(v: &VesselData, x: f64, t: f64) -> Result<CMat> {
    let n = v.dim();
    if n == 0 {
        return Ok(CMat::zeros(2, 0));
    }
    let gen = &v.mx * c(x, 0.0) + &v.mt * c(t, 0.0);
    let e = mat_exp(&gen, 1.0)?;
    let vc = e * nalgebra::DVector::from_column_slice(v.c0.as_slice());
    Ok(CMat::from_column_slice(2, n, vc.as_slice()))
}

/// `C(x)`; solves `dC/dx = s1^{-1}(gamma C - s2 C A_zeta)` with `C(0) = C_0`.
pub fn evolve_c(v: &VesselData, x: f64) -> Result<CMat> {
    evolve_c_xt(v, x, 0.0)
}

/// Solves `A X + X A_zeta = -B s1 C` for `X`.
pub fn solve_x(v: &VesselData, b: &CMat, cm: &CMat) -> Result<CMat> {
    let n = v.dim();
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    if v.gap <= v.tol.separation_tol {
        return Err(Error::SpectraOverlap { gap: v.gap, tol: v.tol.separation_tol });
    }
    let rhs = -(b * to_dyn(&v.params.sigma1) * cm);
    if n * n <= KRONECKER_MAX_UNKNOWNS {
        return solve_sylvester_kronecker(&v.a, &v.a_zeta, &rhs);
    }
    let (q, t) = v.schur_zeta.as_ref().expect("Schur factors exist for n > 0");
    let f = &rhs * q;
    let mut y = CMat::zeros(n, n);
    for k in 0..n {
        let mut col = f.column(k).clone_owned();
        for j in 0..k {
            let tjk = t[(j, k)];
            col -= y.column(j) * tjk;
        }
        let shift = t[(k, k)];
        for i in 0..n {
            y[(i, k)] = col[i] / (v.a[(i, i)] + shift);
        }
    }
    Ok(y * q.adjoint())
}

/// Right-hand side of the `x` flow of `(C, X)` packed column-major.
fn xflow_rhs(v: &VesselData, s: f64, t: f64, y: &[C64], dy: &mut [C64]) {
    let n = v.dim();
    let cm = CMat::from_column_slice(2, n, &y[..2 * n]);
    let b = evolve_b_xt(v, s, t);
    let s1i = to_dyn(&v.params.sigma1_inv());
    let s2 = to_dyn(&v.params.sigma2);
    let g = to_dyn(&v.params.gamma);
    let dc = &s1i * (&g * &cm - &s2 * &cm * &v.a_zeta);
    let dx = &b * &s2 * &cm;
    dy[..2 * n].copy_from_slice(dc.as_slice());
    dy[2 * n..].copy_from_slice(dx.as_slice());
}

/// Right-hand side of the `t` flow of `(C, X)` at fixed `x`.
fn tflow_rhs(v: &VesselData, x: f64, s: f64, y: &[C64], dy: &mut [C64]) {
    let n = v.dim();
    let cm = CMat::from_column_slice(2, n, &y[..2 * n]);
    let b = evolve_b_xt(v, x, s);
    let s1i = to_dyn(&v.params.sigma1_inv());
    let s2 = to_dyn(&v.params.sigma2);
    let g = to_dyn(&v.params.gamma);
    let cx = &s1i * (&g * &cm - &s2 * &cm * &v.a_zeta);
    let dc = &cx * &v.a_zeta * c(0.0, -1.0);
    let dx = (&v.a * &b * &s2 * &cm - &b * &s2 * &cm * &v.a_zeta + &b * &g * &cm) * I;
    dy[..2 * n].copy_from_slice(dc.as_slice());
    dy[2 * n..].copy_from_slice(dx.as_slice());
}

/// `X(x, t)` by integrating `dX/dx = B s2 C` from `(0, 0)` to `(x, 0)` and then
/// `dX/dt = i(A B s2 C - B s2 C A_zeta + B gamma C)` to `(x, t)`, with `C`
/// carried along by its own flows.
pub fn integrate_x_xt(v: &VesselData, x: f64, t: f64, opts: OdeOptions) -> Result<CMat> {
    let n = v.dim();
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    let mut y: Vec<C64> = v.c0.as_slice().to_vec();
    y.extend_from_slice(v.x0.as_slice());
    let y = integrate_complex(|s, y, dy| xflow_rhs(v, s, 0.0, y, dy), 0.0, x, &y, opts)?;
    let y = integrate_complex(|s, y, dy| tflow_rhs(v, x, s, y, dy), 0.0, t, &y, opts)?;
    Ok(CMat::from_column_slice(n, n, &y[2 * n..]))
}

/// `X(x)` by integrating `dX/dx = B s2 C`, `X(0) = I`.
pub fn integrate_x(v: &VesselData, x: f64, opts: OdeOptions) -> Result<CMat> {
    integrate_x_xt(v, x, 0.0, opts)
}

/// Evaluated vessel state at `(x, t)`.
#[derive(Clone, Debug)]
pub struct VesselSnapshot {
    pub x: f64,
    pub t: f64,
    pub b: CMat,
    pub c: CMat,
    pub x_op: CMat,
    /// `C X^{-1}`.
    pub c_xinv: CMat,
    pub tau: C64,
    pub h0: CMat2,
    pub gamma_star: CMat2,
    /// `-2 (i (h21 - h12) - h11^2)`; `None` for non Sturm-Liouville parameters.
    pub q: Option<C64>,
    pub cond_x: f64,
    /// `|A X + X A_zeta + B s1 C|` (max entry).
    pub lyapunov: f64,
    /// True when `X` came from the ODE fallback.
    pub integrated: bool,
}

impl VesselSnapshot {
    /// `q` or `NaN` when unavailable.
    pub fn q_value(&self) -> C64 {
        self.q.unwrap_or(c(f64::NAN, f64::NAN))
    }
}

/// `gamma + s2 H_0 s1 - s1 H_0 s2`.
pub fn linkage(params: &VesselParams, h0: &CMat2) -> CMat2 {
    params.gamma + params.sigma2 * h0 * params.sigma1 - params.sigma1 * h0 * params.sigma2
}

/// `-2 (i (h21 - h12) - h11^2)`.
pub fn potential_from_h0(h0: &CMat2) -> C64 {
    (I * (h0[(1, 0)] - h0[(0, 1)]) - h0[(0, 0)] * h0[(0, 0)]) * -2.0
}

/// Assembles a snapshot from `B`, `C`, `X`.
pub fn snapshot_from_parts(
    v: &VesselData,
    x: f64,
    t: f64,
    b: CMat,
    cm: CMat,
    x_op: CMat,
    integrated: bool,
) -> Result<VesselSnapshot> {
    let n = v.dim();
    let s1 = to_dyn(&v.params.sigma1);
    let lyapunov = if n == 0 { 0.0 } else { max_abs(&(&v.a * &x_op + &x_op * &v.a_zeta + &b * &s1 * &cm)) };
    let lu = x_op.clone().lu();
    let tau = if n == 0 { c(1.0, 0.0) } else { lu.determinant() };
    let xnorm = x_op.norm();
    let floor = v.tol.tau_floor_rel * xnorm.max(1.0);
    if !(tau.norm() > floor) {
        return Err(Error::OmegaBoundary { x, t, tau_abs: tau.norm(), floor });
    }
    let (c_xinv, cond_x) = if n == 0 {
        (CMat::zeros(2, 0), 1.0)
    } else {
        let inv = lu.try_inverse().ok_or_else(|| Error::Singular(format!("X at x={x}, t={t}")))?;
        (&cm * &inv, xnorm * inv.norm())
    };
    let h0m = &c_xinv * &b;
    let h0 = if n == 0 { CMat2::zeros() } else { block(&h0m, 0, 0) };
    let gamma_star = linkage(&v.params, &h0);
    let q = v.is_sl().then(|| potential_from_h0(&h0));
    Ok(VesselSnapshot { x, t, b, c: cm, x_op, c_xinv, tau, h0, gamma_star, q, cond_x, lyapunov, integrated })
}

/// Snapshot at `(x, t)`: Sylvester solve for `X` with ODE fallback when the
/// spectra of `A` and `-A_zeta` are not separated.
pub fn snapshot_xt(v: &VesselData, x: f64, t: f64) -> Result<VesselSnapshot> {
    let b = evolve_b_xt(v, x, t);
    let cm = evolve_c_xt(v, x, t)?;
    let (x_op, integrated) = match solve_x(v, &b, &cm) {
        Ok(m) => (m, false),
        Err(Error::SpectraOverlap { .. }) => {
            (integrate_x_xt(v, x, t, OdeOptions::with_tol(v.tol.ode_tol * 1e-2))?, true)
        }
        Err(e) => return Err(e),
    };
    snapshot_from_parts(v, x, t, b, cm, x_op, integrated)
}

/// Snapshot at `(x, 0)`.
pub fn snapshot(v: &VesselData, x: f64) -> Result<VesselSnapshot> {
    snapshot_xt(v, x, 0.0)
}

/// Snapshots along a sequence of `x` values at `t = 0`. When `A` and
/// `-A_zeta` are not spectrally separated, `(C, X)` is integrated from the
/// previous point (or from the origin when that is closer) rather than from
/// the origin at every call; otherwise this is [`snapshot`].
#[derive(Clone, Debug, Default)]
pub struct XSweep {
    last: Option<(f64, Vec<C64>)>,
}

impl XSweep {
    pub fn snapshot(&mut self, v: &VesselData, x: f64) -> Result<VesselSnapshot> {
        let n = v.dim();
        if n == 0 || v.gap > v.tol.separation_tol {
            return snapshot(v, x);
        }
        let (s0, y0) = match self.last.take() {
            Some((s, y)) if (x - s).abs() < x.abs() => (s, y),
            _ => (0.0, pack(&[&v.c0, &v.x0])),
        };
        let y = integrate_complex(
            |s, y, dy| xflow_rhs(v, s, 0.0, y, dy),
            s0,
            x,
            &y0,
            OdeOptions::with_tol(v.tol.ode_tol * 1e-2),
        )?;
        let cm = CMat::from_column_slice(2, n, &y[..2 * n]);
        let x_op = CMat::from_column_slice(n, n, &y[2 * n..]);
        self.last = Some((x, y));
        snapshot_from_parts(v, x, 0.0, evolve_b(v, x), cm, x_op, true)
    }
}

/// `S(lambda, x) = I - C X^{-1} (lambda I - A)^{-1} B s1`.
pub fn transfer(v: &VesselData, snap: &VesselSnapshot, lambda: C64) -> Result<CMat2> {
    let n = v.dim();
    if n == 0 {
        return Ok(CMat2::identity());
    }
    let mut rb = snap.b.clone();
    for i in 0..n {
        let d = lambda - v.a[(i, i)];
        if d.norm() <= 1e-12 * (1.0 + lambda.norm()) {
            return Err(Error::PoleAtLambda { re: lambda.re, im: lambda.im });
        }
        for j in 0..2 {
            rb[(i, j)] /= d;
        }
    }
    let m = &snap.c_xinv * rb;
    Ok(CMat2::identity() - block(&m, 0, 0) * v.params.sigma1)
}

/// Fundamental matrix of the input equation, `exp(s s1^{-1} (lambda s2 + gamma))`.
pub fn input_fundamental(params: &VesselParams, lambda: C64, s: C64) -> CMat2 {
    if params.is_sturm_liouville() {
        phi_general(lambda, s)
    } else {
        let m = params.sigma1_inv() * (params.sigma2 * lambda + params.gamma) * s;
        block(&mat_exp(&to_dyn(&m), 1.0).expect("2x2 exponential"), 0, 0)
    }
}

/// Uniform grid on `[a, b]` with step close to `h` (at least 3 points).
pub fn uniform_grid(a: f64, b: f64, h: f64) -> Vec<f64> {
    let n = (((b - a) / h).round() as usize).max(2);
    (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
}

/// Central-difference residuals of the output equation
/// `lambda s2 y - s1 y' + gamma_*(x) y` for `y = S(lambda, x) u(lambda, x)`;
/// entry `k` belongs to the interior point `x_grid[k + 1]`.
pub fn backlund_residuals(v: &VesselData, x_grid: &[f64], lambda: C64) -> Result<Vec<CMat2>> {
    let mut ys = Vec::with_capacity(x_grid.len());
    let mut gs = Vec::with_capacity(x_grid.len());
    let mut sweep = XSweep::default();
    for &x in x_grid {
        let snap = sweep.snapshot(v, x)?;
        let s = transfer(v, &snap, lambda)?;
        ys.push(s * input_fundamental(&v.params, lambda, c(x, 0.0)));
        gs.push(snap.gamma_star);
    }
    Ok((1..x_grid.len().saturating_sub(1))
        .map(|i| {
            let dy = (ys[i + 1] - ys[i - 1]) / c(x_grid[i + 1] - x_grid[i - 1], 0.0);
            v.params.sigma2 * ys[i] * lambda - v.params.sigma1 * dy + gs[i] * ys[i]
        })
        .collect())
}

/// Largest entry of [`backlund_residuals`].
pub fn backlund_check(v: &VesselData, x_grid: &[f64], lambda: C64) -> Result<f64> {
    Ok(backlund_residuals(v, x_grid, lambda)?.iter().fold(0.0, |a, r| a.max(max_abs2(r))))
}

/// Maximum residuals of a second-order difference scheme at steps `h` and
/// `h/2`, and of the pointwise extrapolation `(4 r(h/2) - r(h)) / 3`, which
/// cancels the `h^2` truncation term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Richardson {
    pub coarse: f64,
    pub fine: f64,
    pub extrapolated: f64,
}

impl Richardson {
    /// `log2(coarse / fine)`.
    pub fn order(&self) -> f64 {
        (self.coarse / self.fine).log2()
    }
}

/// Backlund residuals on `[lo, hi]` at step `h` and `h/2`; the coarse grid
/// points are every other fine grid point.
pub fn backlund_richardson(v: &VesselData, lo: f64, hi: f64, h: f64, lambda: C64) -> Result<Richardson> {
    let n = (((hi - lo) / h).round() as usize).max(2);
    let grid = |m: usize| (0..=m).map(|k| lo + (hi - lo) * k as f64 / m as f64).collect::<Vec<f64>>();
    let coarse = backlund_residuals(v, &grid(n), lambda)?;
    let fine = backlund_residuals(v, &grid(2 * n), lambda)?;
    let peak = |rs: &[CMat2]| rs.iter().fold(0.0_f64, |a, r| a.max(max_abs2(r)));
    let extrapolated = coarse
        .iter()
        .enumerate()
        .map(|(k, rc)| max_abs2(&((fine[2 * k + 1] * c(4.0, 0.0) - rc) / c(3.0, 0.0))))
        .fold(0.0, f64::max);
    Ok(Richardson { coarse: peak(&coarse), fine: peak(&fine), extrapolated })
}

/// Real potential evaluator backed by vessel snapshots.
pub fn vessel_potential(v: &VesselData, radius: f64) -> QEvaluator {
    let vc = v.clone();
    let sweep = Mutex::new(XSweep::default());
    QEvaluator::new(
        move |x| {
            let mut sweep = sweep.lock().unwrap_or_else(|e| e.into_inner());
            sweep.snapshot(&vc, x).map(|s| s.q_value().re).unwrap_or(f64::NAN)
        },
        -radius,
        radius,
        QSource::Closure,
    )
}

/// `beta(0) = -H_0^{11}(0)` of the vessel.
pub fn beta_at_origin(v: &VesselData) -> f64 {
    -v.meas.atoms.iter().map(|a| a.w11).sum::<f64>()
}

/// `|S(lambda, x) - Phi_*(lambda, x) S(lambda, 0) Phi(lambda, x)^{-1}|` at
/// `lambda = i mu`, with `Phi_*` integrated from the recovered potential.
pub fn intertwine_check(v: &VesselData, x: f64, mu: f64) -> Result<f64> {
    if !v.is_sl() {
        return Err(Error::Unsupported("intertwining requires Sturm-Liouville parameters".into()));
    }
    let lambda = c(0.0, mu);
    let s0 = transfer(v, &snapshot(v, 0.0)?, lambda)?;
    let sx = transfer(v, &snapshot(v, x)?, lambda)?;
    if x == 0.0 {
        return Ok(max_abs2(&(sx - s0)));
    }
    let q = vessel_potential(v, x.abs());
    let ps = phi_star_with_beta0(&q, mu, x, beta_at_origin(v))?;
    let p_inv = phi(mu, x).try_inverse().ok_or_else(|| Error::Singular("input fundamental matrix".into()))?;
    Ok(max_abs2(&(sx - ps * s0 * p_inv)))
}

/// `H_n = C X^{-1} A^n B` at a snapshot.
pub fn vessel_moments(v: &VesselData, snap: &VesselSnapshot, n: usize) -> CMat2 {
    if v.dim() == 0 {
        return CMat2::zeros();
    }
    let mut ab = snap.b.clone();
    for _ in 0..n {
        ab = &v.a * ab;
    }
    block(&(&snap.c_xinv * ab), 0, 0)
}

/// `H_n(x) = sum_k Phi_*(i mu_k, x) W_k (i mu_k)^n Phi(i mu_k, x)^*` with
/// `Phi_*` integrated from the recovered potential.
pub fn vessel_moments_fundsol(v: &VesselData, x: f64, n: usize) -> Result<CMat2> {
    if !v.is_sl() {
        return Err(Error::Unsupported("requires Sturm-Liouville parameters".into()));
    }
    let q = vessel_potential(v, x.abs());
    let beta0 = beta_at_origin(v);
    let mut h = CMat2::zeros();
    for atom in &v.meas.atoms {
        let ps = phi_star_with_beta0(&q, atom.mu, x, beta0)?;
        let z = c(0.0, atom.mu).powu(n as u32);
        h += ps * atom.weight() * z * phi(atom.mu, x).adjoint();
    }
    Ok(h)
}

/// Operators of the inverse vessel at `(x, t)`.
#[derive(Clone, Debug)]
pub struct InverseVesselSnapshot {
    pub x: f64,
    pub t: f64,
    pub bstar: CMat,
    pub cstar: CMat,
    pub xstar: CMat,
}

/// Residuals of the inverse-vessel identities against the forward snapshot.
#[derive(Clone, Copy, Debug, Default)]
pub struct InverseChecks {
    /// `|X X_* - I|` (Frobenius).
    pub right_inverse: f64,
    /// `|X_* X - I|` (Frobenius).
    pub left_inverse: f64,
    /// `|C_* X - C|`.
    pub c_identity: f64,
    /// `|X_* B - B_*|`.
    pub b_identity: f64,
    /// `|C_* B - H_0|`.
    pub moment_identity: f64,
    /// `|X_* A + A_zeta X_* + B_* s1 C_*|`.
    pub lyapunov: f64,
}

impl InverseChecks {
    /// Largest of all residuals.
    pub fn max(&self) -> f64 {
        [self.right_inverse, self.left_inverse, self.c_identity, self.b_identity, self.moment_identity, self.lyapunov]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn pack(parts: &[&CMat]) -> Vec<C64> {
    parts.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

fn unpack(v: &VesselData, y: &[C64]) -> (CMat, CMat, CMat) {
    let n = v.dim();
    let bstar = CMat::from_column_slice(n, 2, &y[..2 * n]);
    let cstar = CMat::from_column_slice(2, n, &y[2 * n..4 * n]);
    let xstar = CMat::from_column_slice(n, n, &y[4 * n..4 * n + n * n]);
    (bstar, cstar, xstar)
}

/// Forward snapshot for the inverse path: from the carried `(C, X)` state when
/// present, otherwise from the Sylvester solve.
fn path_snapshot(v: &VesselData, x: f64, t: f64, carried: Option<&[C64]>) -> Result<VesselSnapshot> {
    let Some(y) = carried else { return snapshot_xt(v, x, t) };
    let n = v.dim();
    let cm = CMat::from_column_slice(2, n, &y[..2 * n]);
    let x_op = CMat::from_column_slice(n, n, &y[2 * n..]);
    snapshot_from_parts(v, x, t, evolve_b_xt(v, x, t), cm, x_op, true)
}

struct InverseRates {
    bx: CMat,
    cx: CMat,
    xx: CMat,
}

fn inverse_x_rates(v: &VesselData, gs: &CMat2, bstar: &CMat, cstar: &CMat) -> InverseRates {
    let s1i = to_dyn(&v.params.sigma1_inv());
    let s2 = to_dyn(&v.params.sigma2);
    let g = to_dyn(gs);
    InverseRates {
        bx: (&v.a_zeta * bstar * &s2 - bstar * &g) * &s1i,
        cx: &s1i * (&g * cstar + &s2 * cstar * &v.a),
        xx: -(bstar * &s2 * cstar),
    }
}

/// Integrates the inverse vessel along `x` from `(0, 0)` to `(x, 0)`:
/// `B_*' = (A_zeta B_* s2 - B_* gamma_*) s1^{-1}`,
/// `C_*' = s1^{-1} (gamma_* C_* + s2 C_* A)`, `X_*' = -B_* s2 C_*`,
/// with `gamma_*` taken from forward snapshots.
pub fn inverse_vessel(v: &VesselData, x: f64) -> Result<InverseVesselSnapshot> {
    inverse_vessel_path(v, x, 0.0, OdeOptions::with_tol(1e-12))
}

/// Inverse vessel along the path `(0,0) -> (x,0) -> (x,t)`; the `t` leg uses
/// `B_*_t = -i A_zeta B_*_x - i B_* s1 (H_0)_x`,
/// `C_*_t = i C_*_x A + i (H_0)_x s1 C_*`,
/// `X_*_t = i (A_zeta B_* s2 C_* - B_* s2 C_* A - B_* gamma_* C_*)`.
pub fn inverse_vessel_path(v: &VesselData, x: f64, t: f64, opts: OdeOptions) -> Result<InverseVesselSnapshot> {
    let n = v.dim();
    if n == 0 {
        return Ok(InverseVesselSnapshot {
            x,
            t,
            bstar: CMat::zeros(0, 2),
            cstar: CMat::zeros(2, 0),
            xstar: CMat::zeros(0, 0),
        });
    }
    // Without spectral separation every snapshot would integrate X from the
    // origin; (C, X) then ride along with the inverse state instead.
    let carry = v.gap <= v.tol.separation_tol;
    let head = 4 * n + n * n;
    let mut y0 = pack(&[&v.b0, &v.c0, &v.x0]);
    if carry {
        y0.extend(pack(&[&v.c0, &v.x0]));
    }
    let mut failure: Option<Error> = None;
    let y = integrate_complex(
        |s, y, dy| {
            let (yh, yt) = y.split_at(head);
            match path_snapshot(v, s, 0.0, carry.then_some(yt)) {
                Ok(snap) => {
                    let (bs, cs, _) = unpack(v, yh);
                    let r = inverse_x_rates(v, &snap.gamma_star, &bs, &cs);
                    let (dh, dt) = dy.split_at_mut(head);
                    dh.copy_from_slice(&pack(&[&r.bx, &r.cx, &r.xx]));
                    if carry {
                        xflow_rhs(v, s, 0.0, yt, dt);
                    }
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    dy.iter_mut().for_each(|d| *d = c(f64::NAN, f64::NAN));
                }
            }
        },
        0.0,
        x,
        &y0,
        opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let y = y?;
    let mut failure: Option<Error> = None;
    let y = integrate_complex(
        |s, y, dy| {
            let (yh, yt) = y.split_at(head);
            match path_snapshot(v, x, s, carry.then_some(yt)) {
                Ok(snap) => {
                    let (bs, cs, _) = unpack(v, yh);
                    let r = inverse_x_rates(v, &snap.gamma_star, &bs, &cs);
                    let h0x = h0_x_derivative(v, &snap);
                    let s1 = to_dyn(&v.params.sigma1);
                    let s2 = to_dyn(&v.params.sigma2);
                    let hx = to_dyn(&h0x);
                    let gs = to_dyn(&snap.gamma_star);
                    let bt = (&v.a_zeta * &r.bx + &bs * &s1 * &hx) * c(0.0, -1.0);
                    let ct = (&r.cx * &v.a + &hx * &s1 * &cs) * I;
                    let xt = (&v.a_zeta * &bs * &s2 * &cs - &bs * &s2 * &cs * &v.a - &bs * &gs * &cs) * I;
                    let (dh, dt) = dy.split_at_mut(head);
                    dh.copy_from_slice(&pack(&[&bt, &ct, &xt]));
                    if carry {
                        tflow_rhs(v, x, s, yt, dt);
                    }
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    dy.iter_mut().for_each(|d| *d = c(f64::NAN, f64::NAN));
                }
            }
        },
        0.0,
        t,
        &y,
        opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let (bstar, cstar, xstar) = unpack(v, &y?);
    Ok(InverseVesselSnapshot { x, t, bstar, cstar, xstar })
}

/// `(H_0)_x = s1^{-1} s2 H_1 - H_1 s2 s1^{-1} + s1^{-1} gamma_* H_0 - H_0 gamma s1^{-1}`.
pub fn h0_x_derivative(v: &VesselData, snap: &VesselSnapshot) -> CMat2 {
    let p = &v.params;
    let s1i = p.sigma1_inv();
    let h1 = vessel_moments(v, snap, 1);
    s1i * p.sigma2 * h1 - h1 * p.sigma2 * s1i + s1i * snap.gamma_star * snap.h0 - snap.h0 * p.gamma * s1i
}

/// Residuals of the inverse-vessel identities at the snapshot's point.
pub fn inverse_checks(v: &VesselData, snap: &VesselSnapshot, inv: &InverseVesselSnapshot) -> InverseChecks {
    let n = v.dim();
    if n == 0 {
        return InverseChecks::default();
    }
    let id = CMat::identity(n, n);
    let s1 = to_dyn(&v.params.sigma1);
    InverseChecks {
        right_inverse: (&snap.x_op * &inv.xstar - &id).norm(),
        left_inverse: (&inv.xstar * &snap.x_op - &id).norm(),
        c_identity: (&inv.cstar * &snap.x_op - &snap.c).norm(),
        b_identity: (&inv.xstar * &snap.b - &inv.bstar).norm(),
        moment_identity: (&inv.cstar * &snap.b - to_dyn(&snap.h0)).norm(),
        lyapunov: (&inv.xstar * &v.a + &v.a_zeta * &inv.xstar + &inv.bstar * &s1 * &inv.cstar).norm(),
    }
}

/// Taylor coefficients at `x = 0` of the potential `q_V` of the vessel,
/// through order `order`, from the power-series solution of the `B`, `C`,
/// `X` equations.
pub fn potential_series(v: &VesselData, order: usize) -> Result<TruncSeries> {
    if !v.is_sl() {
        return Err(Error::Unsupported("q requires Sturm-Liouville parameters".into()));
    }
    let n = v.dim();
    if n == 0 {
        return Ok(TruncSeries::zeros(order));
    }
    let s1i = to_dyn(&v.params.sigma1_inv());
    let s2 = to_dyn(&v.params.sigma2);
    let g = to_dyn(&v.params.gamma);
    let mut bs = vec![v.b0.clone()];
    let mut cs = vec![v.c0.clone()];
    let mut xs = vec![v.x0.clone()];
    for k in 0..order {
        let kk = c(1.0 / (k as f64 + 1.0), 0.0);
        let bk = -(&v.a * &bs[k] * &s2 + &bs[k] * &g) * &s1i * kk;
        let ck = &s1i * (&g * &cs[k] - &s2 * &cs[k] * &v.a_zeta) * kk;
        let mut xk = CMat::zeros(n, n);
        for j in 0..=k {
            xk += &bs[j] * &s2 * &cs[k - j];
        }
        bs.push(bk);
        cs.push(ck);
        xs.push(xk * kk);
    }
    let mut ys: Vec<CMat> = vec![CMat::identity(n, n)];
    for k in 1..=order {
        let mut yk = CMat::zeros(n, n);
        for j in 1..=k {
            yk -= &xs[j] * &ys[k - j];
        }
        ys.push(yk);
    }
    let cy: Vec<CMat> =
        (0..=order).map(|m| (0..=m).fold(CMat::zeros(2, n), |acc, i| acc + &cs[i] * &ys[m - i])).collect();
    let h: Vec<CMat2> = (0..=order)
        .map(|k| {
            let m = (0..=k).fold(CMat::zeros(2, 2), |acc, j| acc + &cy[j] * &bs[k - j]);
            block(&m, 0, 0)
        })
        .collect();
    let entry = |i: usize, j: usize| TruncSeries::new(h.iter().map(|m| m[(i, j)]).collect());
    let (h11, h12, h21) = (entry(0, 0), entry(0, 1), entry(1, 0));
    let inner = &(&h21 - &h12).scale(I) - &(&h11 * &h11);
    Ok(inner.scale(c(-2.0, 0.0)))
}

/// Writes block `k` of a tall operator.
pub fn set_tall_block(m: &mut CMat, k: usize, b: &CMat2) {
    for i in 0..2 {
        for j in 0..2 {
            m[(2 * k + i, j)] = b[(i, j)];
        }
    }
}

/// Reads block `k` of a tall operator.
pub fn tall_block(m: &CMat, k: usize) -> CMat2 {
    CMat2::from_fn(|i, j| m[(2 * k + i, j)])
}

/// Reads block `k` of a wide operator.
pub fn wide_block(m: &CMat, k: usize) -> CMat2 {
    CMat2::from_fn(|i, j| m[(i, 2 * k + j)])
}

//! Time evolution of the vessel: `B(x, t)`, `C(x, t)`, `X(x, t)`, the
//! `tau(x, t)` field, recovery of `q(x, t)`, KdV residuals, the region of
//! invertibility and the evolved inverse vessel.
//!
//! The recovered field solves `q_t + (3/2) q q_x - (1/4) q_xxx = 0` inside the
//! set where `tau = det X` does not vanish.

use rayon::prelude::*;

use crate::algebra::{c, max_abs2, to_dyn, CMat, CMat2, C64, I};
use crate::dd::{cosh_sinhc, dd, dd_sin_cos, dd_sqrt, Dd, DdC, DdLu, DdMat};
use crate::error::{Error, Result};
use crate::ode::OdeOptions;
use crate::vessel::{
    evolve_b_xt, evolve_c_xt, h0_x_derivative, integrate_x_xt, inverse_vessel_path, snapshot_xt, solve_x, transfer,
    vessel_moments, InverseVesselSnapshot, VesselData,
};

/// Largest accepted condition number of the eigenvector matrix of `A_zeta`
/// for the diagonalized field evaluator.
pub const EIGEN_COND_MAX: f64 = 1e8;

/// Rows of the time grid processed per parallel task in streamed residuals.
pub const ROW_CHUNK: usize = 32;

/// Below this modulus of `sqrt(-i lambda)` the hyperbolic factors use their series.
const SMALL_ROOT: f64 = 1e-3;

/// `B(x, t)`; block `k` is `B_k(x - mu_k t)`.
pub fn evolve_b_t(v: &VesselData, x: f64, t: f64) -> CMat {
    evolve_b_xt(v, x, t)
}

/// `C(x, t) = unvec(exp(x M_x + t M_t) vec C_0)`.
pub fn evolve_c_t(v: &VesselData, x: f64, t: f64) -> Result<CMat> {
    evolve_c_xt(v, x, t)
}

/// `C(x, t)` as `exp(t M_t) exp(x M_x) vec C_0`.
pub fn evolve_c_two_stage(v: &VesselData, x: f64, t: f64) -> Result<CMat> {
    let n = v.dim();
    if n == 0 {
        return Ok(CMat::zeros(2, 0));
    }
    let ex = crate::algebra::mat_exp(&v.mx, x)?;
    let et = crate::algebra::mat_exp(&v.mt, t)?;
    let vc = et * ex * nalgebra::DVector::from_column_slice(v.c0.as_slice());
    Ok(CMat::from_column_slice(2, n, vc.as_slice()))
}

/// `|M_x M_t - M_t M_x| / (|M_x| |M_t|)` (Frobenius norms; 0 for trivial generators).
pub fn generator_commutator(v: &VesselData) -> f64 {
    let scale = v.mx.norm() * v.mt.norm();
    if scale == 0.0 {
        return 0.0;
    }
    (&v.mx * &v.mt - &v.mt * &v.mx).norm() / scale
}

/// `X(x, t)` from the Lyapunov equation.
pub fn solve_x_t(v: &VesselData, b: &CMat, cm: &CMat) -> Result<CMat> {
    solve_x(v, b, cm)
}

/// `X(x, t)` by integrating the `x` flow and then the `t` flow.
pub fn integrate_x_t(v: &VesselData, x: f64, t: f64) -> Result<CMat> {
    integrate_x_xt(v, x, t, OdeOptions::with_tol(v.tol.ode_tol * 1e-2))
}

/// `dX/dt = i (A B s2 C - B s2 C A_zeta + B gamma C)` evaluated from `B`, `C`.
pub fn x_t_rate(v: &VesselData, b: &CMat, cm: &CMat) -> CMat {
    let s2 = to_dyn(&v.params.sigma2);
    let g = to_dyn(&v.params.gamma);
    (&v.a * b * &s2 * cm - b * &s2 * cm * &v.a_zeta + b * &g * cm) * I
}

/// Diagonalized evaluator: with `A_zeta = V diag(lambda) V^{-1}` and `D = C V`,
/// column `j` of `D` is `Phi(-lambda_j, x - i lambda_j t) D_j(0)`, `Y = X V` has
/// entries `-(B s1 D)_{ij} / (a_i + lambda_j)`, `tau = det Y / det V` and
/// `H_0 = D Y^{-1} B`. The evaluation after setup runs in double-double
/// arithmetic, treating the double-precision setup data as exact.
#[derive(Clone, Debug)]
pub struct EigenEvaluator {
    pub lambdas: Vec<C64>,
    pub vecs: CMat,
    pub vecs_inv: CMat,
    pub det_vecs: C64,
    pub d0: CMat,
    pub cond: f64,
    lam_dd: Vec<DdC>,
    w_dd: Vec<DdC>,
    d0_dd: Vec<[DdC; 2]>,
    denom_inv_dd: DdMat,
    mus: Vec<f64>,
    roots: Vec<Dd>,
    det_vecs_dd: DdC,
}

/// Evaluation of the diagonalized field at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenPoint {
    pub tau: C64,
    pub h0: CMat2,
    /// `q` to double-double precision as leading and trailing parts.
    pub q_hi: C64,
    pub q_lo: C64,
    pub x_norm: f64,
}

impl EigenEvaluator {
    /// Builds the evaluator; `None` for non Sturm-Liouville parameters,
    /// repeated eigenvalues, an ill-conditioned eigenbasis or overlapping spectra.
    pub fn new(v: &VesselData) -> Option<Self> {
        let n = v.dim();
        if n == 0 || !v.is_sl() || v.gap <= v.tol.separation_tol {
            return None;
        }
        let (q, t) = v.schur_factors()?;
        let scale = t.norm().max(1.0);
        let mut y = CMat::zeros(n, n);
        for j in 0..n {
            y[(j, j)] = c(1.0, 0.0);
            for i in (0..j).rev() {
                let d = t[(i, i)] - t[(j, j)];
                if d.norm() <= 1e-10 * scale {
                    return None;
                }
                let s: C64 = ((i + 1)..=j).map(|l| t[(i, l)] * y[(l, j)]).sum();
                y[(i, j)] = -s / d;
            }
        }
        let mut vecs = q * y;
        for j in 0..n {
            let nrm = vecs.column(j).norm();
            vecs.column_mut(j).unscale_mut(nrm);
        }
        let lu = vecs.clone().lu();
        let det_vecs = lu.determinant();
        let vecs_inv = lu.try_inverse()?;
        let cond = vecs.norm() * vecs_inv.norm();
        if !(cond < EIGEN_COND_MAX) {
            return None;
        }
        let lambdas: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
        let d0 = &v.c0 * &vecs;
        let lam_dd: Vec<DdC> = lambdas.iter().map(|&l| DdC::from_c64(l)).collect();
        let w_dd = lam_dd.iter().map(|&l| (-(DdC::i() * l)).sqrt()).collect();
        let d0_dd = (0..n).map(|j| [DdC::from_c64(d0[(0, j)]), DdC::from_c64(d0[(1, j)])]).collect();
        let mut denom_inv_dd = DdMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                denom_inv_dd.set(i, j, DdC::one() / (DdC::from_c64(v.a[(i, i)]) + lam_dd[j]));
            }
        }
        let mus: Vec<f64> = v.meas.atoms.iter().map(|a| a.mu).collect();
        let roots = mus.iter().map(|&m| dd_sqrt(dd(m))).collect();
        let mut vd = DdMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                vd.set(i, j, DdC::from_c64(vecs[(i, j)]));
            }
        }
        let det_vecs_dd = DdLu::new(vd).determinant();
        Some(Self {
            lambdas,
            vecs,
            vecs_inv,
            det_vecs,
            d0,
            cond,
            lam_dd,
            w_dd,
            d0_dd,
            denom_inv_dd,
            mus,
            roots,
            det_vecs_dd,
        })
    }

    /// Factors of the field depending on `x` alone.
    pub fn column_factors(&self, x: Dd) -> ColumnFactors {
        let xs = DdC::new(x, dd(0.0));
        let (ex, ex_inv) = self.w_dd.iter().map(|&w| ((xs * w).exp(), (-(xs * w)).exp())).unzip();
        let trig = self.mus.iter().zip(&self.roots).map(|(_, &r)| dd_sin_cos(r * x)).collect();
        ColumnFactors { x, ex, ex_inv, trig }
    }

    /// Factors of the field depending on `t` alone.
    pub fn row_factors(&self, t: Dd) -> RowFactors {
        let ts = DdC::new(t, dd(0.0));
        let (et, et_inv) = self
            .lam_dd
            .iter()
            .zip(&self.w_dd)
            .map(|(&l, &w)| {
                let z = -(DdC::i() * l * ts * w);
                (z.exp(), (-z).exp())
            })
            .unzip();
        let trig = self.mus.iter().zip(&self.roots).map(|(&mu, &r)| dd_sin_cos(r * t * mu)).collect();
        RowFactors { t, et, et_inv, trig }
    }

    fn b_dd(&self, col: &ColumnFactors, row: &RowFactors) -> DdMat {
        let k = self.mus.len();
        let mut b = DdMat::zeros(2 * k, 2);
        let zero = dd(0.0);
        for (j, (&mu, &r)) in self.mus.iter().zip(&self.roots).enumerate() {
            let (c11, c12, c21) = if mu == 0.0 {
                (DdC::one(), DdC::zero(), DdC::new(zero, -(col.x - row.t * mu)))
            } else {
                // Angle subtraction for sin and cos of r (x - mu t).
                let ((sx, cx), (st, ct)) = (col.trig[j], row.trig[j]);
                let sn = sx * ct - cx * st;
                let cs = cx * ct + sx * st;
                (DdC::new(cs, zero), DdC::new(zero, -(r * sn)), DdC::new(zero, -(sn / r)))
            };
            b.set(2 * j, 0, c11);
            b.set(2 * j, 1, c12);
            b.set(2 * j + 1, 0, c21);
            b.set(2 * j + 1, 1, c11);
        }
        b
    }

    /// `tau`, `H_0`, `q` and `|X|` at `(x, t)`.
    pub fn eval(&self, v: &VesselData, x: f64, t: f64) -> Result<EigenPoint> {
        self.eval_dd(v, dd(x), dd(t))
    }

    /// [`EigenEvaluator::eval`] at double-double coordinates.
    pub fn eval_dd(&self, v: &VesselData, x: Dd, t: Dd) -> Result<EigenPoint> {
        self.eval_factored(v, &self.column_factors(x), &self.row_factors(t))
    }

    /// [`EigenEvaluator::eval`] from precomputed column and row factors.
    pub fn eval_factored(&self, v: &VesselData, col: &ColumnFactors, row: &RowFactors) -> Result<EigenPoint> {
        let n = v.dim();
        let (x, t) = (col.x, row.t);
        let b = self.b_dd(col, row);
        let mut d = DdMat::zeros(2, n);
        for j in 0..n {
            let lam = self.lam_dd[j];
            let w = self.w_dd[j];
            // cosh(s w) and sinh(s w) / w with s = x - i lambda t.
            let factored = (w.abs() >= SMALL_ROOT).then(|| {
                let e = col.ex[j] * row.et[j];
                let e_inv = col.ex_inv[j] * row.et_inv[j];
                ((e + e_inv).scale(0.5), (e - e_inv) / w.scale(2.0))
            });
            let (ch, shc) = match factored {
                Some((ch, shc)) if is_finite(ch) && is_finite(shc) => (ch, shc),
                _ => {
                    let s = DdC::new(x, dd(0.0)) - DdC::i() * lam * DdC::new(t, dd(0.0));
                    cosh_sinhc(s, w)
                }
            };
            let [u0, u1] = self.d0_dd[j];
            // Phi(-lambda, s) = [[ch, i shc], [-lambda shc, ch]].
            d.set(0, j, ch * u0 + DdC::i() * shc * u1);
            d.set(1, j, -(lam * shc * u0) + ch * u1);
        }
        // Y_ij = -(B s1 D)_ij / (a_i + lambda_j); B s1 swaps the columns of B.
        let mut y = DdMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let bsd = b.get(i, 1) * d.get(0, j) + b.get(i, 0) * d.get(1, j);
                y.set(i, j, -(bsd * self.denom_inv_dd.get(i, j)));
            }
        }
        let yhi = CMat::from_fn(n, n, |i, j| y.get(i, j).hi());
        let x_norm = (&yhi * &self.vecs_inv).norm();
        let lu = DdLu::new(y);
        let tau_dd = lu.determinant() / self.det_vecs_dd;
        let tau = tau_dd.to_c64();
        let floor = v.tol.tau_floor_rel * x_norm.max(1.0);
        if !(tau.norm() > floor) {
            return Err(Error::OmegaBoundary { x: x.hi(), t: t.hi(), tau_abs: tau.norm(), floor });
        }
        let yb = lu.solve(&b).ok_or_else(|| Error::Singular(format!("X at x={}, t={}", x.hi(), t.hi())))?;
        let h = d.mul(&yb);
        let (h11, h12, h21) = (h.get(0, 0), h.get(0, 1), h.get(1, 0));
        let q = (DdC::i() * (h21 - h12) - h11 * h11).scale(-2.0);
        let h0 = CMat2::new(h11.to_c64(), h12.to_c64(), h21.to_c64(), h.get(1, 1).to_c64());
        Ok(EigenPoint { tau, h0, q_hi: q.hi(), q_lo: q.lo(), x_norm })
    }
}

fn is_finite(z: DdC) -> bool {
    let h = z.hi();
    h.re.is_finite() && h.im.is_finite()
}

/// `x`-dependent factors of the diagonalized field.
#[derive(Clone, Debug)]
pub struct ColumnFactors {
    x: Dd,
    ex: Vec<DdC>,
    ex_inv: Vec<DdC>,
    trig: Vec<(Dd, Dd)>,
}

/// `t`-dependent factors of the diagonalized field.
#[derive(Clone, Debug)]
pub struct RowFactors {
    t: Dd,
    et: Vec<DdC>,
    et_inv: Vec<DdC>,
    trig: Vec<(Dd, Dd)>,
}

/// Value of the field at one grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldPoint {
    pub tau: C64,
    /// `NaN` outside the invertibility region.
    pub q: C64,
    /// Trailing double-double part of `q` (zero when unavailable).
    pub q_lo: C64,
    pub in_omega: bool,
}

impl FieldPoint {
    fn q_dd(&self) -> DdC {
        DdC::from_c64(self.q) + DdC::from_c64(self.q_lo)
    }
}

const NAN_C: C64 = C64 { re: f64::NAN, im: f64::NAN };

/// Field evaluator choosing the diagonalized path when available and
/// Sylvester snapshots otherwise.
#[derive(Clone, Debug)]
pub struct FieldEvaluator<'a> {
    pub vessel: &'a VesselData,
    pub eigen: Option<EigenEvaluator>,
}

impl<'a> FieldEvaluator<'a> {
    pub fn new(v: &'a VesselData) -> Self {
        Self { vessel: v, eigen: EigenEvaluator::new(v) }
    }

    /// Evaluator restricted to Sylvester snapshots.
    pub fn sylvester_only(v: &'a VesselData) -> Self {
        Self { vessel: v, eigen: None }
    }

    /// `tau`, `q` and membership in the invertibility region at `(x, t)`.
    pub fn point(&self, x: f64, t: f64) -> Result<FieldPoint> {
        self.point_dd(dd(x), dd(t))
    }

    /// [`FieldEvaluator::point`] at double-double coordinates; the Sylvester
    /// path uses their leading parts.
    pub fn point_dd(&self, x: Dd, t: Dd) -> Result<FieldPoint> {
        let f = self.eigen.as_ref().map(|e| (e.column_factors(x), e.row_factors(t)));
        self.point_with(x, t, f.as_ref().map(|(c, r)| (c, r)))
    }

    fn point_with(&self, x: Dd, t: Dd, factors: Option<(&ColumnFactors, &RowFactors)>) -> Result<FieldPoint> {
        let v = self.vessel;
        let zero = c(0.0, 0.0);
        if v.dim() == 0 {
            let q = if v.is_sl() { zero } else { NAN_C };
            return Ok(FieldPoint { tau: c(1.0, 0.0), q, q_lo: zero, in_omega: true });
        }
        let res = match (&self.eigen, factors) {
            (Some(e), Some((col, row))) => e.eval_factored(v, col, row).map(|p| (p.tau, p.q_hi, p.q_lo)),
            _ => snapshot_xt(v, x.hi(), t.hi()).map(|s| (s.tau, s.q_value(), zero)),
        };
        match res {
            Ok((tau, q, q_lo)) => Ok(FieldPoint { tau, q, q_lo, in_omega: true }),
            Err(Error::OmegaBoundary { .. }) => {
                let tau = unfloored_tau(self.eigen.as_ref(), v, x, t);
                Ok(FieldPoint { tau, q: NAN_C, q_lo: zero, in_omega: false })
            }
            Err(e) => Err(e),
        }
    }

    /// Double-double coordinates of `x_grid` with their cached column factors.
    pub fn prepare_axis(&self, x_grid: &[f64]) -> PreparedAxis {
        let xs = dd_grid(x_grid);
        let cols = self.eigen.as_ref().map(|e| xs.iter().map(|&x| e.column_factors(x)).collect());
        PreparedAxis { xs, cols }
    }

    /// Values along a prepared `x` axis at time `t`.
    pub fn row(&self, axis: &PreparedAxis, t: Dd) -> Result<Vec<FieldPoint>> {
        let row = self.eigen.as_ref().map(|e| e.row_factors(t));
        axis.xs
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let f = match (&axis.cols, &row) {
                    (Some(cols), Some(r)) => Some((&cols[k], r)),
                    _ => None,
                };
                self.point_with(x, t, f)
            })
            .collect()
    }
}

/// `x` grid in double-double with the column factors of the diagonalized evaluator.
#[derive(Clone, Debug)]
pub struct PreparedAxis {
    pub xs: Vec<Dd>,
    cols: Option<Vec<ColumnFactors>>,
}

fn unfloored_tau(e: Option<&EigenEvaluator>, v: &VesselData, x: Dd, t: Dd) -> C64 {
    let mut vv = v.clone();
    vv.tol.tau_floor_rel = 0.0;
    let tau = match e {
        Some(e) => e.eval_dd(&vv, x, t).map(|r| r.tau),
        None => snapshot_xt(&vv, x.hi(), t.hi()).map(|s| s.tau),
    };
    tau.unwrap_or(NAN_C)
}

/// Grid coordinates in double-double: `g_0 + k (g_last - g_0) / (n - 1)` for a
/// uniform grid, the given values otherwise.
pub fn dd_grid(g: &[f64]) -> Vec<Dd> {
    match uniform_step(g) {
        Some(_) => {
            let n = g.len() - 1;
            let lo = dd(g[0]);
            let h = (dd(g[n]) - lo) / n as f64;
            (0..=n).map(|k| lo + h * k as f64).collect()
        }
        None => g.iter().map(|&v| dd(v)).collect(),
    }
}

/// Residual of the KdV equation over a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualSummary {
    /// `max |q_t + (3/2) q q_x - (1/4) q_xxx|` over admissible points.
    pub max: f64,
    pub argmax_x: f64,
    pub argmax_t: f64,
    /// Number of grid points whose stencil lies inside the invertibility region.
    pub points: usize,
}

impl ResidualSummary {
    fn empty() -> Self {
        Self { max: 0.0, argmax_x: f64::NAN, argmax_t: f64::NAN, points: 0 }
    }

    fn merge(self, o: Self) -> Self {
        let better = o.max > self.max || (self.points == 0 && o.points > 0 && o.max >= self.max);
        let (max, argmax_x, argmax_t) =
            if better { (o.max, o.argmax_x, o.argmax_t) } else { (self.max, self.argmax_x, self.argmax_t) };
        Self { max, argmax_x, argmax_t, points: self.points + o.points }
    }
}

/// `tau`, `q` and the invertibility mask on a tensor grid; rows are indexed by `t`.
#[derive(Clone, Debug)]
pub struct EvolvedField {
    pub x_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// Row-major: entry `(it, ix)` at `it * nx + ix`.
    pub tau: Vec<C64>,
    pub q: Vec<C64>,
    /// Trailing double-double parts of `q`.
    pub q_lo: Vec<C64>,
    pub omega: Vec<bool>,
    pub residual: Option<ResidualSummary>,
}

impl EvolvedField {
    pub fn nx(&self) -> usize {
        self.x_grid.len()
    }

    pub fn nt(&self) -> usize {
        self.t_grid.len()
    }

    pub fn index(&self, it: usize, ix: usize) -> usize {
        it * self.nx() + ix
    }

    /// Number of grid points inside the invertibility region.
    pub fn omega_count(&self) -> usize {
        self.omega.iter().filter(|&&b| b).count()
    }

    /// CSV with header `x,t,tau_re,tau_im,q_re,q_im,in_omega`, one row per point,
    /// `t` outer and `x` inner; floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.tau.len() * 140 + 64);
        out.push_str("x,t,tau_re,tau_im,q_re,q_im,in_omega\n");
        for (it, &t) in self.t_grid.iter().enumerate() {
            for (ix, &x) in self.x_grid.iter().enumerate() {
                let k = self.index(it, ix);
                let (tau, q) = (self.tau[k], self.q[k]);
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    fmt_float(x),
                    fmt_float(t),
                    fmt_float(tau.re),
                    fmt_float(tau.im),
                    fmt_float(q.re),
                    fmt_float(q.im),
                    u8::from(self.omega[k])
                ));
            }
        }
        out
    }
}

/// Scientific notation with 17 significant digits; `NaN` and infinities spelled out.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        let s = format!("{v:.16e}");
        if s.starts_with("-0.0000000000000000e0") {
            s[1..].to_string()
        } else {
            s
        }
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn check_grid(g: &[f64], name: &str) -> Result<()> {
    if g.is_empty() {
        return Err(Error::Dimension(format!("{name} grid is empty")));
    }
    if g.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Dimension(format!("{name} grid must be strictly increasing")));
    }
    Ok(())
}

fn uniform_step(g: &[f64]) -> Option<f64> {
    if g.len() < 2 {
        return None;
    }
    let h = (g[g.len() - 1] - g[0]) / (g.len() - 1) as f64;
    let ok = g.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300));
    ok.then_some(h)
}

/// Evaluates `tau` and `q` on `x_grid x t_grid`; points with `|tau|` at or
/// below the floor are masked and carry `q = NaN`.
pub fn q_field(v: &VesselData, x_grid: &[f64], t_grid: &[f64]) -> Result<EvolvedField> {
    check_grid(x_grid, "x")?;
    check_grid(t_grid, "t")?;
    let ev = FieldEvaluator::new(v);
    let axis = ev.prepare_axis(x_grid);
    let td = dd_grid(t_grid);
    let rows: Vec<Vec<FieldPoint>> = td.par_iter().map(|&t| ev.row(&axis, t)).collect::<Result<_>>()?;
    let pts: Vec<FieldPoint> = rows.into_iter().flatten().collect();
    Ok(EvolvedField {
        x_grid: x_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        tau: pts.iter().map(|p| p.tau).collect(),
        q: pts.iter().map(|p| p.q).collect(),
        q_lo: pts.iter().map(|p| p.q_lo).collect(),
        omega: pts.iter().map(|p| p.in_omega).collect(),
        residual: None,
    })
}

/// Residual along the middle row of five consecutive rows `rows[0..5]`.
fn row_residual(x_grid: &[f64], t: f64, rows: [&[FieldPoint]; 5], hx: f64, ht: f64) -> ResidualSummary {
    let nx = x_grid.len();
    let cur = rows[2];
    let mut s = ResidualSummary::empty();
    for ix in 3..nx.saturating_sub(3) {
        let stencil_ok = (ix - 3..=ix + 3).all(|k| cur[k].in_omega) && rows.iter().all(|r| r[ix].in_omega);
        if !stencil_ok {
            continue;
        }
        let f = |k: usize| cur[k].q_dd();
        let g = |r: usize| rows[r][ix].q_dd();
        let d3 = f(ix - 3) - f(ix - 2).scale(8.0) + f(ix - 1).scale(13.0) - f(ix + 1).scale(13.0)
            + f(ix + 2).scale(8.0)
            - f(ix + 3);
        let d1 = f(ix - 2) - f(ix - 1).scale(8.0) + f(ix + 1).scale(8.0) - f(ix + 2);
        let dt = g(0) - g(1).scale(8.0) + g(3).scale(8.0) - g(4);
        let q_xxx = d3.to_c64() / (8.0 * hx * hx * hx);
        let q_x = d1.to_c64() / (12.0 * hx);
        let q_t = dt.to_c64() / (12.0 * ht);
        let r = (q_t + cur[ix].q * q_x * 1.5 - q_xxx * 0.25).norm();
        s = s.merge(ResidualSummary { max: r, argmax_x: x_grid[ix], argmax_t: t, points: 1 });
    }
    s
}

fn grid_steps(x_grid: &[f64], t_grid: &[f64]) -> Result<(f64, f64)> {
    if x_grid.len() < 7 || t_grid.len() < 5 {
        return Err(Error::GridTooCoarse(format!(
            "need at least 7 x points and 5 t points, got {} and {}",
            x_grid.len(),
            t_grid.len()
        )));
    }
    let hx = uniform_step(x_grid).ok_or_else(|| Error::GridTooCoarse("x grid is not uniform".into()))?;
    let ht = uniform_step(t_grid).ok_or_else(|| Error::GridTooCoarse("t grid is not uniform".into()))?;
    Ok((hx, ht))
}

/// `max |q_t + (3/2) q q_x - (1/4) q_xxx|` over interior points whose stencil
/// lies inside the invertibility region; `q_xxx`, `q_x` and `q_t` use 4th-order
/// central differences.
pub fn kdv_residual(field: &EvolvedField) -> Result<ResidualSummary> {
    let (hx, ht) = grid_steps(&field.x_grid, &field.t_grid)?;
    let nx = field.nx();
    let rows: Vec<Vec<FieldPoint>> = (0..field.nt())
        .map(|it| {
            (0..nx)
                .map(|ix| {
                    let k = field.index(it, ix);
                    FieldPoint { tau: field.tau[k], q: field.q[k], q_lo: field.q_lo[k], in_omega: field.omega[k] }
                })
                .collect()
        })
        .collect();
    let s = (2..field.nt() - 2)
        .map(|it| {
            let r = [&rows[it - 2][..], &rows[it - 1], &rows[it], &rows[it + 1], &rows[it + 2]];
            row_residual(&field.x_grid, field.t_grid[it], r, hx, ht)
        })
        .fold(ResidualSummary::empty(), ResidualSummary::merge);
    if s.points == 0 {
        return Err(Error::GridTooCoarse("no stencil lies inside the invertibility region".into()));
    }
    Ok(s)
}

/// [`kdv_residual`] evaluated directly from the vessel without storing the
/// field; rows are processed in parallel chunks of [`ROW_CHUNK`] with two halo
/// rows on each side.
pub fn kdv_residual_streamed(v: &VesselData, x_grid: &[f64], t_grid: &[f64]) -> Result<ResidualSummary> {
    check_grid(x_grid, "x")?;
    check_grid(t_grid, "t")?;
    let (hx, ht) = grid_steps(x_grid, t_grid)?;
    let ev = FieldEvaluator::new(v);
    let axis = ev.prepare_axis(x_grid);
    let td = dd_grid(t_grid);
    let nt = t_grid.len();
    let starts: Vec<usize> = (2..nt - 2).step_by(ROW_CHUNK).collect();
    let parts: Vec<ResidualSummary> = starts
        .par_iter()
        .map(|&lo| {
            let hi = (lo + ROW_CHUNK).min(nt - 2);
            let rows: Vec<Vec<FieldPoint>> = (lo - 2..hi + 2).map(|it| ev.row(&axis, td[it])).collect::<Result<_>>()?;
            Ok((lo..hi)
                .map(|it| {
                    let r = it - lo + 2;
                    let w = [&rows[r - 2][..], &rows[r - 1], &rows[r], &rows[r + 1], &rows[r + 2]];
                    row_residual(x_grid, t_grid[it], w, hx, ht)
                })
                .fold(ResidualSummary::empty(), ResidualSummary::merge))
        })
        .collect::<Result<_>>()?;
    let s = parts.into_iter().fold(ResidualSummary::empty(), ResidualSummary::merge);
    if s.points == 0 {
        return Err(Error::GridTooCoarse("no stencil lies inside the invertibility region".into()));
    }
    Ok(s)
}

/// Residuals at steps `(hx, ht)` and `(hx/2, ht/2)` with the observed order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Convergence {
    pub coarse: f64,
    pub fine: f64,
    /// `coarse / fine`.
    pub ratio: f64,
    /// `log2(ratio)`.
    pub order: f64,
}

impl Convergence {
    pub fn from_pair(coarse: f64, fine: f64) -> Self {
        let ratio = coarse / fine;
        Self { coarse, fine, ratio, order: ratio.log2() }
    }
}

fn grid_from(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi - lo) / h).round() as usize;
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

/// KdV residual on `[x_lo, x_hi] x [t_lo, t_hi]` at steps `(hx, ht)` and at
/// half those steps.
pub fn kdv_convergence(
    v: &VesselData,
    x_range: (f64, f64),
    t_range: (f64, f64),
    hx: f64,
    ht: f64,
) -> Result<Convergence> {
    let coarse = kdv_residual_streamed(v, &grid_from(x_range.0, x_range.1, hx), &grid_from(t_range.0, t_range.1, ht))?;
    let fine = kdv_residual_streamed(
        v,
        &grid_from(x_range.0, x_range.1, hx / 2.0),
        &grid_from(t_range.0, t_range.1, ht / 2.0),
    )?;
    Ok(Convergence::from_pair(coarse.max, fine.max))
}

/// Residuals of the `t`-evolution identities at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TimeIdentityResiduals {
    /// `(gamma_*)_t + i gamma_* (H_0)_x s1 - i s1 (H_0)_xx s1 - i s1 (H_0)_x gamma_*`.
    pub gamma_star: f64,
    /// `(H_0)_t - i (H_1)_x - i (H_0)_x s1 H_0`.
    pub moment: f64,
    /// `S_t - i lambda S_x - i (H_0)_x s1 S` at the sample `lambda`.
    pub transfer: f64,
}

impl TimeIdentityResiduals {
    fn of(m: &[CMat2]) -> Self {
        Self { gamma_star: max_abs2(&m[0]), moment: max_abs2(&m[1]), transfer: max_abs2(&m[2]) }
    }

    pub fn max(&self) -> f64 {
        self.gamma_star.max(self.moment).max(self.transfer)
    }
}

/// Sample spectral parameter for the transfer-function identity.
pub const SAMPLE_LAMBDA: C64 = C64 { re: 1.0, im: 2.0 };

/// Central-difference residuals of the `t`-evolution identities of `gamma_*`,
/// `H_0` and `S(lambda)` at `(x, t)` with step `h`; `(H_0)_x` is exact and
/// `(H_0)_xx`, `(H_1)_x` and all `t` derivatives are differenced.
pub fn gamma_star_t_residual(v: &VesselData, x: f64, t: f64, h: f64) -> Result<TimeIdentityResiduals> {
    Ok(TimeIdentityResiduals::of(&time_identity_matrices(v, x, t, h)?))
}

/// Residuals at steps `h` and `h/2` and of the extrapolation
/// `(4 R(h/2) - R(h)) / 3` applied to the residual matrices.
pub fn gamma_star_t_richardson(v: &VesselData, x: f64, t: f64, h: f64) -> Result<[TimeIdentityResiduals; 3]> {
    let coarse = time_identity_matrices(v, x, t, h)?;
    let fine = time_identity_matrices(v, x, t, h / 2.0)?;
    let ext: Vec<CMat2> = coarse.iter().zip(&fine).map(|(a, b)| (b * c(4.0, 0.0) - a) / c(3.0, 0.0)).collect();
    Ok([TimeIdentityResiduals::of(&coarse), TimeIdentityResiduals::of(&fine), TimeIdentityResiduals::of(&ext)])
}

/// Residual matrices `[gamma_*, H_0, S]` of the `t`-evolution identities.
fn time_identity_matrices(v: &VesselData, x: f64, t: f64, h: f64) -> Result<Vec<CMat2>> {
    if v.dim() == 0 {
        return Ok(vec![CMat2::zeros(); 3]);
    }
    let s1 = v.params.sigma1;
    let at = |xx: f64, tt: f64| snapshot_xt(v, xx, tt);
    let c0 = at(x, t)?;
    let (xp, xm, tp, tm) = (at(x + h, t)?, at(x - h, t)?, at(x, t + h)?, at(x, t - h)?);
    let two_h = c(2.0 * h, 0.0);
    let h0x = h0_x_derivative(v, &c0);
    let h0xx = (h0_x_derivative(v, &xp) - h0_x_derivative(v, &xm)) / two_h;
    let gt = (tp.gamma_star - tm.gamma_star) / two_h;
    let g = c0.gamma_star;
    let r_gamma = gt + g * h0x * s1 * I - s1 * h0xx * s1 * I - s1 * h0x * g * I;
    let h1x = (vessel_moments(v, &xp, 1) - vessel_moments(v, &xm, 1)) / two_h;
    let h0t = (tp.h0 - tm.h0) / two_h;
    let r_moment = h0t - h1x * I - h0x * s1 * c0.h0 * I;
    let lam = SAMPLE_LAMBDA;
    let st = (transfer(v, &tp, lam)? - transfer(v, &tm, lam)?) / two_h;
    let sx = (transfer(v, &xp, lam)? - transfer(v, &xm, lam)?) / two_h;
    let s = transfer(v, &c0, lam)?;
    let r_s = st - sx * (I * lam) - h0x * s1 * s * I;
    Ok(vec![r_gamma, r_moment, r_s])
}

/// Inverse vessel at `(x, t)` integrated along `(0,0) -> (x,0) -> (x,t)`.
pub fn inverse_vessel_t(v: &VesselData, x: f64, t: f64) -> Result<InverseVesselSnapshot> {
    inverse_vessel_path(v, x, t, OdeOptions::with_tol(1e-12))
}

/// Guaranteed half-width of invertibility in `t` at fixed `x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TxEstimate {
    pub x: f64,
    /// `+inf` when `X` does not depend on `t`.
    pub tx: f64,
    /// `|X(x,0)^{-1}|` (Frobenius).
    pub xinv_norm: f64,
    /// Sampled `sup |dX/dt|` on the trial interval.
    pub rate_sup: f64,
    /// True when a `tau` scan of `[-tx, tx]` found no zero.
    pub validated: bool,
    /// `min |tau(x, s)| / |tau(x, 0)|` over the scan.
    pub min_tau_ratio: f64,
}

/// Safety factor applied to the perturbation bound.
pub const TX_SAFETY: f64 = 0.9;
/// Samples of `|dX/dt|` on the trial interval.
pub const TX_RATE_SAMPLES: usize = 41;
/// Samples of the validating `tau` scan.
pub const TX_SCAN_SAMPLES: usize = 401;

/// Neumann-series bound: with `T_0 = 1 / (|X^{-1}| |X_t(x,0)|)` and
/// `R = sup_{|s| <= T_0} |X_t(x,s)|`, returns `T_x = 0.9 min(T_0, 1 / (|X^{-1}| R))`,
/// so that `|X(x,s) - X(x,0)| < 1/|X^{-1}|` on `|s| <= T_x`. The result is
/// checked by a `tau` scan.
pub fn estimate_tx(v: &VesselData, x: f64) -> Result<TxEstimate> {
    let n = v.dim();
    if n == 0 {
        return Ok(TxEstimate {
            x,
            tx: f64::INFINITY,
            xinv_norm: 1.0,
            rate_sup: 0.0,
            validated: true,
            min_tau_ratio: 1.0,
        });
    }
    let s0 = snapshot_xt(v, x, 0.0)?;
    let xinv = s0.x_op.clone().try_inverse().ok_or_else(|| Error::Singular(format!("X at x={x}")))?;
    let ninv = xinv.norm();
    let rate = |s: f64| -> Result<f64> {
        let b = evolve_b_xt(v, x, s);
        let cm = evolve_c_xt(v, x, s)?;
        Ok(x_t_rate(v, &b, &cm).norm())
    };
    let r0 = rate(0.0)?;
    if r0 == 0.0 {
        return Ok(TxEstimate {
            x,
            tx: f64::INFINITY,
            xinv_norm: ninv,
            rate_sup: 0.0,
            validated: true,
            min_tau_ratio: 1.0,
        });
    }
    let t0 = 1.0 / (ninv * r0);
    let mut sup = r0;
    for k in 0..TX_RATE_SAMPLES {
        let s = -t0 + 2.0 * t0 * k as f64 / (TX_RATE_SAMPLES - 1) as f64;
        sup = sup.max(rate(s)?);
    }
    let tx = TX_SAFETY * t0.min(1.0 / (ninv * sup));
    let (validated, min_tau_ratio) = scan_tau(v, x, tx, s0.tau)?;
    Ok(TxEstimate { x, tx, xinv_norm: ninv, rate_sup: sup, validated, min_tau_ratio })
}

/// Scans `tau(x, s)` for `s` in `[-half, half]`; returns whether it stays
/// away from zero and keeps the sign of its real part, and the smallest ratio
/// `|tau(x, s)| / |tau(x, 0)|`.
pub fn scan_tau(v: &VesselData, x: f64, half: f64, tau0: C64) -> Result<(bool, f64)> {
    let mut vv = v.clone();
    vv.tol.tau_floor_rel = 0.0;
    let mut ok = true;
    let mut min_ratio = f64::INFINITY;
    for k in 0..TX_SCAN_SAMPLES {
        let s = -half + 2.0 * half * k as f64 / (TX_SCAN_SAMPLES - 1) as f64;
        let tau = match snapshot_xt(&vv, x, s) {
            Ok(sn) => sn.tau,
            Err(Error::OmegaBoundary { .. }) => c(0.0, 0.0),
            Err(e) => return Err(e),
        };
        let ratio = tau.norm() / tau0.norm();
        min_ratio = min_ratio.min(ratio);
        let floor = v.tol.tau_floor_rel * s_floor_scale(&vv, x, s);
        if !(tau.norm() > floor) || tau.re * tau0.re < 0.0 {
            ok = false;
        }
    }
    Ok((ok, min_ratio))
}

fn s_floor_scale(v: &VesselData, x: f64, s: f64) -> f64 {
    snapshot_xt(v, x, s).map(|sn| sn.x_op.norm().max(1.0)).unwrap_or(1.0)
}

/// Rigid-translation fit of a field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TravelingWave {
    /// Least-squares speed of the fitted shifts.
    pub speed: f64,
    /// `max_t min_s max_x |q(x, t) - q(x - s, 0)|` relative to the amplitude.
    pub mismatch: f64,
    /// `max |q(x, 0)|`.
    pub amplitude: f64,
}

fn interp_row(xg: &[f64], row: &[f64], x: f64) -> Option<f64> {
    let n = xg.len();
    if x < xg[0] || x > xg[n - 1] {
        return None;
    }
    let h = (xg[n - 1] - xg[0]) / (n - 1) as f64;
    let pos = (x - xg[0]) / h;
    let i = (pos.floor() as usize).min(n - 2);
    let i0 = i.saturating_sub(1).min(n.saturating_sub(4));
    let xs = &xg[i0..(i0 + 4).min(n)];
    let ys = &row[i0..(i0 + 4).min(n)];
    let mut acc = 0.0;
    for j in 0..xs.len() {
        let mut l = 1.0;
        for m in 0..xs.len() {
            if m != j {
                l *= (x - xs[m]) / (xs[j] - xs[m]);
            }
        }
        acc += l * ys[j];
    }
    Some(acc)
}

fn shift_error(xg: &[f64], base: &[f64], row: &[f64], s: f64) -> f64 {
    let mut worst = 0.0_f64;
    for (k, &x) in xg.iter().enumerate() {
        if let Some(b) = interp_row(xg, base, x - s) {
            worst = worst.max((row[k] - b).abs());
        }
    }
    worst
}

/// Fits `q(x, t) ~ q(x - s(t), 0)` row by row (grid search then golden-section
/// refinement of `s`) and reports the best speed and the worst relative
/// mismatch. `None` for a field with zero amplitude, a masked point or fewer
/// than two time rows.
pub fn traveling_wave_check(field: &EvolvedField) -> Option<TravelingWave> {
    let nx = field.nx();
    if field.nt() < 2 || nx < 4 || field.omega.iter().any(|&b| !b) {
        return None;
    }
    let it0 = field.t_grid.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(i, _)| i)?;
    let row = |it: usize| -> Vec<f64> { (0..nx).map(|ix| field.q[field.index(it, ix)].re).collect() };
    let base = row(it0);
    let amplitude = base.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if amplitude == 0.0 {
        return None;
    }
    let xg = &field.x_grid;
    let span = (xg[nx - 1] - xg[0]) / 2.0;
    let h = (xg[nx - 1] - xg[0]) / (nx - 1) as f64;
    let mut pts = Vec::new();
    let mut mismatch = 0.0_f64;
    for it in 0..field.nt() {
        let dt = field.t_grid[it] - field.t_grid[it0];
        let r = row(it);
        let steps = (span / h).round() as i64;
        let best = (-steps..=steps)
            .map(|k| k as f64 * h)
            .min_by(|a, b| shift_error(xg, &base, &r, *a).total_cmp(&shift_error(xg, &base, &r, *b)))
            .unwrap_or(0.0);
        let (mut lo, mut hi) = (best - h, best + h);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..60 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            if shift_error(xg, &base, &r, m1) < shift_error(xg, &base, &r, m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let s = (lo + hi) / 2.0;
        mismatch = mismatch.max(shift_error(xg, &base, &r, s) / amplitude);
        pts.push((dt, s));
    }
    let (num, den) = pts.iter().fold((0.0, 0.0), |(n, d), &(t, s)| (n + t * s, d + t * t));
    let speed = if den > 0.0 { num / den } else { 0.0 };
    Some(TravelingWave { speed, mismatch, amplitude })
}

/// `|d_t (tau_x) - d_x (tau_t)|` at `(x, t)`, where `tau_x = tau tr(X^{-1} X_x)`
/// and `tau_t = tau tr(X^{-1} X_t)` are exact and the outer derivatives are
/// central differences with step `h`.
pub fn cross_derivative_mismatch(v: &VesselData, x: f64, t: f64, h: f64) -> Result<f64> {
    let s2 = to_dyn(&v.params.sigma2);
    let rates = |xx: f64, tt: f64| -> Result<(C64, C64)> {
        let sn = snapshot_xt(v, xx, tt)?;
        let xinv = sn.x_op.clone().try_inverse().ok_or_else(|| Error::Singular(format!("X at x={xx}, t={tt}")))?;
        let tau_x = sn.tau * (&xinv * &sn.b * &s2 * &sn.c).trace();
        let tau_t = sn.tau * (&xinv * x_t_rate(v, &sn.b, &sn.c)).trace();
        Ok((tau_x, tau_t))
    };
    let dt_taux = (rates(x, t + h)?.0 - rates(x, t - h)?.0) / (2.0 * h);
    let dx_taut = (rates(x + h, t)?.1 - rates(x - h, t)?.1) / (2.0 * h);
    Ok((dt_taux - dx_taut).norm())
}

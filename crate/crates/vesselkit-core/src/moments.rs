//! Forward moment engine: moment matrices `H_n(x)` of a Sturm-Liouville
//! potential as truncated series, and their structured values at `x = 0`.
//!
//! With `beta = 1/2 int_0^x q` and `pi11 = beta' - beta^2`, the levels obey
//!
//! * `H_{n+1}^{11} = i H_n^{22} - (H_n^{12})' + beta H_n^{12}`
//! * `H^{12} - H^{21} = i((H^{11})' - beta H^{11})` at every level
//! * `(H^{12} + H^{21})' = -i pi11 H^{11} + beta (H^{12} - H^{21})` at every level
//! * `2i (H^{22})' = (H^{12})'' - 2 beta (H^{12})'` at every level
//!
//! Each level consumes two series orders.

use crate::algebra::{c, CMat2, C64, I};
use crate::error::{Error, Result};
use crate::series::TruncSeries;

/// Tolerance on the imaginary residue of extracted triples.
pub const STRUCT_TOL: f64 = 1e-10;

/// Potential `q` with `beta = 1/2 int_0^x q` and `pi11 = beta' - beta^2`.
#[derive(Clone, Debug)]
pub struct PotentialModel {
    pub q: TruncSeries,
    pub beta: TruncSeries,
    pub pi11: TruncSeries,
}

impl PotentialModel {
    /// Builds the model from the Taylor series of `q` (real coefficients
    /// are expected; imaginary parts are carried through unchanged).
    pub fn new(q: TruncSeries) -> Self {
        let beta = q.s_antider(c(0.0, 0.0)).scale(c(0.5, 0.0));
        let dbeta = beta.s_diff();
        let pi11 = &dbeta - &(&beta * &beta);
        Self { q, beta, pi11 }
    }

    /// Model for the polynomial with the given coefficients, zero-padded to `order`.
    pub fn from_polynomial(coeffs: &[f64], order: usize) -> Self {
        let mut v = vec![0.0; order + 1];
        for (k, &ck) in coeffs.iter().enumerate().take(order + 1) {
            v[k] = ck;
        }
        Self::new(TruncSeries::from_real(&v))
    }
}

/// The four entries of a moment matrix `H_n(x)` as series.
#[derive(Clone, Debug)]
pub struct MomentMatrixSeries {
    pub n: usize,
    pub h11: TruncSeries,
    pub h12: TruncSeries,
    pub h21: TruncSeries,
    pub h22: TruncSeries,
    pub h22_init: f64,
}

impl MomentMatrixSeries {
    /// Trust order: the minimum order among the four entries.
    pub fn order(&self) -> usize {
        self.h11.order().min(self.h12.order()).min(self.h21.order()).min(self.h22.order())
    }

    /// Value at `x = 0`.
    pub fn at_zero(&self) -> CMat2 {
        CMat2::new(self.h11.at_zero(), self.h12.at_zero(), self.h21.at_zero(), self.h22.at_zero())
    }

    /// Entries as a series matrix.
    pub fn as_matrix(&self) -> SeriesMat2 {
        SeriesMat2([[self.h11.clone(), self.h12.clone()], [self.h21.clone(), self.h22.clone()]])
    }
}

/// Real triple `(r, b, d)` with `H_n(0) = i^n [[r, i b], [-i b, d]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triple {
    pub r: f64,
    pub b: f64,
    pub d: f64,
}

/// Moment matrices `H_0..H_M` and their triples at `x = 0`.
#[derive(Clone, Debug)]
pub struct MomentTable {
    pub entries: Vec<MomentMatrixSeries>,
    pub triples: Vec<Triple>,
}

impl MomentTable {
    /// Triples as three separate sequences `(r_n)`, `(b_n)`, `(d_n)`.
    pub fn sequences(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            self.triples.iter().map(|t| t.r).collect(),
            self.triples.iter().map(|t| t.b).collect(),
            self.triples.iter().map(|t| t.d).collect(),
        )
    }
}

/// `i^k` for integer `k` (any sign).
pub fn i_pow(k: i64) -> C64 {
    match k.rem_euclid(4) {
        0 => c(1.0, 0.0),
        1 => c(0.0, 1.0),
        2 => c(-1.0, 0.0),
        _ => c(0.0, -1.0),
    }
}

/// Builds `H_0`: `h11 = -beta`, `h12 = -i pi11 / 2`, `h21 = i pi11 / 2`, and
/// `h22` from the closure equation with `h22(0) = h22_init`.
pub fn build_h0(p: &PotentialModel, h22_init: f64) -> MomentMatrixSeries {
    let h11 = -&p.beta;
    let h12 = p.pi11.scale(c(0.0, -0.5));
    let h21 = p.pi11.scale(c(0.0, 0.5));
    let h22 = closure_h22(&h12, p, c(h22_init, 0.0));
    MomentMatrixSeries { n: 0, h11, h12, h21, h22, h22_init }
}

/// Solves `2i h22' = h12'' - 2 beta h12'` with `h22(0) = init`.
fn closure_h22(h12: &TruncSeries, p: &PotentialModel, init: C64) -> TruncSeries {
    let d1 = h12.s_diff();
    let d2 = d1.s_diff();
    let rhs = &d2 - &(&p.beta * &d1).scale(c(2.0, 0.0));
    rhs.scale(c(0.0, -0.5)).s_antider(init)
}

/// Computes `H_{n+1}` from `H_n`.
///
/// `sum_init` is the value of `H_{n+1}^{12} + H_{n+1}^{21}` at 0; the
/// structured pattern at 0 requires it to vanish.
pub fn next_moment(
    hn: &MomentMatrixSeries,
    p: &PotentialModel,
    h22_init: f64,
    sum_init: f64,
) -> Result<MomentMatrixSeries> {
    if hn.order() < 2 {
        return Err(Error::OrderExhausted { needed: 2, got: hn.order() });
    }
    let n1 = hn.n + 1;
    let h11 = &(&hn.h22.scale(I) - &hn.h12.s_diff()) + &(&p.beta * &hn.h12);
    let diff = (&h11.s_diff() - &(&p.beta * &h11)).scale(I);
    let sum_rate = &(&p.pi11 * &h11).scale(c(0.0, -1.0)) + &(&p.beta * &diff);
    let sum = sum_rate.s_antider(c(sum_init, 0.0));
    let h12 = (&sum + &diff).scale(c(0.5, 0.0));
    let h21 = (&sum - &diff).scale(c(0.5, 0.0));
    let h22 = closure_h22(&h12, p, i_pow(n1 as i64) * h22_init);
    Ok(MomentMatrixSeries { n: n1, h11, h12, h21, h22, h22_init })
}

/// Extracts `(r, b, d)` from `H_n(0)` and the largest deviation from the
/// structured pattern.
pub fn extract_triple(n: usize, h: &CMat2) -> (Triple, f64) {
    let inv = i_pow(-(n as i64));
    let r = inv * h[(0, 0)];
    let b = inv * i_pow(-1) * h[(0, 1)];
    let d = inv * h[(1, 1)];
    let residue = r.im.abs().max(b.im.abs()).max(d.im.abs()).max((h[(0, 1)] + h[(1, 0)]).norm());
    (Triple { r: r.re, b: b.re, d: d.re }, residue)
}

/// Builds `H_0..H_M` with `h22` initial values `inits` (missing entries are 0)
/// and vanishing off-diagonal sums at 0.
pub fn moments_at_zero(p: &PotentialModel, m: usize, inits: &[f64]) -> Result<MomentTable> {
    let needed = 2 * m + 2;
    if p.q.order() < needed {
        return Err(Error::OrderExhausted { needed, got: p.q.order() });
    }
    let init = |n: usize| inits.get(n).copied().unwrap_or(0.0);
    let mut entries = vec![build_h0(p, init(0))];
    for n in 1..=m {
        let next = next_moment(&entries[n - 1], p, init(n), 0.0)?;
        entries.push(next);
    }
    let mut triples = Vec::with_capacity(m + 1);
    for e in &entries {
        let h = e.at_zero();
        let (t, residue) = extract_triple(e.n, &h);
        let scale = h.iter().fold(1.0_f64, |a, z| a.max(z.norm()));
        if residue > STRUCT_TOL * scale {
            return Err(Error::StructureViolation { n: e.n, residue, tol: STRUCT_TOL * scale });
        }
        triples.push(t);
    }
    Ok(MomentTable { entries, triples })
}

/// `2x2` matrix of truncated series.
#[derive(Clone, Debug)]
pub struct SeriesMat2(pub [[TruncSeries; 2]; 2]);

impl SeriesMat2 {
    /// Constant matrix as series of order `order`.
    pub fn constant(m: &CMat2, order: usize) -> Self {
        Self([
            [TruncSeries::constant(m[(0, 0)], order), TruncSeries::constant(m[(0, 1)], order)],
            [TruncSeries::constant(m[(1, 0)], order), TruncSeries::constant(m[(1, 1)], order)],
        ])
    }

    /// Matrix product with truncation at the minimum order.
    pub fn mul(&self, other: &Self) -> Self {
        let e = |i: usize, j: usize| &(&self.0[i][0] * &other.0[0][j]) + &(&self.0[i][1] * &other.0[1][j]);
        Self([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }

    /// Left multiplication by a constant matrix.
    pub fn left_const(&self, m: &CMat2) -> Self {
        let e = |i: usize, j: usize| &self.0[0][j].scale(m[(i, 0)]) + &self.0[1][j].scale(m[(i, 1)]);
        Self([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }

    /// Right multiplication by a constant matrix.
    pub fn right_const(&self, m: &CMat2) -> Self {
        let e = |i: usize, j: usize| &self.0[i][0].scale(m[(0, j)]) + &self.0[i][1].scale(m[(1, j)]);
        Self([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }

    /// Entrywise sum.
    pub fn add(&self, other: &Self) -> Self {
        let e = |i: usize, j: usize| &self.0[i][j] + &other.0[i][j];
        Self([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }

    /// Entrywise difference.
    pub fn sub(&self, other: &Self) -> Self {
        let e = |i: usize, j: usize| &self.0[i][j] - &other.0[i][j];
        Self([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }

    /// Entrywise derivative.
    pub fn diff(&self) -> Self {
        let e = |i: usize, j: usize| self.0[i][j].s_diff();
        Self([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }

    /// Largest coefficient modulus over all entries.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |a, s| a.max(s.max_abs()))
    }
}

/// `gamma_* = [[-i pi11, -beta], [beta, i]]` as a series matrix.
pub fn gamma_star_series(p: &PotentialModel) -> SeriesMat2 {
    let order = p.pi11.order();
    SeriesMat2([[p.pi11.scale(c(0.0, -1.0)), -&p.beta], [p.beta.clone(), TruncSeries::constant(I, order)]])
}

/// Largest coefficient residual of
/// `H_n' - [s1^{-1} s2 H_{n+1} - H_{n+1} s2 s1^{-1} + s1^{-1} g* H_n - H_n g s1^{-1}]`
/// over consecutive table levels (Sturm-Liouville parameters).
pub fn dhn_residual(table: &MomentTable, p: &PotentialModel) -> f64 {
    let params = crate::algebra::VesselParams::sturm_liouville();
    let s1i = params.sigma1_inv();
    let s12 = s1i * params.sigma2;
    let s21 = params.sigma2 * s1i;
    let gs1 = params.gamma * s1i;
    let gstar = gamma_star_series(p);
    let mut worst = 0.0_f64;
    for w in table.entries.windows(2) {
        let hn = w[0].as_matrix();
        let hn1 = w[1].as_matrix();
        let rhs = hn1
            .left_const(&s12)
            .sub(&hn1.right_const(&s21))
            .add(&gstar.mul(&hn).left_const(&s1i))
            .sub(&hn.right_const(&gs1));
        worst = worst.max(hn.diff().sub(&rhs).max_abs());
    }
    worst
}

/// Series of the potential recovered from `H_0`:
/// `-2 (i (h21 - h12) - h11^2)`.
pub fn recovered_potential(h0: &MomentMatrixSeries) -> TruncSeries {
    let t = &(&h0.h21 - &h0.h12).scale(I) - &(&h0.h11 * &h0.h11);
    t.scale(c(-2.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_potential(value: f64, order: usize) -> PotentialModel {
        PotentialModel::new(TruncSeries::constant(c(value, 0.0), order))
    }

    #[test]
    fn zero_potential_gives_zero_h0() {
        let h0 = build_h0(&constant_potential(0.0, 8), 0.0);
        assert_eq!(h0.as_matrix().max_abs(), 0.0);
    }

    #[test]
    fn constant_potential_h0_at_zero() {
        let cval = 1.3;
        let h0 = build_h0(&constant_potential(cval, 8), 0.0);
        let v = h0.at_zero();
        assert!(v[(0, 0)].norm() < 1e-15);
        assert!((v[(0, 1)] - c(0.0, -cval / 4.0)).norm() < 1e-15);
        assert!((v[(1, 0)] - c(0.0, cval / 4.0)).norm() < 1e-15);
        assert!(v[(1, 1)].norm() < 1e-15);
        assert!((h0.h22.coeff(1) - c(cval * cval / 8.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn constant_potential_h1_11_vanishes_at_zero() {
        let p = constant_potential(0.7, 8);
        let h0 = build_h0(&p, 0.0);
        let h1 = next_moment(&h0, &p, 0.0, 0.0).unwrap();
        assert!(h1.h11.at_zero().norm() < 1e-15);
        assert_eq!(h1.order(), h0.order() - 2);
    }

    #[test]
    fn zero_moments_propagate() {
        let p = constant_potential(0.0, 8);
        let h0 = build_h0(&p, 0.0);
        let h1 = next_moment(&h0, &p, 0.0, 0.0).unwrap();
        assert_eq!(h1.as_matrix().max_abs(), 0.0);
    }

    #[test]
    fn order_exhaustion_is_reported() {
        let p = constant_potential(1.0, 2);
        let h0 = build_h0(&p, 0.0);
        let h1 = next_moment(&h0, &p, 0.0, 0.0);
        assert!(matches!(h1, Err(Error::OrderExhausted { .. })));
        assert!(matches!(moments_at_zero(&p, 3, &[]), Err(Error::OrderExhausted { .. })));
    }

    #[test]
    fn table_of_zero_potential() {
        let t = moments_at_zero(&constant_potential(0.0, 10), 4, &[]).unwrap();
        assert!(t.triples.iter().all(|t| *t == Triple { r: 0.0, b: 0.0, d: 0.0 }));
    }

    #[test]
    fn constant_potential_first_triple() {
        let t = moments_at_zero(&constant_potential(2.0, 10), 4, &[]).unwrap();
        let t0 = t.triples[0];
        assert!(t0.r.abs() < 1e-15 && (t0.b + 0.5).abs() < 1e-15 && t0.d.abs() < 1e-15);
    }

    #[test]
    fn constant_potential_dhn_residual() {
        let p = constant_potential(1.0, 10);
        let t = moments_at_zero(&p, 3, &[]).unwrap();
        assert!(dhn_residual(&t, &p) <= 1e-10);
    }

    #[test]
    fn corrupted_table_is_detected() {
        let p = PotentialModel::from_polynomial(&[1.0, 0.5, -0.25], 12);
        let mut t = moments_at_zero(&p, 3, &[]).unwrap();
        assert!(dhn_residual(&t, &p) <= 1e-10);
        t.entries[1].h12.coeffs_mut()[2] += c(1e-3, 0.0);
        assert!(dhn_residual(&t, &p) >= 1e-4);
    }

    #[test]
    fn zero_table_has_zero_residual() {
        let p = constant_potential(0.0, 10);
        let t = moments_at_zero(&p, 3, &[]).unwrap();
        assert_eq!(dhn_residual(&t, &p), 0.0);
    }

    #[test]
    fn gauge_choice_only_changes_free_entries() {
        let p = PotentialModel::from_polynomial(&[0.3, -1.0, 0.5], 14);
        let a = moments_at_zero(&p, 4, &[0.0; 5]).unwrap();
        let b = moments_at_zero(&p, 4, &[0.7, -0.2, 1.0, 0.0, 0.4]).unwrap();
        assert_eq!(a.entries[0].h11, b.entries[0].h11);
        assert_eq!(a.entries[0].h12, b.entries[0].h12);
        assert_eq!(a.entries[0].h21, b.entries[0].h21);
        assert_ne!(a.entries[0].h22, b.entries[0].h22);
        assert_ne!(a.triples[1], b.triples[1]);
    }
}

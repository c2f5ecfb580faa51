//! Dense complex linear algebra for small matrices and 2x2-block operators.
//!
//! Every operator of the engine lives on `C^{2K}` for a measure with `K`
//! atoms and is stored as a dense [`CMat`]. The `2x2` parameter matrices and
//! moment values use the fixed-size [`CMat2`].

use nalgebra::{DMatrix, Matrix2, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex double-precision scalar.
pub type C64 = Complex64;
/// Dense complex matrix (column-major).
pub type CMat = DMatrix<C64>;
/// Fixed `2x2` complex matrix.
pub type CMat2 = Matrix2<C64>;
/// Dense real matrix.
pub type RMat = DMatrix<f64>;

/// The imaginary unit.
pub const I: C64 = C64::new(0.0, 1.0);

/// Default minimum gap `min |a_i + b_j|` accepted by [`solve_sylvester`].
pub const SEPARATION_TOL: f64 = 1e-8;

/// Largest `rows * cols` of the unknown solved through the Kronecker system;
/// larger instances use the Schur-based substitution.
pub const KRONECKER_MAX_UNKNOWNS: usize = 256;

/// Shorthand constructor for a complex scalar.
#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Builds a `2x2` matrix from its row-major entries.
#[inline]
pub fn mat2(a11: C64, a12: C64, a21: C64, a22: C64) -> CMat2 {
    CMat2::new(a11, a12, a21, a22)
}

/// True when `m` equals its conjugate transpose within `tol` (max-entry norm).
pub fn is_self_adjoint(m: &CMat2, tol: f64) -> bool {
    (m - m.adjoint()).iter().all(|z| z.norm() <= tol)
}

/// True when `m + m^*` vanishes within `tol` (max-entry norm).
pub fn is_anti_self_adjoint(m: &CMat2, tol: f64) -> bool {
    (m + m.adjoint()).iter().all(|z| z.norm() <= tol)
}

/// Largest entry modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Largest entry modulus of a `2x2` matrix.
pub fn max_abs2(m: &CMat2) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Embeds a `2x2` matrix into a dynamic matrix.
pub fn to_dyn(m: &CMat2) -> CMat {
    CMat::from_fn(2, 2, |i, j| m[(i, j)])
}

/// Reads the `2x2` block with block coordinates `(bi, bj)`.
pub fn block(m: &CMat, bi: usize, bj: usize) -> CMat2 {
    CMat2::from_fn(|i, j| m[(2 * bi + i, 2 * bj + j)])
}

/// Writes the `2x2` block with block coordinates `(bi, bj)`.
pub fn set_block(m: &mut CMat, bi: usize, bj: usize, b: &CMat2) {
    for i in 0..2 {
        for j in 0..2 {
            m[(2 * bi + i, 2 * bj + j)] = b[(i, j)];
        }
    }
}

/// Parameter triple `(sigma1, sigma2, gamma)` of a vessel.
///
/// Invariants: `sigma1` self-adjoint and invertible, `sigma2` self-adjoint,
/// `gamma + gamma^* = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct VesselParams {
    pub sigma1: CMat2,
    pub sigma2: CMat2,
    pub gamma: CMat2,
}

impl VesselParams {
    /// Validates and stores a parameter triple.
    pub fn new(sigma1: CMat2, sigma2: CMat2, gamma: CMat2) -> Result<Self> {
        let tol = 1e-14;
        if !is_self_adjoint(&sigma1, tol) || sigma1.determinant().norm() <= tol {
            return Err(Error::Unsupported("sigma1 must be self-adjoint and invertible".into()));
        }
        if !is_self_adjoint(&sigma2, tol) {
            return Err(Error::Unsupported("sigma2 must be self-adjoint".into()));
        }
        if !is_anti_self_adjoint(&gamma, tol) {
            return Err(Error::Unsupported("gamma must be anti-self-adjoint".into()));
        }
        Ok(Self { sigma1, sigma2, gamma })
    }

    /// Sturm-Liouville parameters `sigma1=[[0,1],[1,0]]`, `sigma2=[[1,0],[0,0]]`,
    /// `gamma=[[0,0],[0,i]]`.
    pub fn sturm_liouville() -> Self {
        let o = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        Self { sigma1: mat2(o, one, one, o), sigma2: mat2(one, o, o, o), gamma: mat2(o, o, o, I) }
    }

    /// True when the triple equals the Sturm-Liouville parameters exactly.
    pub fn is_sturm_liouville(&self) -> bool {
        *self == Self::sturm_liouville()
    }

    /// Inverse of `sigma1`.
    pub fn sigma1_inv(&self) -> CMat2 {
        self.sigma1.try_inverse().expect("sigma1 is invertible by construction")
    }
}

fn require_square(m: &CMat) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

/// Returns `exp(s M)` by Pade scaling and squaring.
pub fn mat_exp(m: &CMat, s: f64) -> Result<CMat> {
    let n = require_square(m)?;
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    if s == 0.0 {
        return Ok(CMat::identity(n, n));
    }
    Ok((m * C64::from(s)).exp())
}

/// Eigenvalues of a square complex matrix from its complex Schur form.
pub fn eigenvalues(m: &CMat) -> Result<Vec<C64>> {
    let n = require_square(m)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Singular("Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Minimum of `|a + b|` over `a` in `ea`, `b` in `eb` (`+inf` when either is empty).
pub fn min_sum_gap(ea: &[C64], eb: &[C64]) -> f64 {
    let mut gap = f64::INFINITY;
    for a in ea {
        for b in eb {
            gap = gap.min((a + b).norm());
        }
    }
    gap
}

/// Solves `A X + X B = Q`.
///
/// The spectra of `A` and `-B` must be separated by more than `sep_tol`;
/// otherwise [`Error::SpectraOverlap`] is returned and the caller is expected
/// to integrate the defining ODE instead.
pub fn solve_sylvester(a: &CMat, b: &CMat, q: &CMat, sep_tol: f64) -> Result<CMat> {
    let n = require_square(a)?;
    let m = require_square(b)?;
    if q.nrows() != n || q.ncols() != m {
        return Err(Error::Dimension(format!(
            "Sylvester right-hand side is {}x{}, expected {}x{}",
            q.nrows(),
            q.ncols(),
            n,
            m
        )));
    }
    if n == 0 || m == 0 {
        return Ok(CMat::zeros(n, m));
    }
    let gap = min_sum_gap(&eigenvalues(a)?, &eigenvalues(b)?);
    if gap <= sep_tol {
        return Err(Error::SpectraOverlap { gap, tol: sep_tol });
    }
    if n * m <= KRONECKER_MAX_UNKNOWNS {
        solve_sylvester_kronecker(a, b, q)
    } else {
        solve_sylvester_schur(a, b, q)
    }
}

/// Dense vectorized solve `(I (x) A + B^T (x) I) vec X = vec Q`.
pub fn solve_sylvester_kronecker(a: &CMat, b: &CMat, q: &CMat) -> Result<CMat> {
    let n = a.nrows();
    let m = b.nrows();
    let ia = CMat::identity(m, m).kronecker(a);
    let bi = b.transpose().kronecker(&CMat::identity(n, n));
    let k = ia + bi;
    let rhs = nalgebra::DVector::from_column_slice(q.as_slice());
    let x = k.lu().solve(&rhs).ok_or_else(|| Error::Singular("Kronecker Sylvester system".into()))?;
    Ok(CMat::from_column_slice(n, m, x.as_slice()))
}

/// Schur-based substitution (Bartels-Stewart with complex triangular factors).
pub fn solve_sylvester_schur(a: &CMat, b: &CMat, q: &CMat) -> Result<CMat> {
    let n = a.nrows();
    let m = b.nrows();
    let (qa, ta) = Schur::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Singular("Schur iteration did not converge".into()))?
        .unpack();
    let (qb, tb) = Schur::try_new(b.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Singular("Schur iteration did not converge".into()))?
        .unpack();
    let f = qa.adjoint() * q * &qb;
    let mut y = CMat::zeros(n, m);
    for k in 0..m {
        let mut rhs = f.column(k).clone_owned();
        for j in 0..k {
            let t = tb[(j, k)];
            if t != C64::new(0.0, 0.0) {
                rhs -= y.column(j) * t;
            }
        }
        let shift = tb[(k, k)];
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            for l in (i + 1)..n {
                acc -= ta[(i, l)] * y[(l, k)];
            }
            let d = ta[(i, i)] + shift;
            if d.norm() == 0.0 {
                return Err(Error::Singular("triangular Sylvester pivot".into()));
            }
            y[(i, k)] = acc / d;
        }
    }
    Ok(qa * y * qb.adjoint())
}

/// LU-based determinant (`1` for the empty matrix).
pub fn det(m: &CMat) -> Result<C64> {
    let n = require_square(m)?;
    if n == 0 {
        return Ok(C64::new(1.0, 0.0));
    }
    Ok(m.clone().lu().determinant())
}

/// Hankel matrix `H_{jk} = m_{j+k+shift}` of the largest size `(N+1)x(N+1)`
/// supported by `m`, i.e. `N = (len - 1 - shift) / 2`.
pub fn hankel(m: &[f64], shift: usize) -> Result<RMat> {
    if m.len() < 1 + shift {
        return Err(Error::InsufficientLength { needed: 1 + shift, got: m.len() });
    }
    hankel_sized(m, (m.len() - 1 - shift) / 2, shift)
}

/// Hankel matrix `H_{jk} = m_{j+k+shift}` of size `(n+1)x(n+1)`.
pub fn hankel_sized(m: &[f64], n: usize, shift: usize) -> Result<RMat> {
    let needed = 2 * n + 1 + shift;
    if m.len() < needed {
        return Err(Error::InsufficientLength { needed, got: m.len() });
    }
    Ok(RMat::from_fn(n + 1, n + 1, |j, k| m[j + k + shift]))
}

/// Pivots `d_k` of the `L D L^T` factorization; stops at the first pivot
/// that is not above `tol` and returns the pivots computed so far.
pub fn ldl_pivots(m: &RMat, tol: f64) -> Vec<f64> {
    let n = m.nrows();
    let mut l = RMat::zeros(n, n);
    let mut d = Vec::with_capacity(n);
    for j in 0..n {
        let mut dj = m[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        d.push(dj);
        if !(dj > tol) {
            return d;
        }
        l[(j, j)] = 1.0;
        for i in (j + 1)..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = v / dj;
        }
    }
    d
}

/// True iff the Cholesky factorization succeeds with every pivot above `tol`.
pub fn is_posdef(m: &RMat, tol: f64) -> Result<bool> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::NonSquare { rows: n, cols: m.ncols() });
    }
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > tol {
        return Err(Error::Asymmetric { asym, tol });
    }
    let d = ldl_pivots(m, tol);
    Ok(d.len() == n && d.iter().all(|&p| p > tol))
}

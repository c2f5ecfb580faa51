//! Truncated Taylor series at base point 0.
//!
//! A series of order `N` stores `c_0..c_N`, where `c_k` is the `k`-th
//! derivative at 0 divided by `k!`. Binary operations never extend the order:
//! sums and products carry the minimum order of their operands.

use std::ops::{Add, Mul, Neg, Sub};

use crate::algebra::C64;

/// Truncated power series `c_0 + c_1 x + ... + c_N x^N`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncSeries {
    coeffs: Vec<C64>,
}

impl TruncSeries {
    /// Series with the given coefficients; order is `coeffs.len() - 1`.
    ///
    /// # Panics
    /// If `coeffs` is empty.
    pub fn new(coeffs: Vec<C64>) -> Self {
        assert!(!coeffs.is_empty(), "a series carries at least c_0");
        Self { coeffs }
    }

    /// Series with real coefficients.
    pub fn from_real(coeffs: &[f64]) -> Self {
        Self::new(coeffs.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    /// Zero series of order `order`.
    pub fn zeros(order: usize) -> Self {
        Self { coeffs: vec![C64::new(0.0, 0.0); order + 1] }
    }

    /// Constant series of order `order`.
    pub fn constant(value: C64, order: usize) -> Self {
        let mut s = Self::zeros(order);
        s.coeffs[0] = value;
        s
    }

    /// The identity function `x` at order `order` (requires `order >= 1`
    /// to be exact; at order 0 it is the zero series).
    pub fn identity(order: usize) -> Self {
        let mut s = Self::zeros(order);
        if order >= 1 {
            s.coeffs[1] = C64::new(1.0, 0.0);
        }
        s
    }

    /// Truncation order `N`.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficient `c_k` (`0` beyond the order).
    pub fn coeff(&self, k: usize) -> C64 {
        self.coeffs.get(k).copied().unwrap_or(C64::new(0.0, 0.0))
    }

    /// All coefficients `c_0..c_N`.
    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    /// Mutable access to the coefficients.
    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    /// Value at 0.
    pub fn at_zero(&self) -> C64 {
        self.coeffs[0]
    }

    /// Copy truncated to `min(order, self.order())`.
    pub fn truncate(&self, order: usize) -> Self {
        let n = order.min(self.order());
        Self { coeffs: self.coeffs[..=n].to_vec() }
    }

    /// Coefficientwise sum at the minimum order.
    pub fn s_add(&self, other: &Self) -> Self {
        let n = self.order().min(other.order());
        Self { coeffs: (0..=n).map(|k| self.coeffs[k] + other.coeffs[k]).collect() }
    }

    /// Coefficientwise difference at the minimum order.
    pub fn s_sub(&self, other: &Self) -> Self {
        let n = self.order().min(other.order());
        Self { coeffs: (0..=n).map(|k| self.coeffs[k] - other.coeffs[k]).collect() }
    }

    /// Cauchy product truncated at the minimum order.
    pub fn s_mul(&self, other: &Self) -> Self {
        let n = self.order().min(other.order());
        let coeffs = (0..=n).map(|k| (0..=k).map(|j| self.coeffs[j] * other.coeffs[k - j]).sum()).collect();
        Self { coeffs }
    }

    /// Multiplication by a scalar.
    pub fn scale(&self, s: C64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|&v| v * s).collect() }
    }

    /// Derivative; the order drops by one (an order-0 series differentiates
    /// to the order-0 zero series).
    pub fn s_diff(&self) -> Self {
        if self.order() == 0 {
            return Self::zeros(0);
        }
        Self { coeffs: (1..=self.order()).map(|k| self.coeffs[k] * k as f64).collect() }
    }

    /// Antiderivative with constant term `c0`; the order rises by one.
    pub fn s_antider(&self, c0: C64) -> Self {
        let mut coeffs = Vec::with_capacity(self.coeffs.len() + 1);
        coeffs.push(c0);
        coeffs.extend(self.coeffs.iter().enumerate().map(|(k, &v)| v / (k as f64 + 1.0)));
        Self { coeffs }
    }

    /// Horner evaluation at a real point.
    pub fn s_eval(&self, x: f64) -> C64 {
        self.eval_complex(C64::new(x, 0.0))
    }

    /// Horner evaluation at a complex point.
    pub fn eval_complex(&self, x: C64) -> C64 {
        self.coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &v| acc * x + v)
    }

    /// Largest coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |a, v| a.max(v.norm()))
    }

    /// Largest imaginary part modulus among the coefficients.
    pub fn max_imag(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |a, v| a.max(v.im.abs()))
    }
}

impl Add for &TruncSeries {
    type Output = TruncSeries;
    fn add(self, rhs: Self) -> TruncSeries {
        self.s_add(rhs)
    }
}

impl Sub for &TruncSeries {
    type Output = TruncSeries;
    fn sub(self, rhs: Self) -> TruncSeries {
        self.s_sub(rhs)
    }
}

impl Mul for &TruncSeries {
    type Output = TruncSeries;
    fn mul(self, rhs: Self) -> TruncSeries {
        self.s_mul(rhs)
    }
}

impl Mul<C64> for &TruncSeries {
    type Output = TruncSeries;
    fn mul(self, rhs: C64) -> TruncSeries {
        self.scale(rhs)
    }
}

impl Neg for &TruncSeries {
    type Output = TruncSeries;
    fn neg(self) -> TruncSeries {
        self.scale(C64::new(-1.0, 0.0))
    }
}

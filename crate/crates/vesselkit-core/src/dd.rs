//! Double-double arithmetic (about 32 significant digits) for the
//! diagonalized field evaluator, whose outputs feed third-order finite
//! differences that amplify double-precision rounding by `1/h^3`.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::algebra::C64;

/// Real double-double `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.3190468138462996e-17 };
const PI_2: Dd = Dd { hi: std::f64::consts::FRAC_PI_2, lo: 6.123233995736766e-17 };

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    /// Leading part.
    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Trailing part.
    pub fn lo(&self) -> f64 {
        self.lo
    }

    /// Exact product of two doubles.
    pub fn mul_exact(a: f64, b: f64) -> Self {
        let (p, e) = two_prod(a, b);
        Self { hi: p, lo: e }
    }

    fn ldexp(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self { hi: self.hi * f, lo: self.lo * f }
    }
}

impl From<Dd> for f64 {
    fn from(v: Dd) -> f64 {
        v.hi + v.lo
    }
}

impl Add for Dd {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::renorm(s, e + f)
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Neg for Dd {
    type Output = Self;
    fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        Self::renorm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Mul<f64> for Dd {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        let (p, e) = two_prod(self.hi, o);
        Self::renorm(p, e + self.lo * o)
    }
}

impl Div for Dd {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self - o * q1;
        let q2 = r.hi / o.hi;
        let r = r - o * q2;
        let q3 = r.hi / o.hi;
        Self::renorm(q1, q2) + dd(q3)
    }
}

impl Div<f64> for Dd {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self / dd(o)
    }
}

/// Real double-double from `f64`.
pub const fn dd(v: f64) -> Dd {
    Dd { hi: v, lo: 0.0 }
}

/// `exp(v)`: reduction by `ln 2` and `2^-5`, Taylor series, repeated squaring.
pub fn dd_exp(v: Dd) -> Dd {
    if v.hi > 709.0 {
        return dd(f64::INFINITY);
    }
    if v.hi < -745.0 {
        return dd(0.0);
    }
    let k = (v.hi / LN2.hi).round();
    let r = (v - LN2 * k).ldexp(-5);
    let mut sum = dd(0.0);
    let mut term = dd(1.0);
    for n in 1..=20 {
        sum += term;
        term = term * r / (n as f64);
    }
    for _ in 0..5 {
        sum = sum * sum;
    }
    sum.ldexp(k as i32)
}

/// `(sin v, cos v)`: reduction by `pi/2`, Taylor series on `|r| <= pi/4`.
pub fn dd_sin_cos(v: Dd) -> (Dd, Dd) {
    let k = (v.hi / PI_2.hi).round();
    let r = v - PI_2 * k;
    let mut s = dd(0.0);
    let mut c = dd(0.0);
    let mut term = dd(1.0);
    for n in 0..16 {
        c += term;
        let odd = term * r / ((2 * n + 1) as f64);
        s += odd;
        term = -(odd * r / ((2 * n + 2) as f64));
    }
    match (k as i64).rem_euclid(4) {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

/// `(sinh v, cosh v)`; small arguments use the Taylor series.
pub fn dd_sinh_cosh(v: Dd) -> (Dd, Dd) {
    if v.hi.abs() < 0.125 {
        let mut sh = dd(0.0);
        let mut ch = dd(0.0);
        let mut term = dd(1.0);
        for k in 0..12 {
            let even = 2 * k;
            ch += term;
            let odd_term = term * v / ((even + 1) as f64);
            sh += odd_term;
            term = odd_term * v / ((even + 2) as f64);
        }
        (sh, ch)
    } else {
        let e = dd_exp(v);
        let ei = dd(1.0) / e;
        ((e - ei) * 0.5, (e + ei) * 0.5)
    }
}

/// `sqrt` by one Newton step from the double result.
pub fn dd_sqrt(v: Dd) -> Dd {
    if v.hi <= 0.0 {
        return dd(0.0);
    }
    let s = dd(v.hi.sqrt());
    s + (v - s * s) / (s * 2.0)
}

/// Complex double-double.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdC {
    pub re: Dd,
    pub im: Dd,
}

impl DdC {
    pub fn new(re: Dd, im: Dd) -> Self {
        Self { re, im }
    }

    pub fn zero() -> Self {
        Self::from_c64(C64::new(0.0, 0.0))
    }

    pub fn one() -> Self {
        Self::from_c64(C64::new(1.0, 0.0))
    }

    /// `i`.
    pub fn i() -> Self {
        Self::from_c64(C64::new(0.0, 1.0))
    }

    pub fn from_c64(z: C64) -> Self {
        Self { re: dd(z.re), im: dd(z.im) }
    }

    /// Leading parts.
    pub fn hi(&self) -> C64 {
        C64::new(self.re.hi(), self.im.hi())
    }

    /// Trailing parts.
    pub fn lo(&self) -> C64 {
        C64::new(self.re.lo(), self.im.lo())
    }

    /// Rounded to `C64`.
    pub fn to_c64(&self) -> C64 {
        C64::new(f64::from(self.re), f64::from(self.im))
    }

    pub fn norm_sqr(&self) -> Dd {
        self.re * self.re + self.im * self.im
    }

    /// Modulus in double precision.
    pub fn abs(&self) -> f64 {
        self.re.hi().hypot(self.im.hi())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { re: self.re * s, im: self.im * s }
    }

    /// `(sinh z, cosh z)`.
    pub fn sinh_cosh(&self) -> (Self, Self) {
        let (sa, ca) = dd_sinh_cosh(self.re);
        let (sb, cb) = dd_sin_cos(self.im);
        (Self::new(sa * cb, ca * sb), Self::new(ca * cb, sa * sb))
    }

    /// `exp z`.
    pub fn exp(&self) -> Self {
        let e = dd_exp(self.re);
        let (sn, cs) = dd_sin_cos(self.im);
        Self::new(e * cs, e * sn)
    }

    /// Principal square root, refined by one Newton step.
    pub fn sqrt(&self) -> Self {
        let w0 = self.hi().sqrt();
        if w0.norm() == 0.0 {
            return Self::zero();
        }
        let w = Self::from_c64(w0);
        (w + *self / w).scale(0.5)
    }
}

/// `(cosh(s w), sinh(s w) / w)`, with the series used for small `s w` or `w`.
pub fn cosh_sinhc(s: DdC, w: DdC) -> (DdC, DdC) {
    let z = s * w;
    if z.abs() < 0.5 || w.abs() < 1e-3 {
        let z2 = z * z;
        let mut ch = DdC::zero();
        let mut shc = DdC::zero();
        let mut term = DdC::one();
        for k in 0..40 {
            ch = ch + term;
            let t_odd = term.scale(1.0 / (2 * k + 1) as f64);
            shc = shc + t_odd;
            term = t_odd * z2;
            term = term.scale(1.0 / (2 * k + 2) as f64);
            if term.abs() < 1e-34 * (1.0 + ch.abs()) {
                break;
            }
        }
        (ch, shc * s)
    } else {
        let (sh, ch) = z.sinh_cosh();
        (ch, sh / w)
    }
}

impl Add for DdC {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for DdC {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
}

impl Neg for DdC {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.im)
    }
}

impl Mul for DdC {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

impl Div for DdC {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let d = o.norm_sqr();
        Self::new((self.re * o.re + self.im * o.im) / d, (self.im * o.re - self.re * o.im) / d)
    }
}

/// Dense matrix over [`DdC`], row-major.
#[derive(Clone, Debug)]
pub struct DdMat {
    pub n: usize,
    pub m: usize,
    pub data: Vec<DdC>,
}

impl DdMat {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self { n, m, data: vec![DdC::zero(); n * m] }
    }

    pub fn get(&self, i: usize, j: usize) -> DdC {
        self.data[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: DdC) {
        self.data[i * self.m + j] = v;
    }

    pub fn mul(&self, o: &Self) -> Self {
        assert_eq!(self.m, o.n, "inner dimensions");
        let mut r = Self::zeros(self.n, o.m);
        for i in 0..self.n {
            for j in 0..o.m {
                let mut acc = DdC::zero();
                for k in 0..self.m {
                    acc = acc + self.get(i, k) * o.get(k, j);
                }
                r.set(i, j, acc);
            }
        }
        r
    }
}

/// LU factorization with partial pivoting of a square [`DdMat`].
#[derive(Clone, Debug)]
pub struct DdLu {
    lu: DdMat,
    perm: Vec<usize>,
    sign: f64,
    singular: bool,
}

impl DdLu {
    pub fn new(mut a: DdMat) -> Self {
        let n = a.n;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let mut singular = false;
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a.get(i, k).abs().total_cmp(&a.get(j, k).abs())).unwrap_or(k);
            if a.get(p, k).abs() == 0.0 {
                singular = true;
                continue;
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(p * n + j, k * n + j);
                }
                perm.swap(p, k);
                sign = -sign;
            }
            let piv = a.get(k, k);
            for i in (k + 1)..n {
                let f = a.get(i, k) / piv;
                a.set(i, k, f);
                for j in (k + 1)..n {
                    let v = a.get(i, j) - f * a.get(k, j);
                    a.set(i, j, v);
                }
            }
        }
        Self { lu: a, perm, sign, singular }
    }

    pub fn determinant(&self) -> DdC {
        if self.singular {
            return DdC::zero();
        }
        (0..self.lu.n).fold(DdC::from_c64(C64::new(self.sign, 0.0)), |acc, k| acc * self.lu.get(k, k))
    }

    /// Solves `A X = B`; `None` for a singular factor.
    pub fn solve(&self, b: &DdMat) -> Option<DdMat> {
        if self.singular {
            return None;
        }
        let n = self.lu.n;
        let mut x = DdMat::zeros(n, b.m);
        for c in 0..b.m {
            let mut y: Vec<DdC> = (0..n).map(|i| b.get(self.perm[i], c)).collect();
            for i in 0..n {
                for k in 0..i {
                    y[i] = y[i] - self.lu.get(i, k) * y[k];
                }
            }
            for i in (0..n).rev() {
                for k in (i + 1)..n {
                    y[i] = y[i] - self.lu.get(i, k) * y[k];
                }
                y[i] = y[i] / self.lu.get(i, i);
            }
            for i in 0..n {
                x.set(i, c, y[i]);
            }
        }
        Some(x)
    }
}

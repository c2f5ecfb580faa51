//! Signed truncated Stieltjes moment problems and atomic spectral measures.
//!
//! A signed sequence `m` is split as `m = v - u` with `v`, `u` Stieltjes
//! sequences (all Hankel matrices `H_{jk} = s_{j+k}` and shifted Hankel
//! matrices `H_{jk} = s_{j+k+1}` positive definite). Each positive part is
//! realized by Gauss quadrature, and the signed measure is their difference.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::algebra::{c, hankel_sized, is_posdef, CMat2, RMat, I};
use crate::error::{Error, Result};
use crate::moments::i_pow;

/// Nodes below `-NODE_CLAMP_TOL * (1 + max node)` are rejected in Stieltjes mode;
/// nodes in between are clamped to 0.
pub const NODE_CLAMP_TOL: f64 = 1e-9;
/// Weights above this magnitude trigger a conditioning warning.
pub const WEIGHT_WARN: f64 = 1e6;
/// Default split margin.
pub const DEFAULT_MARGIN: f64 = 1.0;
/// Schema tag of persisted measures.
pub const MEASURE_SCHEMA: &str = "vesselkit-measure-v1";

/// Relative node-coalescing tolerance: nodes closer than
/// `MERGE_TOL * (1 + max node)` are merged.
pub const MERGE_TOL: f64 = 1e-9;

/// Scale of the reference law in `split_signed` relative to the growth scale of the input.
pub const REFERENCE_SPREAD: f64 = 1.0;

/// Relative weight below which a coalesced atom is dropped.
pub const ZERO_WEIGHT_TOL: f64 = 1e-12;

/// Finite signed scalar measure `sum_j w_j delta_{mu_j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicScalarMeasure {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AtomicScalarMeasure {
    /// Power moment `sum_j w_j mu_j^n`.
    pub fn moment(&self, n: usize) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(mu, w)| w * mu.powi(n as i32)).sum()
    }

    /// Moments `0..len`.
    pub fn moments(&self, len: usize) -> Vec<f64> {
        (0..len).map(|n| self.moment(n)).collect()
    }
}

/// Which Hankel families must be positive definite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    /// Support on the real line; only the unshifted Hankel matrices matter.
    Hamburger,
    /// Support on `[0, inf)`; shifted Hankel matrices must be positive too.
    Stieltjes,
}

/// One atom `mu` with weight `W = [[w11, i w12], [-i w12, w22]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mu: f64,
    pub w11: f64,
    pub w12: f64,
    pub w22: f64,
}

impl Atom {
    /// The self-adjoint weight matrix.
    pub fn weight(&self) -> CMat2 {
        CMat2::new(c(self.w11, 0.0), I * self.w12, -I * self.w12, c(self.w22, 0.0))
    }

    fn max_weight(&self) -> f64 {
        self.w11.abs().max(self.w12.abs()).max(self.w22.abs())
    }
}

/// Provenance record stored with a measure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureMeta {
    pub moment_window: usize,
    pub source: String,
}

/// Finite atomic `2x2` spectral measure on `[0, inf)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMeasure {
    pub atoms: Vec<Atom>,
    pub meta: MeasureMeta,
}

impl SpectralMeasure {
    /// Validates atoms: finite fields, `mu >= 0`, pairwise distinct `mu`.
    pub fn new(atoms: Vec<Atom>, meta: MeasureMeta) -> Result<Self> {
        for a in &atoms {
            if ![a.mu, a.w11, a.w12, a.w22].iter().all(|v| v.is_finite()) {
                return Err(Error::Schema("atom fields must be finite".into()));
            }
            if a.mu < 0.0 {
                return Err(Error::Schema(format!("atom location {} is negative", a.mu)));
            }
        }
        for (i, a) in atoms.iter().enumerate() {
            if atoms[..i].iter().any(|b| b.mu == a.mu) {
                return Err(Error::Schema(format!("duplicate atom location {}", a.mu)));
            }
        }
        Ok(Self { atoms, meta })
    }

    /// Measure without provenance.
    pub fn from_atoms(atoms: Vec<Atom>) -> Result<Self> {
        Self::new(atoms, MeasureMeta::default())
    }

    /// The empty measure.
    pub fn empty() -> Self {
        Self { atoms: Vec::new(), meta: MeasureMeta::default() }
    }

    /// Number of atoms `K`.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    /// True for the empty measure.
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Every weight multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let atoms =
            self.atoms.iter().map(|a| Atom { mu: a.mu, w11: s * a.w11, w12: s * a.w12, w22: s * a.w22 }).collect();
        Self { atoms, meta: self.meta.clone() }
    }
}

/// Signed sequence `m` split as `v - u`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSequences {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub m: Vec<f64>,
}

/// Schur complements met by the induction over the Hankel family of `s` with
/// the given shift: the squared Cholesky pivots of its largest member.
fn hankel_pivots(s: &[f64], shift: usize) -> Vec<f64> {
    if s.len() < 1 + shift {
        return Vec::new();
    }
    let n = (s.len() - 1 - shift) / 2 + 1;
    let h = |a: usize, b: usize| s[a + b + shift];
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut pivots = Vec::with_capacity(n);
    for k in 0..n {
        let mut d = h(k, k);
        for i in 0..k {
            d -= l[(k, i)] * l[(k, i)];
        }
        pivots.push(d);
        if !(d > 0.0) {
            break;
        }
        l[(k, k)] = d.sqrt();
        for row in (k + 1)..n {
            let mut t = h(row, k);
            for i in 0..k {
                t -= l[(row, i)] * l[(k, i)];
            }
            l[(row, k)] = t / l[(k, k)];
        }
    }
    pivots
}

/// Smallest Schur complement over both Hankel families of `s`.
fn min_pivot(s: &[f64]) -> f64 {
    (0..2).flat_map(|shift| hankel_pivots(s, shift)).fold(f64::INFINITY, f64::min)
}

/// Moments `0..len` of the reference measure `Cat_n scale^n`: the law on
/// `[0, 4 scale]` whose Hankel Schur complements are `scale^(2k)` (unshifted)
/// and `scale^(2k+1)` (shifted).
fn reference_moments(len: usize, scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let (mut cat, mut pow) = (1.0_f64, 1.0_f64);
    for n in 0..len {
        out.push(cat * pow);
        cat *= 2.0 * (2 * n + 1) as f64 / (n + 2) as f64;
        pow *= scale;
    }
    out
}

/// Growth scale of `m`: the largest `(|m_n| / max(|m_0|, 1))^(1/n)`, at least 1.
fn growth_scale(m: &[f64]) -> f64 {
    let base = m[0].abs().max(1.0);
    m.iter().enumerate().skip(1).map(|(n, x)| (x.abs() / base).powf(1.0 / n as f64)).fold(1.0_f64, f64::max)
}

/// Splits `m` into Stieltjes sequences `v`, `u` with `v - u = m`.
///
/// `u = C r` for the reference moments `r` and `v = m + u`, with `C` the
/// smallest power of two for which every Schur complement of the four Hankel
/// families (`v`, `u`, each unshifted and shifted) is at least `margin`.
/// Every induction step therefore clears its threshold by `margin` while the
/// entries stay within a fixed multiple of the reference moments.
pub fn split_signed(m: &[f64], margin: f64) -> Result<SplitSequences> {
    if m.is_empty() {
        return Err(Error::InsufficientLength { needed: 1, got: 0 });
    }
    if !(margin > 0.0) {
        return Err(Error::Dimension(format!("split margin must be positive, got {margin}")));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Dimension("moment sequence contains non-finite entries".into()));
    }
    let r = reference_moments(m.len(), REFERENCE_SPREAD * growth_scale(m));
    let build = |c: f64| {
        let u: Vec<f64> = r.iter().map(|x| c * x).collect();
        let v: Vec<f64> = m.iter().zip(&u).map(|(a, b)| a + b).collect();
        (v, u)
    };
    let clears = |c: f64| {
        let (v, u) = build(c);
        min_pivot(&v) >= margin && min_pivot(&u) >= margin
    };
    let mut exp = 0_i32;
    while !clears(2f64.powi(exp)) {
        exp += 1;
        if exp > 1000 {
            return Err(Error::Dimension("no reference multiple dominates the moment sequence".into()));
        }
    }
    while exp > -1000 && clears(2f64.powi(exp - 1)) {
        exp -= 1;
    }
    let (v, u) = build(2f64.powi(exp));
    Ok(SplitSequences { v, u, m: m.to_vec() })
}

/// True when all (shifted) Hankel matrices that fit in `s` are positive definite.
pub fn stieltjes_ok(s: &[f64], tol: f64) -> Result<bool> {
    for shift in 0..2 {
        if s.len() < 1 + shift {
            continue;
        }
        let nmax = (s.len() - 1 - shift) / 2;
        for n in 0..=nmax {
            if !is_posdef(&hankel_sized(s, n, shift)?, tol)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Gauss quadrature reproducing `v_0..v_{2J-1}` with `J = v.len() / 2` nodes.
///
/// The Jacobi matrix comes from the partial Cholesky factor of the
/// `J x (J+1)` Hankel matrix; weights are `v_0` times the squared first
/// eigenvector components, followed by a guarded Newton refinement of the
/// moment equations.
pub fn gauss_atoms(v: &[f64], support: Support) -> Result<AtomicScalarMeasure> {
    let j = v.len() / 2;
    if j == 0 {
        return Err(Error::InsufficientLength { needed: 2, got: v.len() });
    }
    let scale = v[..2 * j].iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let h = |a: usize, b: usize| v[a + b];
    let mut r = DMatrix::<f64>::zeros(j, j + 1);
    for k in 0..j {
        let mut s = h(k, k);
        for i in 0..k {
            s -= r[(i, k)] * r[(i, k)];
        }
        if !(s > 1e-14 * scale) {
            return Err(Error::HankelNotPd { index: k, pivot: s });
        }
        r[(k, k)] = s.sqrt();
        for col in (k + 1)..=j {
            let mut t = h(k, col);
            for i in 0..k {
                t -= r[(i, k)] * r[(i, col)];
            }
            r[(k, col)] = t / r[(k, k)];
        }
    }
    let mut jac = RMat::zeros(j, j);
    for k in 0..j {
        let prev = if k == 0 { 0.0 } else { r[(k - 1, k)] / r[(k - 1, k - 1)] };
        jac[(k, k)] = r[(k, k + 1)] / r[(k, k)] - prev;
        if k > 0 {
            let off = r[(k, k)] / r[(k - 1, k - 1)];
            jac[(k, k - 1)] = off;
            jac[(k - 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> =
        (0..j).map(|i| (eig.eigenvalues[i], v[0] * eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();

    if support == Support::Stieltjes {
        let top = nodes.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        for x in nodes.iter_mut() {
            if *x < -NODE_CLAMP_TOL * (1.0 + top) {
                return Err(Error::NegativeNode { node: *x });
            }
            if *x < 0.0 {
                *x = 0.0;
            }
        }
    }
    newton_polish(&v[..2 * j], &mut nodes, &mut weights, support);
    Ok(AtomicScalarMeasure { nodes, weights })
}

fn scaled_moment_residual(v: &[f64], nodes: &[f64], weights: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|n| {
            let s: f64 = nodes.iter().zip(weights).map(|(x, w)| w * x.powi(n as i32)).sum();
            (s - v[n]) / v[n].abs().max(1.0)
        })
        .collect()
}

fn newton_polish(v: &[f64], nodes: &mut Vec<f64>, weights: &mut Vec<f64>, support: Support) {
    let j = nodes.len();
    let norm = |r: &[f64]| r.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let mut res = scaled_moment_residual(v, nodes, weights);
    for _ in 0..4 {
        let current = norm(&res);
        if current == 0.0 {
            return;
        }
        let jm = DMatrix::from_fn(2 * j, 2 * j, |n, col| {
            let sc = v[n].abs().max(1.0);
            if col < j {
                nodes[col].powi(n as i32) / sc
            } else {
                let k = col - j;
                if n == 0 {
                    0.0
                } else {
                    weights[k] * n as f64 * nodes[k].powi(n as i32 - 1) / sc
                }
            }
        });
        let rhs = DVector::from_column_slice(&res);
        let Some(step) = jm.lu().solve(&rhs) else { return };
        let new_w: Vec<f64> = (0..j).map(|k| weights[k] - step[k]).collect();
        let new_x: Vec<f64> = (0..j).map(|k| nodes[k] - step[j + k]).collect();
        if support == Support::Stieltjes && new_x.iter().any(|&x| x < 0.0) {
            return;
        }
        let new_res = scaled_moment_residual(v, &new_x, &new_w);
        if !(norm(&new_res) < current) {
            return;
        }
        *nodes = new_x;
        *weights = new_w;
        res = new_res;
    }
}

/// Merges signed atoms whose nodes agree within `MERGE_TOL * (1 + max node)`
/// and drops merged atoms whose weights cancel.
fn coalesce(mut atoms: Vec<(f64, [f64; 3])>) -> Vec<(f64, [f64; 3])> {
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let top = atoms.iter().fold(0.0_f64, |a, x| a.max(x.0.abs()));
    let tol = MERGE_TOL * (1.0 + top);
    let mut out: Vec<(f64, [f64; 3], usize)> = Vec::new();
    let mut wscale = 0.0_f64;
    for (x, w) in atoms {
        wscale = wscale.max(w.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
        match out.last_mut() {
            Some(last) if (x - last.0).abs() <= tol => {
                for i in 0..3 {
                    last.1[i] += w[i];
                }
                last.2 += 1;
            }
            _ => out.push((x, w, 1)),
        }
    }
    out.into_iter()
        .filter(|(_, w, count)| *count == 1 || w.iter().any(|v| v.abs() > ZERO_WEIGHT_TOL * wscale))
        .map(|(x, w, _)| (x, w))
        .collect()
}

/// Signed measure on `[0, inf)` matching `m_0..m_{2J-1}` for even-length `m`.
pub fn solve_signed_stieltjes(m: &[f64], margin: f64) -> Result<AtomicScalarMeasure> {
    if m.len() < 2 || !m.len().is_multiple_of(2) {
        return Err(Error::Dimension(format!("signed moment window must have even length >= 2, got {}", m.len())));
    }
    let split = split_signed(m, margin)?;
    let pos = gauss_atoms(&split.v, Support::Stieltjes)?;
    let neg = gauss_atoms(&split.u, Support::Stieltjes)?;
    let mut atoms: Vec<(f64, [f64; 3])> = Vec::new();
    atoms.extend(pos.nodes.iter().zip(&pos.weights).map(|(&x, &w)| (x, [w, 0.0, 0.0])));
    atoms.extend(neg.nodes.iter().zip(&neg.weights).map(|(&x, &w)| (x, [-w, 0.0, 0.0])));
    let merged = coalesce(atoms);
    Ok(AtomicScalarMeasure {
        nodes: merged.iter().map(|a| a.0).collect(),
        weights: merged.iter().map(|a| a.1[0]).collect(),
    })
}

/// Structured measure whose entrywise moments match `r`, `b`, `d`:
/// `sum mu^n w11 = r_n`, `sum mu^n w12 = b_n`, `sum mu^n w22 = d_n`.
pub fn assemble_measure(r: &[f64], b: &[f64], d: &[f64], margin: f64) -> Result<SpectralMeasure> {
    if r.len() != b.len() || r.len() != d.len() {
        return Err(Error::Dimension("moment sequences must have equal length".into()));
    }
    let parts = [r, b, d].map(|s| solve_signed_stieltjes(s, margin));
    let mut atoms: Vec<(f64, [f64; 3])> = Vec::new();
    for (slot, part) in parts.into_iter().enumerate() {
        let part = part?;
        for (&x, &w) in part.nodes.iter().zip(&part.weights) {
            let mut ws = [0.0; 3];
            ws[slot] = w;
            atoms.push((x, ws));
        }
    }
    let atoms: Vec<Atom> =
        coalesce(atoms).into_iter().map(|(mu, w)| Atom { mu, w11: w[0], w12: w[1], w22: w[2] }).collect();
    for a in &atoms {
        if a.max_weight() > WEIGHT_WARN {
            warn!("atom at mu={} has weight magnitude {:.3e}", a.mu, a.max_weight());
        }
    }
    SpectralMeasure::new(atoms, MeasureMeta { moment_window: r.len(), source: String::new() })
}

/// Moment `H_n = sum_k (i mu_k)^n W_k`.
pub fn measure_moments(meas: &SpectralMeasure, n: usize) -> CMat2 {
    let mut h = CMat2::zeros();
    for a in &meas.atoms {
        let factor = if n == 0 { c(1.0, 0.0) } else { i_pow(n as i64) * a.mu.powi(n as i32) };
        h += a.weight() * factor;
    }
    h
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    schema: String,
    atoms: Vec<Atom>,
    meta: MeasureMeta,
}

const TOP_KEYS: [&str; 3] = ["schema", "atoms", "meta"];
const ATOM_KEYS: [&str; 4] = ["mu", "w11", "w12", "w22"];
const META_KEYS: [&str; 2] = ["moment_window", "source"];

fn warn_unknown(obj: &serde_json::Value, known: &[&str], context: &str) {
    if let Some(map) = obj.as_object() {
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                warn!("ignoring unknown field `{key}` in {context}");
            }
        }
    }
}

/// Serializes a measure to its JSON form.
pub fn measure_to_json(meas: &SpectralMeasure) -> Result<String> {
    let file = MeasureFile { schema: MEASURE_SCHEMA.to_string(), atoms: meas.atoms.clone(), meta: meas.meta.clone() };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

/// Parses a measure from JSON; unknown fields are ignored with a warning.
pub fn measure_from_json(text: &str) -> Result<SpectralMeasure> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("malformed JSON: {e}")))?;
    warn_unknown(&value, &TOP_KEYS, "measure");
    if let Some(atoms) = value.get("atoms").and_then(|a| a.as_array()) {
        for a in atoms {
            warn_unknown(a, &ATOM_KEYS, "atom");
        }
    }
    if let Some(meta) = value.get("meta") {
        warn_unknown(meta, &META_KEYS, "meta");
    }
    let file: MeasureFile = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    if file.schema != MEASURE_SCHEMA {
        return Err(Error::Schema(format!("schema `{}` is not `{MEASURE_SCHEMA}`", file.schema)));
    }
    SpectralMeasure::new(file.atoms, file.meta)
}

/// Writes a measure atomically (temporary file, then rename).
pub fn save_measure(meas: &SpectralMeasure, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, measure_to_json(meas)?.as_bytes())
}

/// Reads a measure file.
pub fn load_measure(path: &Path) -> Result<SpectralMeasure> {
    let text = std::fs::read_to_string(path)?;
    measure_from_json(&text)
}

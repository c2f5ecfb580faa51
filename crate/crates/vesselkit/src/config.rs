//! Run configuration: a JSON file overridden by command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vesselkit_core::spectrum::DEFAULT_MARGIN;
use vesselkit_core::vessel::Tolerances;

use crate::CliError;

/// Tensor grid `[x_min, x_max] x [t_min, t_max]` with `nx * nt` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub nt: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { x_min: -5.0, x_max: 5.0, nx: 201, t_min: -1.0, t_max: 1.0, nt: 41 }
    }
}

impl GridSpec {
    /// Parses `x_min,x_max,nx,t_min,t_max,nt`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 6 {
            return Err(CliError::Config(format!("--grid expects x_min,x_max,nx,t_min,t_max,nt, got `{text}`")));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|e| CliError::Config(format!("bad grid value `{s}`: {e}")));
        let count = |s: &str| s.parse::<usize>().map_err(|e| CliError::Config(format!("bad grid count `{s}`: {e}")));
        Ok(Self {
            x_min: real(parts[0])?,
            x_max: real(parts[1])?,
            nx: count(parts[2])?,
            t_min: real(parts[3])?,
            t_max: real(parts[4])?,
            nt: count(parts[5])?,
        })
    }

    pub fn x_grid(&self) -> Vec<f64> {
        linspace(self.x_min, self.x_max, self.nx)
    }

    pub fn t_grid(&self) -> Vec<f64> {
        linspace(self.t_min, self.t_max, self.nt)
    }
}

/// `n` evenly spaced points from `a` to `b`; a single point sits at `a`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![a; n];
    }
    (0..n).map(|k| if k + 1 == n { b } else { a + (b - a) * k as f64 / (n - 1) as f64 }).collect()
}

/// Numerical tolerances exposed to the user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    /// Relative floor on `|tau|` defining the invertibility region.
    pub tau_floor: f64,
    pub lyap_tol: f64,
    pub inv_tol: f64,
    pub ode_tol: f64,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        let t = Tolerances::default();
        Self { tau_floor: t.tau_floor_rel, lyap_tol: t.lyap_tol, inv_tol: t.inv_tol, ode_tol: t.ode_tol }
    }
}

impl ToleranceSpec {
    pub fn to_tolerances(&self) -> Tolerances {
        Tolerances {
            tau_floor_rel: self.tau_floor,
            lyap_tol: self.lyap_tol,
            inv_tol: self.inv_tol,
            ode_tol: self.ode_tol,
            ..Tolerances::default()
        }
    }
}

/// Complete configuration of one run. Every field has a default, so `{}` is
/// a valid configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Number of moment levels `M` beyond `H_0`.
    pub order: usize,
    /// Taylor coefficients `c_0, c_1, ...` of the potential at 0.
    pub coefficients: Vec<f64>,
    pub grid: GridSpec,
    pub tolerances: ToleranceSpec,
    /// Margin of the signed moment split.
    pub margin: f64,
    /// Initial values of `h22` per moment level; missing levels use 0.
    pub h22_inits: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            order: 8,
            coefficients: Vec::new(),
            grid: GridSpec::default(),
            tolerances: ToleranceSpec::default(),
            margin: DEFAULT_MARGIN,
            h22_inits: Vec::new(),
        }
    }
}

/// Flag values that replace configuration fields when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub order: Option<usize>,
    pub grid: Option<String>,
    pub tol_tau_floor: Option<f64>,
    pub margin: Option<f64>,
    pub h22_inits: Vec<f64>,
}

impl RunConfig {
    /// Reads the configuration file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))
            }
        }
    }

    /// Applies flag overrides; flags win over the file.
    pub fn apply(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(m) = o.order {
            self.order = m;
        }
        if let Some(g) = &o.grid {
            self.grid = GridSpec::parse(g)?;
        }
        if let Some(t) = o.tol_tau_floor {
            self.tolerances.tau_floor = t;
        }
        if let Some(m) = o.margin {
            self.margin = m;
        }
        if !o.h22_inits.is_empty() {
            self.h22_inits = o.h22_inits.clone();
        }
        Ok(self)
    }

    /// Checks the grid counts, the tolerances and the finiteness of every value.
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if g.nx < 2 || g.nt < 2 {
            return Err(CliError::Config(format!("grid needs nx, nt >= 2, got {} and {}", g.nx, g.nt)));
        }
        let bounds = [g.x_min, g.x_max, g.t_min, g.t_max];
        if !bounds.iter().all(|v| v.is_finite()) || !(g.x_max > g.x_min) || !(g.t_max > g.t_min) {
            return Err(CliError::Config("grid bounds must be finite and increasing".into()));
        }
        let t = &self.tolerances;
        if ![t.tau_floor, t.lyap_tol, t.inv_tol, t.ode_tol].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(CliError::Config("tolerances must be positive".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(CliError::Config("margin must be positive".into()));
        }
        if !self.coefficients.iter().chain(&self.h22_inits).all(|v| v.is_finite()) {
            return Err(CliError::Config("coefficients and h22 initial values must be finite".into()));
        }
        Ok(())
    }

    /// Number of moments handed to the measure solver: the largest even
    /// count not exceeding `order + 1`.
    pub fn moment_window(&self) -> usize {
        self.order.div_ceil(2) * 2
    }

    /// Highest Taylor coefficient of the potential reproduced by the pipeline.
    pub fn trust_order(&self) -> usize {
        self.order.saturating_sub(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn flags_override_file_values() {
        let c: RunConfig = serde_json::from_str(r#"{"order": 4, "margin": 2.0}"#).unwrap();
        let o = Overrides { order: Some(6), grid: Some("-1,1,11,0,1,5".into()), ..Default::default() };
        let c = c.apply(&o).unwrap();
        assert_eq!(c.order, 6);
        assert_eq!(c.margin, 2.0);
        assert_eq!(c.grid.nx, 11);
        assert_eq!(c.moment_window(), 6);
    }

    #[test]
    fn unknown_fields_and_bad_grids_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"ordr": 4}"#).is_err());
        assert!(GridSpec::parse("0,1,2").is_err());
        let mut c = RunConfig::default();
        c.grid.nx = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn linspace_hits_both_ends() {
        let g = linspace(-5.0, 5.0, 1001);
        assert_eq!(g[0], -5.0);
        assert_eq!(g[1000], 5.0);
        assert_eq!(g[500], 0.0);
    }
}

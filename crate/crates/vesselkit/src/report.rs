//! Report records, their JSON files and the human-readable tables.

use std::path::Path;

use serde::Serialize;
use vesselkit_core::io::write_atomic;

use crate::CliError;

/// One line of a verification table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// Measured residual; `null` in JSON when not finite.
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= tol`.
    pub fn at_most(name: &str, value: f64, tol: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), value, tol, pass: value <= tol, detail: detail.into() }
    }

    /// Passes when `value >= tol`.
    pub fn at_least(name: &str, value: f64, tol: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), value, tol, pass: value >= tol, detail: detail.into() }
    }

    /// A failed check carrying the error that prevented the measurement.
    pub fn failed(name: &str, tol: f64, err: impl std::fmt::Display) -> Self {
        Self { name: name.into(), value: f64::NAN, tol, pass: false, detail: err.to_string() }
    }

    /// A check that does not apply to the input.
    pub fn skipped(name: &str, why: &str) -> Self {
        Self { name: name.into(), value: 0.0, tol: 0.0, pass: true, detail: format!("skipped: {why}") }
    }
}

/// Table with one `PASS`/`FAIL` line per check.
pub fn check_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(4).max(5);
    let mut out = format!("{:<width$}  {:>11}  {:>11}  RESULT\n", "CHECK", "VALUE", "TOL");
    for c in checks {
        out.push_str(&format!(
            "{:<width$}  {:>11.3e}  {:>11.3e}  {}{}\n",
            c.name,
            c.value,
            c.tol,
            if c.pass { "PASS" } else { "FAIL" },
            if c.detail.is_empty() { String::new() } else { format!("  ({})", c.detail) }
        ));
    }
    out
}

/// Pretty JSON with a trailing newline; floats use the shortest exact form.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Numeric(format!("cannot serialize report: {e}")))
}

/// Writes `text` atomically to `dir/name`, creating `dir` when missing.
pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    write_atomic(&path, text.as_bytes()).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

//! Deterministic example measures.

use vesselkit_core::spectrum::{Atom, MeasureMeta, SpectralMeasure};

use crate::CliError;

/// Names accepted by `vesselkit soliton`.
pub const NAMES: [&str; 3] = ["one-atom", "two-atom", "signed-two-atom"];

fn atom(mu: f64, w11: f64, w12: f64, w22: f64) -> Atom {
    Atom { mu, w11, w12, w22 }
}

/// The atoms of a bundled measure.
pub fn atoms(name: &str) -> Option<Vec<Atom>> {
    match name {
        "one-atom" => Some(vec![atom(1.0, 0.1, 0.0, 0.1)]),
        "two-atom" => Some(vec![atom(1.0, 0.1, 0.0, 0.1), atom(0.5, 0.05, 0.02, 0.1)]),
        "signed-two-atom" => Some(vec![atom(1.0, 0.1, 0.0, 0.1), atom(0.5, -0.05, 0.02, 0.1)]),
        _ => None,
    }
}

/// The bundled measure `name`, tagged with its name as source.
pub fn measure(name: &str) -> Result<SpectralMeasure, CliError> {
    let atoms = atoms(name).ok_or_else(|| CliError::UnknownName(name.to_string()))?;
    let meta = MeasureMeta { moment_window: 0, source: format!("bundled:{name}") };
    Ok(SpectralMeasure::new(atoms, meta)?)
}

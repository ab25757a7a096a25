//! Reading command inputs from disk.

use std::path::Path;

use daglattice::lattice::{self, LatticeFormat};
use daglattice::pipeline::{AcousticFeatures, DurationPlan};
use daglattice::{validate, DagLattice, Error, TargetSequence};
use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::report::{exit, Failure};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| {
        Failure::new(
            exit::PARSE,
            format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()),
        )
    })
}

/// Loads a lattice (`.json` as JSON, anything else as binary) and, unless
/// `skip_validation` is set, rejects it when any invariant fails.
pub fn lattice(path: &Path, skip_validation: bool) -> Result<DagLattice, Failure> {
    let lattice = lattice::load(path, LatticeFormat::from_path(path))?;
    if !skip_validation {
        let report = validate(&lattice);
        if let Some(first) = report.violations.first() {
            return Err(Failure::new(
                exit::SHAPE,
                format!(
                    "{}: {} invariant violation(s), first: {first} (pass --skip-validation to proceed)",
                    path.display(),
                    report.violations.len()
                ),
            ));
        }
    }
    Ok(lattice)
}

pub fn target(path: &Path) -> Result<TargetSequence, Failure> {
    let tokens: Vec<usize> = read_json(path)?;
    Ok(TargetSequence::new(tokens)?)
}

pub fn durations(path: &Path) -> Result<DurationPlan, Failure> {
    Ok(DurationPlan(read_json(path)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeaturesFile {
    mel: Vec<Vec<f64>>,
    duration: Vec<f64>,
    pitch: Vec<f64>,
    energy: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TtsFile {
    predicted: FeaturesFile,
    ground_truth: FeaturesFile,
}

fn rows_to_matrix(what: &str, rows: Vec<Vec<f64>>) -> Result<Array2<f64>, Failure> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Failure::new(
            exit::SHAPE,
            format!("{what}: row {i} has {} columns, expected {cols}", row.len()),
        ));
    }
    let n = rows.len();
    Ok(Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect()).expect("rectangular"))
}

fn features(what: &str, f: FeaturesFile) -> Result<AcousticFeatures, Failure> {
    Ok(AcousticFeatures {
        mel: rows_to_matrix(what, f.mel)?,
        duration: Array1::from(f.duration),
        pitch: Array1::from(f.pitch),
        energy: Array1::from(f.energy),
    })
}

/// `{"predicted": {...}, "ground_truth": {...}}`, each side holding `mel`
/// (frames x bins), `duration`, `pitch` and `energy` (per token).
pub fn tts(path: &Path) -> Result<(AcousticFeatures, AcousticFeatures), Failure> {
    let file: TtsFile = read_json(path)?;
    Ok((
        features("predicted.mel", file.predicted)?,
        features("ground_truth.mel", file.ground_truth)?,
    ))
}

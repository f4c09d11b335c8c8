use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::vignette::ComplexVignette;

/// Per-range-column reference factor applied to sigma-nought.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationProfile {
    gain: Vec<f64>,
}

/// Whether the profile divides power (amplitude by `sqrt(gain)`) or amplitude.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CalibrationMode {
    #[default]
    Power,
    Amplitude,
}

impl CalibrationProfile {
    pub fn new(gain: Vec<f64>) -> Result<Self> {
        if let Some((i, g)) = gain
            .iter()
            .enumerate()
            .find(|(_, g)| !(g.is_finite() && **g > 0.0))
        {
            return Err(Error::Invariant(format!(
                "calibration gain at column {i} must be positive and finite, got {g}"
            )));
        }
        Ok(Self { gain })
    }

    /// Identity profile used for synthetic data.
    pub fn ones(cols: usize) -> Self {
        Self {
            gain: vec![1.0; cols],
        }
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    pub fn len(&self) -> usize {
        self.gain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gain.is_empty()
    }

    /// Loads a profile from JSON, either a bare array or `{"gain": [...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Stored {
            Bare(Vec<f64>),
            Wrapped { gain: Vec<f64> },
        }
        let gain = match serde_json::from_slice::<Stored>(&fs::read(path)?)? {
            Stored::Bare(g) | Stored::Wrapped { gain: g } => g,
        };
        Self::new(gain)
    }
}

pub fn calibrate_sigma0(v: &ComplexVignette, profile: &CalibrationProfile) -> Result<ComplexVignette> {
    calibrate_sigma0_with(v, profile, CalibrationMode::Power)
}

pub fn calibrate_sigma0_with(
    v: &ComplexVignette,
    profile: &CalibrationProfile,
    mode: CalibrationMode,
) -> Result<ComplexVignette> {
    if profile.len() != v.cols() {
        return Err(Error::Shape(format!(
            "calibration profile has {} entries, vignette has {} range columns",
            profile.len(),
            v.cols()
        )));
    }
    let factors: Vec<f64> = profile
        .gain
        .iter()
        .map(|&g| match mode {
            CalibrationMode::Power => 1.0 / g.sqrt(),
            CalibrationMode::Amplitude => 1.0 / g,
        })
        .collect();
    let mut out = v.clone();
    for mut row in out.data.outer_iter_mut() {
        for (c, f) in row.iter_mut().zip(&factors) {
            *c *= *f;
        }
    }
    Ok(out)
}

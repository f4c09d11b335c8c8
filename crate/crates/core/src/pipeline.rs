//! From a complex vignette to the four encoder input stacks.

use crate::doppler::{doppler_on_subapertures_with, doppler_on_vignette, DceConfig};
use crate::encoder::{fit_grid, normalize_stack, InputStack, Representation};
use crate::error::{Error, Result};
use crate::preprocess::{
    calibrate_sigma0_with, subaperture_decompose_with, vignette_magnitude_decimated, CalibrationProfile, SdConfig,
};
use crate::vignette::ComplexVignette;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub sd: SdConfig,
    pub dce: DceConfig,
    /// Every decimated grid is center-cropped or edge-padded to this size.
    pub dims: (usize, usize),
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sd: SdConfig::default(),
            dce: DceConfig::default(),
            dims: (64, 64),
        }
    }
}

/// Builds the requested representations, in the order given.
pub fn build_representations(
    v: &ComplexVignette,
    profile: &CalibrationProfile,
    cfg: &PipelineConfig,
    reps: &[Representation],
) -> Result<Vec<InputStack>> {
    let needs_subap = reps
        .iter()
        .any(|r| matches!(r, Representation::Subap | Representation::DopSubap));
    let subaps = if needs_subap {
        Some(subaperture_decompose_with(v, profile, &cfg.sd).map_err(Error::in_stage("subaperture decomposition"))?)
    } else {
        None
    };
    let (rows, cols) = cfg.dims;
    let fit = |g: &ndarray::Array2<f64>| fit_grid(g, rows, cols);
    reps.iter()
        .map(|&rep| {
            let channels = match rep {
                Representation::Vig => vec![fit(
                    &vignette_magnitude_decimated(v, profile, &cfg.sd).map_err(Error::in_stage("decimation"))?,
                )],
                Representation::Subap => subaps.as_ref().unwrap().sub_mag_decimated.iter().map(fit).collect(),
                Representation::DopVig => {
                    let calibrated = calibrate_sigma0_with(v, profile, cfg.sd.calibration)
                        .map_err(Error::in_stage("calibration"))?;
                    let d = doppler_on_vignette(calibrated.data.view(), v.prf, &v.id, &cfg.dce, cfg.sd.decimation)
                        .map_err(Error::in_stage("doppler estimation"))?;
                    vec![fit(&d.data)]
                }
                Representation::DopSubap => {
                    doppler_on_subapertures_with(subaps.as_ref().unwrap(), v.prf, &cfg.dce, cfg.sd.decimation)
                        .map_err(Error::in_stage("doppler estimation"))?
                        .iter()
                        .map(|d| fit(&d.data))
                        .collect()
                }
            };
            normalize_stack(v.id.clone(), &channels, rep).map_err(Error::in_stage("normalization"))
        })
        .collect()
}

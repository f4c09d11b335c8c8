//! Subaperture decomposition pipeline.
//!
//! calibration -> azimuth DFT -> Hamming compensation -> sub-band windowing ->
//! azimuth inverse DFT per sub-band -> detection -> box-filter decimation.

mod calibrate;
mod decimate;
mod spectrum;
mod window;

pub use calibrate::{calibrate_sigma0, calibrate_sigma0_with, CalibrationMode, CalibrationProfile};
pub use decimate::{boxfilter_decimate, DEFAULT_DECIMATION};
pub use spectrum::{
    azimuth_dft, azimuth_idft, bin_at_position, centered_bin, centered_position, dft_columns,
    idft_columns, AzimuthSpectrum,
};
pub use window::{
    band_layout, band_windows, full_band_window, hamming_apply, hamming_compensate, hamming_weight,
    make_subapertures, make_subapertures_with_overlap, SubBand, DEFAULT_ALPHA,
};

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vignette::ComplexVignette;

/// How complex samples are detected before decimation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Detection {
    #[default]
    Magnitude,
    Power,
}

impl Detection {
    pub fn detect(self, data: &Array2<Complex64>) -> Array2<f64> {
        match self {
            Detection::Magnitude => data.mapv(|c| c.norm()),
            Detection::Power => data.mapv(|c| c.norm_sqr()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdConfig {
    pub n_sub: usize,
    pub alpha: f64,
    /// Fractional widening of each sub-band window beyond its nominal band.
    pub overlap: f64,
    pub decimation: usize,
    pub detection: Detection,
    pub calibration: CalibrationMode,
}

impl Default for SdConfig {
    fn default() -> Self {
        Self {
            n_sub: 4,
            alpha: DEFAULT_ALPHA,
            overlap: 0.0,
            decimation: DEFAULT_DECIMATION,
            detection: Detection::Magnitude,
            calibration: CalibrationMode::Power,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubapertureSet {
    pub source_id: String,
    pub n_sub: usize,
    /// Full-resolution time-domain sub-looks.
    pub sub_slc: Vec<Array2<Complex64>>,
    /// Detected and decimated sub-looks.
    pub sub_mag_decimated: Vec<Array2<f64>>,
    pub band_centers_hz: Vec<f64>,
}

pub fn subaperture_decompose(
    v: &ComplexVignette,
    profile: &CalibrationProfile,
    n_sub: usize,
) -> Result<SubapertureSet> {
    subaperture_decompose_with(
        v,
        profile,
        &SdConfig {
            n_sub,
            ..SdConfig::default()
        },
    )
}

pub fn subaperture_decompose_with(
    v: &ComplexVignette,
    profile: &CalibrationProfile,
    cfg: &SdConfig,
) -> Result<SubapertureSet> {
    let calibrated = calibrate_sigma0_with(v, profile, cfg.calibration)
        .map_err(Error::in_stage("calibration"))?;
    let spectrum = azimuth_dft(&calibrated);
    let flat = hamming_compensate(&spectrum, cfg.alpha).map_err(Error::in_stage("compensation"))?;
    let subs = make_subapertures_with_overlap(&flat, cfg.n_sub, cfg.alpha, cfg.overlap)
        .map_err(Error::in_stage("subaperture generation"))?;
    let m = spectrum.bins();
    let band_centers_hz = band_layout(m, cfg.n_sub, cfg.overlap)
        .iter()
        .map(|b| b.center_hz(m, v.prf))
        .collect();
    let looks: Vec<(Array2<Complex64>, Array2<f64>)> = subs
        .par_iter()
        .map(|s| {
            let slc = idft_columns(&s.data);
            let detected = cfg.detection.detect(&slc);
            boxfilter_decimate(&detected, cfg.decimation).map(|d| (slc, d))
        })
        .collect::<Result<_>>()
        .map_err(Error::in_stage("decimation"))?;
    let (sub_slc, sub_mag_decimated) = looks.into_iter().unzip();
    Ok(SubapertureSet {
        source_id: v.id.clone(),
        n_sub: cfg.n_sub,
        sub_slc,
        sub_mag_decimated,
        band_centers_hz,
    })
}

/// Detected, decimated full-aperture vignette after calibration.
pub fn vignette_magnitude_decimated(
    v: &ComplexVignette,
    profile: &CalibrationProfile,
    cfg: &SdConfig,
) -> Result<Array2<f64>> {
    let calibrated = calibrate_sigma0_with(v, profile, cfg.calibration)?;
    boxfilter_decimate(&cfg.detection.detect(&calibrated.data), cfg.decimation)
}

//! 8-bit PNG previews of decimated magnitude and Doppler fields.

use ndarray::Array2;
use sarret::doppler::{doppler_on_subapertures_with, doppler_on_vignette};
use sarret::encoder::Representation;
use sarret::pipeline::PipelineConfig;
use sarret::preprocess::{calibrate_sigma0_with, subaperture_decompose_with, vignette_magnitude_decimated, CalibrationProfile};
use sarret::{ComplexVignette, Error, Result};

/// Bumped whenever the rendering changes; part of the cache key.
pub const STRETCH_VERSION: u32 = 1;

const LOW_PERCENTILE: f64 = 2.0;
const HIGH_PERCENTILE: f64 = 98.0;

/// Field shown for a representation. Sub-aperture variants show the mean over
/// sub-looks.
pub fn thumbnail_field(v: &ComplexVignette, rep: Representation, cfg: &PipelineConfig) -> Result<Array2<f64>> {
    let profile = CalibrationProfile::ones(v.cols());
    match rep {
        Representation::Vig => vignette_magnitude_decimated(v, &profile, &cfg.sd),
        Representation::Subap => {
            let ss = subaperture_decompose_with(v, &profile, &cfg.sd)?;
            Ok(mean_of(&ss.sub_mag_decimated))
        }
        Representation::DopVig => {
            let cal = calibrate_sigma0_with(v, &profile, cfg.sd.calibration)?;
            Ok(doppler_on_vignette(cal.data.view(), v.prf, &v.id, &cfg.dce, cfg.sd.decimation)?.data)
        }
        Representation::DopSubap => {
            let ss = subaperture_decompose_with(v, &profile, &cfg.sd)?;
            let fields = doppler_on_subapertures_with(&ss, v.prf, &cfg.dce, cfg.sd.decimation)?;
            let grids: Vec<Array2<f64>> = fields.into_iter().map(|f| f.data).collect();
            Ok(mean_of(&grids))
        }
    }
}

fn mean_of(grids: &[Array2<f64>]) -> Array2<f64> {
    let mut acc = grids[0].clone();
    for g in &grids[1..] {
        acc += g;
    }
    acc / grids.len() as f64
}

/// Linear interpolation between closest ranks; `sorted` must be non-empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted_values(grid: &Array2<f64>) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Shape("empty thumbnail grid".into()));
    }
    let mut v: Vec<f64> = grid.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Err(Error::Invariant("thumbnail grid has no finite values".into()));
    }
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Grayscale stretch between the 2nd and 98th percentiles.
pub fn stretch_gray(grid: &Array2<f64>) -> Result<Vec<u8>> {
    let v = sorted_values(grid)?;
    let (lo, hi) = (percentile(&v, LOW_PERCENTILE), percentile(&v, HIGH_PERCENTILE));
    Ok(grid.iter().map(|&x| to_byte(unit(x, lo, hi))).collect())
}

/// Blue-white-red map centred on zero, bounded by the larger absolute
/// percentile so that zero Doppler is always white.
pub fn stretch_diverging(grid: &Array2<f64>) -> Result<Vec<u8>> {
    let v = sorted_values(grid)?;
    let bound = percentile(&v, LOW_PERCENTILE).abs().max(percentile(&v, HIGH_PERCENTILE).abs());
    let mut out = Vec::with_capacity(grid.len() * 3);
    for &x in grid.iter() {
        let t = unit(x, -bound, bound);
        let (r, g, b) = if t < 0.5 {
            let s = t * 2.0;
            (s, s, 1.0)
        } else {
            let s = (1.0 - t) * 2.0;
            (1.0, s, s)
        };
        out.extend([to_byte(r), to_byte(g), to_byte(b)]);
    }
    Ok(out)
}

fn unit(x: f64, lo: f64, hi: f64) -> f64 {
    if !x.is_finite() {
        return 0.5;
    }
    if hi > lo {
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

fn to_byte(t: f64) -> u8 {
    (t * 255.0).round() as u8
}

pub fn encode_png(grid: &Array2<f64>, diverging: bool) -> Result<Vec<u8>> {
    let (rows, cols) = grid.dim();
    let (pixels, color) = if diverging {
        (stretch_diverging(grid)?, png::ColorType::Rgb)
    } else {
        (stretch_gray(grid)?, png::ColorType::Grayscale)
    };
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, cols as u32, rows as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        w.write_image_data(&pixels).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(buf)
}

pub fn render_thumbnail(v: &ComplexVignette, rep: Representation, cfg: &PipelineConfig) -> Result<Vec<u8>> {
    let field = thumbnail_field(v, rep, cfg)?;
    encode_png(&field, rep.is_doppler())
}

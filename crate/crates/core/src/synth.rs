//! Parametric synthetic vignettes standing in for the ten phenomenon classes.
//!
//! Each class defines a scene of three fields on the ground grid: a real
//! intensity texture `t` (mean 1, except low wind areas at -10 dB), a surface
//! Doppler anomaly `f_d` in Hz and a spectral broadening weight `w` in
//! `[0, 1]`. A vignette is then built as follows:
//!
//! 1. two independent circular complex Gaussian speckle fields, azimuth-shaped
//!    by a narrow and a wide Gaussian Doppler envelope (standard deviation
//!    0.15 and 0.30 of the PRF), mixed as `sqrt(1 - w) s_n + sqrt(w) s_w`;
//! 2. multiplication by `sqrt(t g)` with `g` a unit-mean gamma fluctuation of
//!    integer shape `speckle_looks`;
//! 3. a phase history `exp(j 2 pi / prf * sum_{m' <= m} f_d[m', n])` that
//!    shifts the local Doppler spectrum by `f_d`;
//! 4. optional azimuth system weighting: every column's azimuth spectrum is
//!    multiplied by a generalized Hamming window (peak 1 at zero Doppler) and
//!    rescaled to preserve mean power, as an SLC processor would do.
//!
//! With `surface_motion` off, steps 1 and 3 reduce to i.i.d. white speckle and
//! no phase history. A non-zero `doppler_ramp_hz` finally multiplies azimuth
//! line `m` by `exp(j 2 pi f m / prf)`.
//!
//! Random draws come from independent sub-streams of [`SarRng`] for the scene
//! (tag 1), the gamma fluctuation (tag 2) and the two speckle fields (tags 3
//! and 4), all derived from `seed` and the class id.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::preprocess::{centered_bin, dft_columns, full_band_window, idft_columns};
use crate::rng::SarRng;
use crate::vignette::{apply_ramp, ClassLabel, ComplexVignette, VignetteMeta};

pub const MIN_SYNTH_DIM: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub class_id: u8,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub speckle_looks: u32,
    pub doppler_ramp_hz: f64,
    /// Class-dependent surface Doppler anomaly and spectral broadening.
    pub surface_motion: bool,
    /// Hamming coefficient of the azimuth system response; `None` leaves the
    /// speckle spectrally white.
    pub azimuth_weighting: Option<f64>,
}

impl SynthParams {
    pub fn new(class: ClassLabel, seed: u64) -> Self {
        Self {
            class_id: class.index(),
            seed,
            rows: 512,
            cols: 512,
            speckle_looks: 4,
            doppler_ramp_hz: 0.0,
            surface_motion: true,
            azimuth_weighting: Some(0.75),
        }
    }

    pub fn with_size(mut self, rows: usize, cols: usize) -> Self {
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn without_motion(mut self) -> Self {
        self.surface_motion = false;
        self
    }

    pub fn with_ramp(mut self, hz: f64) -> Self {
        self.doppler_ramp_hz = hz;
        self
    }

    pub fn validate(&self) -> Result<ClassLabel> {
        let class = ClassLabel::from_index(self.class_id)?;
        if self.rows < MIN_SYNTH_DIM || self.cols < MIN_SYNTH_DIM {
            return Err(Error::InvalidArgument(format!(
                "synthetic vignettes need at least {MIN_SYNTH_DIM}x{MIN_SYNTH_DIM} samples, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.speckle_looks == 0 {
            return Err(Error::InvalidArgument("speckle_looks must be positive".into()));
        }
        if let Some(a) = self.azimuth_weighting {
            if !(0.5..=1.0).contains(&a) {
                return Err(Error::InvalidArgument(format!("azimuth weighting {a} outside [0.5, 1]")));
            }
        }
        Ok(class)
    }
}

/// Acquisition geometry of synthetic vignettes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthGeometry {
    pub prf: f64,
    pub azimuth_spacing: f64,
    pub range_spacing: f64,
}

impl Default for SynthGeometry {
    fn default() -> Self {
        Self {
            prf: 1600.0,
            azimuth_spacing: 5.0,
            range_spacing: 5.0,
        }
    }
}

pub fn synth_id(class: ClassLabel, seed: u64) -> String {
    format!("syn-{}-{seed:016x}", class.abbreviation().to_ascii_lowercase())
}

pub fn synth_vignette(p: &SynthParams, geom: &SynthGeometry) -> Result<ComplexVignette> {
    let class = p.validate()?;
    if p.doppler_ramp_hz.abs() > geom.prf / 2.0 {
        return Err(Error::InvalidArgument(format!(
            "ramp {} Hz exceeds prf/2",
            p.doppler_ramp_hz
        )));
    }
    let root = SarRng::new(p.seed).substream(class.index() as u64);
    let grid = Grid {
        rows: p.rows,
        cols: p.cols,
        dy: geom.azimuth_spacing,
        dx: geom.range_spacing,
    };
    let scene = class_scene(class, &grid, &mut root.substream(1));

    let mut fluct = root.substream(2);
    let gain = Array2::from_shape_fn((p.rows, p.cols), |(m, n)| {
        (scene.texture[[m, n]] * fluct.gamma_unit_mean(p.speckle_looks)).sqrt()
    });
    let mut data = if p.surface_motion {
        let narrow = shaped_speckle(p.rows, p.cols, 0.15, &mut root.substream(3));
        let wide = shaped_speckle(p.rows, p.cols, 0.30, &mut root.substream(4));
        let mut x = Array2::from_shape_fn((p.rows, p.cols), |(m, n)| {
            let w = scene.broadening[[m, n]];
            (narrow[[m, n]] * (1.0 - w).sqrt() + wide[[m, n]] * w.sqrt()) * gain[[m, n]]
        });
        for (mut col, fd) in x.columns_mut().into_iter().zip(scene.doppler_hz.columns()) {
            let mut phase = 0.0;
            for (c, f) in col.iter_mut().zip(fd) {
                phase += 2.0 * PI * f / geom.prf;
                *c *= Complex64::from_polar(1.0, phase);
            }
        }
        x
    } else {
        let mut speck = root.substream(3);
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        Array2::from_shape_fn((p.rows, p.cols), |(m, n)| {
            Complex64::new(speck.normal(), speck.normal()) * inv_sqrt2 * gain[[m, n]]
        })
    };

    if let Some(alpha) = p.azimuth_weighting {
        let w = full_band_window(p.rows, alpha);
        let rms = (w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64).sqrt();
        let mut spec = dft_columns(&data);
        for (mut row, wk) in spec.outer_iter_mut().zip(&w) {
            let f = wk / rms;
            row.mapv_inplace(|c| c * f);
        }
        data = idft_columns(&spec);
    }
    apply_ramp(&mut data, p.doppler_ramp_hz, geom.prf);

    ComplexVignette::new(
        synth_id(class, p.seed),
        data,
        geom.prf,
        geom.azimuth_spacing,
        geom.range_spacing,
        VignetteMeta::with_class(class),
    )
}

struct Grid {
    rows: usize,
    cols: usize,
    /// azimuth spacing, m
    dy: f64,
    /// range spacing, m
    dx: f64,
}

impl Grid {
    fn extent(&self) -> (f64, f64) {
        (self.rows as f64 * self.dy, self.cols as f64 * self.dx)
    }

    fn map(&self, mut f: impl FnMut(f64, f64) -> f64) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(m, n)| f(m as f64 * self.dy, n as f64 * self.dx))
    }
}

/// Circular complex Gaussian speckle of unit mean power whose azimuth
/// spectrum follows a Gaussian envelope of standard deviation `width * prf`.
fn shaped_speckle(rows: usize, cols: usize, width: f64, rng: &mut SarRng) -> Array2<Complex64> {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let white = Array2::from_shape_fn((rows, cols), |_| Complex64::new(rng.normal(), rng.normal()) * inv_sqrt2);
    let envelope: Vec<f64> = (0..rows)
        .map(|k| {
            let f = centered_bin(k, rows) as f64 / rows as f64;
            (-f * f / (4.0 * width * width)).exp()
        })
        .collect();
    let rms = (envelope.iter().map(|e| e * e).sum::<f64>() / rows as f64).sqrt();
    let mut spec = dft_columns(&white);
    for (mut row, e) in spec.outer_iter_mut().zip(&envelope) {
        let g = e / rms;
        row.mapv_inplace(|c| c * g);
    }
    idft_columns(&spec)
}

struct Scene {
    texture: Array2<f64>,
    /// surface Doppler anomaly, Hz
    doppler_hz: Array2<f64>,
    /// weight of the wide Doppler envelope, in [0, 1]
    broadening: Array2<f64>,
}

fn uniform_field(grid: &Grid, v: f64) -> Array2<f64> {
    Array2::from_elem((grid.rows, grid.cols), v)
}

fn class_scene(class: ClassLabel, grid: &Grid, rng: &mut SarRng) -> Scene {
    let (texture, doppler_hz, broadening) = match class {
        ClassLabel::Pow => {
            let wavelength = rng.uniform_range(100.0, 400.0);
            let theta = rng.uniform_range(0.0, PI);
            let phase = rng.uniform_range(0.0, 2.0 * PI);
            let (c, s) = (theta.cos(), theta.sin());
            let arg = grid.map(|y, x| 2.0 * PI * (c * x + s * y) / wavelength + phase);
            // orbital velocity leads the tilt modulation by a quarter period
            (
                arg.mapv(|a| 1.0 + 0.8 * a.sin()),
                arg.mapv(|a| 25.0 * a.cos()),
                arg.mapv(|a| 0.5 + 0.3 * a.sin()),
            )
        }
        ClassLabel::Ws => {
            let streaks = streak_field(grid, rng);
            let drift = rng.uniform_range(15.0, 30.0);
            (
                streaks.mapv(|g| (0.6 * g).exp()),
                streaks.mapv(|g| drift + 6.0 * g),
                uniform_field(grid, 0.7),
            )
        }
        ClassLabel::Mcc => {
            let corr = rng.uniform_range(250.0, 500.0);
            let cells = smooth_field(grid, corr, rng);
            (
                cells.mapv(|g| if g > 0.3 { 1.8 } else { 0.7 }),
                cells.mapv(|g| 15.0 * g),
                cells.mapv(|g| if g > 0.3 { 0.8 } else { 0.4 }),
            )
        }
        ClassLabel::Rc => {
            let (ey, ex) = grid.extent();
            let cy = rng.uniform_range(0.2, 0.8) * ey;
            let cx = rng.uniform_range(0.2, 0.8) * ex;
            let radius = rng.uniform_range(0.15, 0.3) * ey.min(ex);
            let texture = grid.map(|y, x| {
                let r = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                if r < radius {
                    0.35
                } else if r < 1.2 * radius {
                    2.2
                } else {
                    1.0
                }
            });
            // radial outflow of the downdraft, seen along the range axis
            let outflow = grid.map(|y, x| {
                let (dy, dx) = ((y - cy) / radius, (x - cx) / radius);
                40.0 * dx * (-(dx * dx + dy * dy) / 2.0).exp()
            });
            let spread = grid.map(|y, x| {
                let r = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                if r < 1.2 * radius {
                    0.95
                } else {
                    0.4
                }
            });
            (texture, outflow, spread)
        }
        ClassLabel::Bs => {
            let corr = rng.uniform_range(300.0, 600.0);
            let field = smooth_field(grid, corr, rng);
            let slick = field.mapv(|g| g.abs() < 0.08);
            (
                slick.mapv(|s| if s { 0.15 } else { 1.0 }),
                uniform_field(grid, 8.0),
                slick.mapv(|s| if s { 0.0 } else { 0.2 }),
            )
        }
        ClassLabel::Si => {
            let (ey, ex) = grid.extent();
            let n = 6 + rng.below(11);
            let cells: Vec<(f64, f64, f64, f64)> = (0..n)
                .map(|_| {
                    (
                        rng.uniform() * ey,
                        rng.uniform() * ex,
                        rng.uniform_range(0.2, 2.5),
                        rng.uniform_range(-5.0, 5.0),
                    )
                })
                .collect();
            let floe = grid.map(|y, x| {
                cells
                    .iter()
                    .enumerate()
                    .map(|(i, &(cy, cx, _, _))| ((y - cy).powi(2) + (x - cx).powi(2), i))
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map_or(0.0, |(_, i)| i as f64)
            });
            (
                floe.mapv(|i| cells[i as usize].2),
                floe.mapv(|i| cells[i as usize].3),
                uniform_field(grid, 0.0),
            )
        }
        ClassLabel::Ic => {
            let (ey, ex) = grid.extent();
            let n = 3 + rng.below(6);
            let sigma = 8.0;
            let targets: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.uniform_range(0.05, 0.95) * ey, rng.uniform_range(0.05, 0.95) * ex))
                .collect();
            let bump = grid.map(|y, x| {
                targets
                    .iter()
                    .map(|&(ty, tx)| {
                        let d2 = (y - ty).powi(2) + (x - tx).powi(2);
                        (-d2 / (2.0 * sigma * sigma)).exp()
                    })
                    .sum::<f64>()
                    .min(1.0)
            });
            // grounded ice is still; the water around it drifts
            (
                bump.mapv(|b| 0.3 + 150.0 * b),
                bump.mapv(|b| 10.0 * (1.0 - b)),
                bump.mapv(|b| 0.3 * (1.0 - b)),
            )
        }
        ClassLabel::Lwa => (uniform_field(grid, 0.1), uniform_field(grid, 0.0), uniform_field(grid, 0.05)),
        ClassLabel::Af => {
            let edge = edge_field(grid, 30.0, rng);
            let streaks = streak_field(grid, rng);
            let texture = ndarray::Zip::from(&edge)
                .and(&streaks)
                .map_collect(|&e, &s| e * 1.6 * (0.5 * s).exp() + (1.0 - e) * 0.6);
            (texture, edge.mapv(|e| -15.0 + 35.0 * e), edge.mapv(|e| 0.3 + 0.5 * e))
        }
        ClassLabel::Of => {
            let edge = edge_field(grid, 10.0, rng);
            // current jet along the front
            (
                edge.mapv(|e| 0.7 + 0.8 * e),
                edge.mapv(|e| 200.0 * e * (1.0 - e) - 10.0),
                uniform_field(grid, 0.4),
            )
        }
    };
    let texture = if class == ClassLabel::Lwa { texture } else { normalize_mean(texture) };
    Scene { texture, doppler_hz, broadening }
}

fn normalize_mean(mut t: Array2<f64>) -> Array2<f64> {
    let mean = t.mean().unwrap_or(1.0);
    if mean > 0.0 {
        t.mapv_inplace(|v| v / mean);
    }
    t
}

/// Smooth step in `[0, 1]` across a random line through the central region.
fn edge_field(grid: &Grid, width_m: f64, rng: &mut SarRng) -> Array2<f64> {
    let (ey, ex) = grid.extent();
    let py = rng.uniform_range(0.3, 0.7) * ey;
    let px = rng.uniform_range(0.3, 0.7) * ex;
    let theta = rng.uniform_range(0.0, 2.0 * PI);
    let (ny, nx) = (theta.sin(), theta.cos());
    grid.map(|y, x| {
        let d = (y - py) * ny + (x - px) * nx;
        1.0 / (1.0 + (-d / width_m).exp())
    })
}

/// Zero-mean, unit-variance 1-D low-pass noise varying across a random
/// direction, constant along it.
fn streak_field(grid: &Grid, rng: &mut SarRng) -> Array2<f64> {
    let corr = rng.uniform_range(60.0, 150.0);
    let theta = rng.uniform_range(0.0, PI);
    let (dir_y, dir_x) = (theta.sin(), theta.cos());
    let (ey, ex) = grid.extent();
    // u is the coordinate perpendicular to the streak direction
    let reach = ey.abs() + ex.abs();
    let step = corr / 2.0;
    let n = (2.0 * reach / step).ceil() as usize + 8;
    let raw: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let smooth = gaussian_smooth_1d(&raw, 1.0);
    let values = grid.map(|y, x| {
        let u = -dir_y * x + dir_x * y + reach;
        let pos = u / step + 4.0;
        let i = (pos.floor() as usize).min(n - 2);
        let frac = pos - i as f64;
        smooth[i] * (1.0 - frac) + smooth[i + 1] * frac
    });
    standardize(values)
}

/// Zero-mean, unit-variance isotropic low-pass noise with correlation length
/// around `corr_m`, drawn on a coarse lattice and bilinearly interpolated.
fn smooth_field(grid: &Grid, corr_m: f64, rng: &mut SarRng) -> Array2<f64> {
    let (ey, ex) = grid.extent();
    let cell = corr_m / 2.0;
    let cr = (ey / cell).ceil() as usize + 8;
    let cc = (ex / cell).ceil() as usize + 8;
    let raw = Array2::from_shape_fn((cr, cc), |_| rng.normal());
    let mut rows_smoothed = Array2::zeros((cr, cc));
    for (i, row) in raw.outer_iter().enumerate() {
        let s = gaussian_smooth_1d(&row.to_vec(), 1.0);
        rows_smoothed.row_mut(i).assign(&ndarray::Array1::from(s));
    }
    let mut coarse = Array2::zeros((cr, cc));
    for j in 0..cc {
        let s = gaussian_smooth_1d(&rows_smoothed.column(j).to_vec(), 1.0);
        coarse.column_mut(j).assign(&ndarray::Array1::from(s));
    }
    let values = grid.map(|y, x| {
        let py = y / cell + 4.0;
        let px = x / cell + 4.0;
        let (i, j) = (py.floor() as usize, px.floor() as usize);
        let (fy, fx) = (py - i as f64, px - j as f64);
        let i1 = (i + 1).min(cr - 1);
        let j1 = (j + 1).min(cc - 1);
        coarse[[i, j]] * (1.0 - fy) * (1.0 - fx)
            + coarse[[i1, j]] * fy * (1.0 - fx)
            + coarse[[i, j1]] * (1.0 - fy) * fx
            + coarse[[i1, j1]] * fy * fx
    });
    standardize(values)
}

fn gaussian_smooth_1d(x: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let n = x.len() as i64;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (o, w) in (-radius..=radius).zip(&kernel) {
                let j = i + o;
                if j >= 0 && j < n {
                    acc += w * x[j as usize];
                    wsum += w;
                }
            }
            acc / wsum
        })
        .collect()
}

fn standardize(mut a: Array2<f64>) -> Array2<f64> {
    let n = a.len() as f64;
    let mean = a.sum() / n;
    let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    a.mapv_inplace(|v| (v - mean) / std);
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_inputs() {
        let p = SynthParams::new(ClassLabel::Mcc, 99).with_size(64, 48);
        let a = synth_vignette(&p, &SynthGeometry::default()).unwrap();
        let b = synth_vignette(&p, &SynthGeometry::default()).unwrap();
        assert_eq!(a.data, b.data);
        let c = synth_vignette(&SynthParams { seed: 100, ..p }, &SynthGeometry::default()).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn zero_ramp_matches_unramped() {
        let p = SynthParams::new(ClassLabel::Pow, 5).with_size(40, 40);
        let a = synth_vignette(&p, &SynthGeometry::default()).unwrap();
        let b = synth_vignette(&p.clone().with_ramp(0.0), &SynthGeometry::default()).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn low_wind_is_ten_db_below_waves() {
        let geom = SynthGeometry::default();
        let lwa = synth_vignette(&SynthParams::new(ClassLabel::Lwa, 1).with_size(256, 256), &geom).unwrap();
        let pow = synth_vignette(&SynthParams::new(ClassLabel::Pow, 1).with_size(256, 256), &geom).unwrap();
        let ratio = lwa.mean_power() / pow.mean_power();
        assert!((ratio - 0.1).abs() <= 0.02, "ratio {ratio}");
    }

    #[test]
    fn every_class_builds_finite_labelled_vignettes() {
        for class in ClassLabel::ALL {
            let v = synth_vignette(&SynthParams::new(class, 3).with_size(64, 64), &SynthGeometry::default()).unwrap();
            assert_eq!(v.meta.class(), Some(class));
            v.validate().unwrap();
            assert!(v.mean_power() > 0.0);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let geom = SynthGeometry::default();
        let mut p = SynthParams::new(ClassLabel::Pow, 0).with_size(31, 64);
        assert!(synth_vignette(&p, &geom).is_err());
        p.rows = 64;
        p.class_id = 10;
        assert!(synth_vignette(&p, &geom).is_err());
        p.class_id = 0;
        p.doppler_ramp_hz = 900.0;
        assert!(synth_vignette(&p, &geom).is_err());
    }

    #[test]
    fn weighted_spectrum_follows_window_shape() {
        let p = SynthParams::new(ClassLabel::Lwa, 8).with_size(128, 128).without_motion();
        let v = synth_vignette(&p, &SynthGeometry::default()).unwrap();
        let spec = dft_columns(&v.data);
        let power = |k: usize| spec.row(k).iter().map(|c| c.norm_sqr()).sum::<f64>();
        // DC bin vs band edge: expected power ratio 1 / 0.5^2 = 4
        let dc: f64 = (0..3).map(|k| power(k) + power(127 - k)).sum();
        let edge: f64 = (62..66).map(power).sum::<f64>() * 6.0 / 4.0;
        let ratio = dc / edge;
        assert!(ratio > 2.5 && ratio < 6.0, "ratio {ratio}");
    }

    /// Power in the centered azimuth bins `[lo, hi)` summed over range.
    fn band_power(v: &ComplexVignette, lo: i64, hi: i64) -> f64 {
        let spec = dft_columns(&v.data);
        let m = v.rows();
        (0..m)
            .filter(|&k| (lo..hi).contains(&centered_bin(k, m)))
            .map(|k| spec.row(k).iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum()
    }

    #[test]
    fn uniform_drift_shifts_the_spectrum() {
        // biological slicks drift at a uniform 8 Hz
        let geom = SynthGeometry::default();
        let p = SynthParams::new(ClassLabel::Bs, 4).with_size(256, 128);
        let v = synth_vignette(&p, &geom).unwrap();
        let mut z = Complex64::new(0.0, 0.0);
        for m in 1..v.rows() {
            for n in 0..v.cols() {
                z += v.data[[m, n]] * v.data[[m - 1, n]].conj();
            }
        }
        let f = z.arg() * geom.prf / (2.0 * PI);
        assert!((f - 8.0).abs() < 3.0, "centroid {f}");
        assert!(band_power(&v, 1, 64) > band_power(&v, -63, 0));
    }

    #[test]
    fn broadening_feeds_the_outer_bands() {
        let geom = SynthGeometry::default();
        // sea ice has no spread, wind streaks a wide one
        let si = synth_vignette(&SynthParams::new(ClassLabel::Si, 6).with_size(256, 64), &geom).unwrap();
        let ws = synth_vignette(&SynthParams::new(ClassLabel::Ws, 6).with_size(256, 64), &geom).unwrap();
        let outer = |v: &ComplexVignette| {
            (band_power(v, -128, -64) + band_power(v, 64, 128)) / band_power(v, -64, 64)
        };
        assert!(outer(&ws) > 2.0 * outer(&si), "{} vs {}", outer(&ws), outer(&si));
    }
}

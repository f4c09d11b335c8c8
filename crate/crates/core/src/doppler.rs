//! Doppler centroid estimation from the lag-one azimuth conjugate product.
//!
//! `P[m, n] = x[m + 1, n] * conj(x[m, n])` is averaged over a `d1 x d2`
//! window (azimuth x range) and converted with
//! `D = -prf * angle(Z) / (2 pi)`. Under this sign convention a signal
//! modulated by `exp(j 2 pi f m / prf)` yields `D = -f`; set
//! [`DceConfig::negate`] to report `+f` instead.
//!
//! The output has `M - 1` azimuth rows. Windows are truncated at the borders
//! and normalized by their in-bounds tap count.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::preprocess::{boxfilter_decimate, SubapertureSet, DEFAULT_DECIMATION};

pub const DEFAULT_WINDOW: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct DceConfig {
    /// Mean filter extent along azimuth.
    pub d1: usize,
    /// Mean filter extent along range.
    pub d2: usize,
    pub negate: bool,
}

impl Default for DceConfig {
    fn default() -> Self {
        Self {
            d1: DEFAULT_WINDOW,
            d2: DEFAULT_WINDOW,
            negate: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DopplerField {
    /// Hz, each value within `[-prf/2, prf/2]`.
    pub data: Array2<f64>,
    pub prf: f64,
    pub source_id: String,
    pub subaperture_index: Option<usize>,
    /// Pixels whose averaged product was exactly zero and were set to 0 Hz.
    pub undefined_count: usize,
}

impl DopplerField {
    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let half = self.prf / 2.0;
        match self.data.iter().find(|d| !(d.is_finite() && d.abs() <= half)) {
            Some(d) => Err(Error::Invariant(format!(
                "doppler value {d} outside [-{half}, {half}]"
            ))),
            None => Ok(()),
        }
    }
}

/// Window `[start, end)` of length up to `d` around `i`, clipped to `[0, len)`.
fn window_bounds(i: usize, d: usize, len: usize) -> (usize, usize) {
    let before = (d - 1) / 2;
    let start = i.saturating_sub(before);
    let end = (i + d - before).min(len);
    (start.min(len), end)
}

/// Sliding sum along one line with truncated windows.
fn sliding_sum(line: &[Complex64], d: usize, out: &mut [Complex64]) {
    let len = line.len();
    let before = (d - 1) / 2;
    let after = d - 1 - before;
    // running sum over [lo, hi)
    let mut acc = Complex64::new(0.0, 0.0);
    let mut lo = 0usize;
    let mut hi = 0usize;
    for (i, o) in out.iter_mut().enumerate() {
        let want_lo = i.saturating_sub(before);
        let want_hi = (i + after + 1).min(len);
        while hi < want_hi {
            acc += line[hi];
            hi += 1;
        }
        while lo < want_lo {
            acc -= line[lo];
            lo += 1;
        }
        *o = acc;
    }
}

/// Truncated-window mean filter of a complex grid.
pub fn mean_filter(p: &Array2<Complex64>, d1: usize, d2: usize) -> Array2<Complex64> {
    let (rows, cols) = p.dim();
    let mut horiz = Array2::<Complex64>::zeros((rows, cols));
    let mut line = vec![Complex64::new(0.0, 0.0); cols];
    let mut buf = vec![Complex64::new(0.0, 0.0); cols.max(rows)];
    for r in 0..rows {
        for (l, v) in line.iter_mut().zip(p.row(r).iter()) {
            *l = *v;
        }
        sliding_sum(&line, d2, &mut buf[..cols]);
        for (h, b) in horiz.row_mut(r).iter_mut().zip(&buf[..cols]) {
            *h = *b;
        }
    }
    let mut out = Array2::<Complex64>::zeros((rows, cols));
    let mut col = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for (l, v) in col.iter_mut().zip(horiz.column(c).iter()) {
            *l = *v;
        }
        sliding_sum(&col, d1, &mut buf[..rows]);
        let (c0, c1) = window_bounds(c, d2, cols);
        let ncols = (c1 - c0) as f64;
        for (r, b) in buf[..rows].iter().enumerate() {
            let (r0, r1) = window_bounds(r, d1, rows);
            out[[r, c]] = b / ((r1 - r0) as f64 * ncols);
        }
    }
    out
}

/// Lag-one azimuth conjugate product, `(M - 1) x N`.
pub fn lag_one_product(x: ArrayView2<Complex64>) -> Array2<Complex64> {
    let (m, n) = x.dim();
    Array2::from_shape_fn((m - 1, n), |(i, j)| x[[i + 1, j]] * x[[i, j]].conj())
}

pub fn estimate_doppler(x: ArrayView2<Complex64>, prf: f64, d1: usize, d2: usize) -> Result<DopplerField> {
    estimate_doppler_with(
        x,
        prf,
        &DceConfig {
            d1,
            d2,
            negate: false,
        },
    )
}

pub fn estimate_doppler_with(x: ArrayView2<Complex64>, prf: f64, cfg: &DceConfig) -> Result<DopplerField> {
    if x.nrows() < 2 {
        return Err(Error::Shape(format!(
            "doppler estimation needs at least 2 azimuth rows, got {}",
            x.nrows()
        )));
    }
    if cfg.d1 == 0 || cfg.d2 == 0 {
        return Err(Error::InvalidArgument("mean filter extents must be >= 1".into()));
    }
    if !(prf.is_finite() && prf > 0.0) {
        return Err(Error::InvalidArgument(format!("prf must be positive, got {prf}")));
    }
    let z = mean_filter(&lag_one_product(x), cfg.d1, cfg.d2);
    let sign = if cfg.negate { 1.0 } else { -1.0 };
    let mut undefined = 0usize;
    let data = z.mapv(|c| {
        if c.re == 0.0 && c.im == 0.0 {
            undefined += 1;
            return 0.0;
        }
        let mut angle = c.im.atan2(c.re);
        if angle == -PI {
            angle = PI;
        }
        sign * prf * angle / (2.0 * PI)
    });
    Ok(DopplerField {
        data,
        prf,
        source_id: String::new(),
        subaperture_index: None,
        undefined_count: undefined,
    })
}

/// Doppler estimate of every full-resolution sub-look, each decimated by 10.
pub fn doppler_on_subapertures(ss: &SubapertureSet, prf: f64) -> Result<Vec<DopplerField>> {
    doppler_on_subapertures_with(ss, prf, &DceConfig::default(), DEFAULT_DECIMATION)
}

pub fn doppler_on_subapertures_with(
    ss: &SubapertureSet,
    prf: f64,
    cfg: &DceConfig,
    decimation: usize,
) -> Result<Vec<DopplerField>> {
    if ss.sub_slc.is_empty() {
        return Err(Error::InvalidArgument("subaperture set is empty".into()));
    }
    ss.sub_slc
        .par_iter()
        .enumerate()
        .map(|(i, slc)| {
            let full = estimate_doppler_with(slc.view(), prf, cfg)?;
            Ok(DopplerField {
                data: boxfilter_decimate(&full.data, decimation)?,
                prf,
                source_id: ss.source_id.clone(),
                subaperture_index: Some(i),
                undefined_count: full.undefined_count,
            })
        })
        .collect()
}

/// Decimated Doppler field of a whole vignette (no sub-band split).
pub fn doppler_on_vignette(
    x: ArrayView2<Complex64>,
    prf: f64,
    source_id: &str,
    cfg: &DceConfig,
    decimation: usize,
) -> Result<DopplerField> {
    let full = estimate_doppler_with(x, prf, cfg)?;
    Ok(DopplerField {
        data: boxfilter_decimate(&full.data, decimation)?,
        prf,
        source_id: source_id.to_string(),
        subaperture_index: None,
        undefined_count: full.undefined_count,
    })
}

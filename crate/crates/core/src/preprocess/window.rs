//! Generalized Hamming weighting of azimuth spectra and sub-band layout.
//!
//! Windows are defined on the centered bin axis `k' in [-M/2, M/2)`:
//! `w(k') = alpha + (1 - alpha) * cos(2 pi k' / M)`, so the peak is `1` at zero
//! Doppler and the band edges sit at `2 alpha - 1`.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use super::spectrum::{bin_at_position, AzimuthSpectrum};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.75;

/// Window value at signed offset `offset` from the peak of a window spanning
/// `len` bins.
pub fn hamming_weight(alpha: f64, offset: i64, len: usize) -> f64 {
    alpha + (1.0 - alpha) * (2.0 * PI * offset as f64 / len as f64).cos()
}

/// Full-band window indexed by (uncentered) bin.
pub fn full_band_window(m: usize, alpha: f64) -> Vec<f64> {
    (0..m)
        .map(|k| hamming_weight(alpha, super::spectrum::centered_bin(k, m), m))
        .collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.5..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "hamming coefficient {alpha} outside [0.5, 1)"
        )));
    }
    Ok(())
}

fn scale_rows(data: &Array2<Complex64>, weights: &[f64], divide: bool) -> Array2<Complex64> {
    let mut out = data.clone();
    for (mut row, &w) in out.outer_iter_mut().zip(weights) {
        let f = if divide { 1.0 / w } else { w };
        row.mapv_inplace(|c| c * f);
    }
    out
}

/// Divides the spectrum by the full-band window to flatten it.
pub fn hamming_compensate(s: &AzimuthSpectrum, alpha: f64) -> Result<AzimuthSpectrum> {
    check_alpha(alpha)?;
    let w = full_band_window(s.bins(), alpha);
    Ok(s.with_data(scale_rows(&s.data, &w, true)))
}

/// Multiplies the spectrum by the full-band window (inverse of
/// [`hamming_compensate`]).
pub fn hamming_apply(s: &AzimuthSpectrum, alpha: f64) -> Result<AzimuthSpectrum> {
    check_alpha(alpha)?;
    let w = full_band_window(s.bins(), alpha);
    Ok(s.with_data(scale_rows(&s.data, &w, false)))
}

/// Placement of one sub-band on the centered frequency axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SubBand {
    pub index: usize,
    /// First centered position of the nominal band.
    pub start: usize,
    /// Nominal band width in bins.
    pub width: usize,
    /// Centered position of the window peak.
    pub center: usize,
    /// Window support length in bins (equals `width` without overlap).
    pub support: usize,
}

impl SubBand {
    pub fn center_hz(&self, m: usize, prf: f64) -> f64 {
        (self.center as i64 - (m / 2) as i64) as f64 * prf / m as f64
    }
}

/// Adjacent bands of width `floor(M / n_sub)` ordered by increasing frequency.
/// When `M` is not divisible by `n_sub`, the leftover bins are split evenly
/// between both spectrum edges and belong to no band.
pub fn band_layout(m: usize, n_sub: usize, overlap: f64) -> Vec<SubBand> {
    let width = m / n_sub;
    let offset = (m - width * n_sub) / 2;
    let support = width + (overlap.max(0.0) * width as f64).round() as usize;
    (0..n_sub)
        .map(|i| {
            let start = offset + i * width;
            SubBand {
                index: i,
                start,
                width,
                center: start + width / 2,
                support,
            }
        })
        .collect()
}

/// Per-bin weights of each band's window, zero outside its support.
pub fn band_windows(m: usize, bands: &[SubBand], alpha: f64) -> Vec<Vec<f64>> {
    bands
        .iter()
        .map(|b| {
            let mut w = vec![0.0; m];
            let half = (b.support / 2) as i64;
            for j in 0..b.support as i64 {
                let pos = b.center as i64 - half + j;
                if pos < 0 || pos >= m as i64 {
                    continue;
                }
                w[bin_at_position(pos as usize, m)] = hamming_weight(alpha, j - half, b.support);
            }
            w
        })
        .collect()
}

/// Splits a spectrum into `n_sub` windowed sub-band spectra.
pub fn make_subapertures(
    s: &AzimuthSpectrum,
    n_sub: usize,
    alpha: f64,
) -> Result<Vec<AzimuthSpectrum>> {
    make_subapertures_with_overlap(s, n_sub, alpha, 0.0)
}

pub fn make_subapertures_with_overlap(
    s: &AzimuthSpectrum,
    n_sub: usize,
    alpha: f64,
    overlap: f64,
) -> Result<Vec<AzimuthSpectrum>> {
    check_alpha(alpha)?;
    let m = s.bins();
    if n_sub < 2 {
        return Err(Error::InvalidArgument(format!("n_sub must be >= 2, got {n_sub}")));
    }
    if n_sub > m / 4 {
        return Err(Error::InvalidArgument(format!(
            "n_sub {n_sub} exceeds M/4 = {} azimuth bins",
            m / 4
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!("overlap {overlap} outside [0, 1)")));
    }
    let bands = band_layout(m, n_sub, overlap);
    Ok(band_windows(m, &bands, alpha)
        .iter()
        .map(|w| s.with_data(scale_rows(&s.data, w, false)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::spectrum::{azimuth_dft, centered_position, idft_columns};
    use crate::rng::SarRng;
    use crate::vignette::{ComplexVignette, VignetteMeta};

    fn spectrum(data: Array2<Complex64>) -> AzimuthSpectrum {
        let v = ComplexVignette::new("w", data, 1600.0, 5.0, 5.0, VignetteMeta::default()).unwrap();
        azimuth_dft(&v)
    }

    fn random(m: usize, n: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = SarRng::new(seed);
        Array2::from_shape_fn((m, n), |_| Complex64::new(rng.normal(), rng.normal()))
    }

    #[test]
    fn compensation_leaves_dc_and_doubles_edge() {
        let m = 16;
        let s = spectrum(Array2::zeros((m, 1))).with_data(Array2::from_elem((m, 1), Complex64::new(1.0, 0.0)));
        let c = hamming_compensate(&s, 0.75).unwrap();
        assert!((c.data[[0, 0]].re - 1.0).abs() < 1e-15);
        // bin M/2 is the most negative frequency, the band edge
        assert!((c.data[[m / 2, 0]].re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn compensate_then_apply_is_identity() {
        let s = spectrum(random(24, 3, 1));
        let back = hamming_apply(&hamming_compensate(&s, 0.75).unwrap(), 0.75).unwrap();
        for (a, b) in back.data.iter().zip(s.data.iter()) {
            assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn alpha_bounds() {
        let s = spectrum(random(8, 1, 2));
        assert!(hamming_compensate(&s, 0.49).is_err());
        assert!(hamming_compensate(&s, 1.0).is_err());
        assert!(hamming_compensate(&s, 0.5).is_ok());
    }

    #[test]
    fn bands_are_disjoint_and_energy_outside_is_zero() {
        let m = 64;
        let s = spectrum(random(m, 2, 3));
        let subs = make_subapertures(&s, 4, 0.75).unwrap();
        let bands = band_layout(m, 4, 0.0);
        for (i, (sub, band)) in subs.iter().zip(&bands).enumerate() {
            for k in 0..m {
                let p = centered_position(k, m);
                let inside = p >= band.start && p < band.start + band.width;
                if !inside {
                    assert_eq!(sub.data.row(k).iter().map(|c| c.norm_sqr()).sum::<f64>(), 0.0, "band {i} bin {k}");
                }
            }
        }
        let w = band_windows(m, &bands, 0.75);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!((0..m).all(|k| w[i][k] * w[j][k] == 0.0));
                }
            }
        }
    }

    #[test]
    fn flat_spectrum_gives_equal_energies() {
        let m = 128;
        let s = spectrum(Array2::zeros((m, 3))).with_data(Array2::from_elem((m, 3), Complex64::new(1.0, 0.0)));
        let subs = make_subapertures(&s, 4, 0.75).unwrap();
        let energies: Vec<f64> = subs.iter().map(|x| x.data.iter().map(|c| c.norm_sqr()).sum()).collect();
        for e in &energies {
            assert!((e - energies[0]).abs() <= 1e-9 * energies[0]);
        }
    }

    #[test]
    fn band_centers_increase() {
        let bands = band_layout(512, 4, 0.0);
        let centers: Vec<f64> = bands.iter().map(|b| b.center_hz(512, 1600.0)).collect();
        assert_eq!(centers, vec![-600.0, -200.0, 200.0, 600.0]);
    }

    #[test]
    fn indivisible_length_trims_edges_symmetrically() {
        let bands = band_layout(66, 4, 0.0);
        assert_eq!(bands[0].start, 1);
        assert_eq!(bands[3].start + bands[3].width, 65);
    }

    #[test]
    fn n_sub_limits() {
        let s = spectrum(random(16, 1, 4));
        assert!(make_subapertures(&s, 1, 0.75).is_err());
        assert!(make_subapertures(&s, 5, 0.75).is_err());
        assert!(make_subapertures(&s, 4, 0.75).is_ok());
    }

    /// A single band covering the whole spectrum reproduces the full-band
    /// Hamming weighting, so the sub-look equals the windowed original.
    #[test]
    fn single_full_band_equals_windowed_original() {
        let m = 32;
        let data = random(m, 3, 5);
        let s = spectrum(data);
        let bands = band_layout(m, 1, 0.0);
        let w = &band_windows(m, &bands, 0.75)[0];
        let sub = scale_rows(&s.data, w, false);
        let direct = hamming_apply(&s, 0.75).unwrap();
        let a = idft_columns(&sub);
        let b = idft_columns(&direct.data);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }
}

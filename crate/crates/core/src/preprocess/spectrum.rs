//! Column-wise azimuth DFT.
//!
//! The forward transform is unnormalized and the inverse carries the `1/M`
//! factor. Bin `k` corresponds to the frequency
//! `((k + M/2) mod M - M/2) * prf / M`.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::vignette::{ComplexVignette, VignetteHeader};

#[derive(Clone, Debug, PartialEq)]
pub struct AzimuthSpectrum {
    /// `data[[k, n]]`: frequency bin `k`, range column `n`.
    pub data: Array2<Complex64>,
    pub prf: f64,
    /// Identity and geometry of the vignette the spectrum came from.
    pub source: VignetteHeader,
}

impl AzimuthSpectrum {
    pub fn bins(&self) -> usize {
        self.data.nrows()
    }

    /// Frequency in Hz of bin `k`.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        centered_bin(k, self.bins()) as f64 * self.prf / self.bins() as f64
    }

    pub fn with_data(&self, data: Array2<Complex64>) -> Self {
        Self {
            data,
            prf: self.prf,
            source: self.source.clone(),
        }
    }
}

/// Signed bin index `((k + M/2) mod M) - M/2`.
pub fn centered_bin(k: usize, m: usize) -> i64 {
    let h = m / 2;
    ((k + h) % m) as i64 - h as i64
}

/// Position of bin `k` on the centered axis, `0` being the most negative
/// frequency.
pub fn centered_position(k: usize, m: usize) -> usize {
    (k + m / 2) % m
}

/// Inverse of [`centered_position`].
pub fn bin_at_position(p: usize, m: usize) -> usize {
    (p + m - m / 2) % m
}

fn transform_columns(data: &mut Array2<Complex64>, fft: &dyn Fft<f64>) {
    let m = data.nrows();
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for mut col in data.axis_iter_mut(Axis(1)) {
        for (b, c) in buf.iter_mut().zip(col.iter()) {
            *b = *c;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (c, b) in col.iter_mut().zip(buf.iter()) {
            *c = *b;
        }
    }
}

/// Unnormalized forward DFT along azimuth of every range column.
pub fn dft_columns(data: &Array2<Complex64>) -> Array2<Complex64> {
    let mut out = data.clone();
    let fft = FftPlanner::new().plan_fft_forward(data.nrows());
    transform_columns(&mut out, fft.as_ref());
    out
}

/// Inverse DFT along azimuth, normalized by `1/M`.
pub fn idft_columns(data: &Array2<Complex64>) -> Array2<Complex64> {
    let m = data.nrows();
    let mut out = data.clone();
    let fft = FftPlanner::new().plan_fft_inverse(m);
    transform_columns(&mut out, fft.as_ref());
    let scale = 1.0 / m as f64;
    out.mapv_inplace(|c| c * scale);
    out
}

pub fn azimuth_dft(v: &ComplexVignette) -> AzimuthSpectrum {
    AzimuthSpectrum {
        data: dft_columns(&v.data),
        prf: v.prf,
        source: v.header(),
    }
}

pub fn azimuth_idft(s: &AzimuthSpectrum) -> ComplexVignette {
    ComplexVignette::from_header(&s.source, idft_columns(&s.data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SarRng;
    use crate::vignette::VignetteMeta;
    use std::f64::consts::PI;

    fn vignette(data: Array2<Complex64>) -> ComplexVignette {
        ComplexVignette::new("t", data, 1600.0, 5.0, 5.0, VignetteMeta::default()).unwrap()
    }

    /// Direct O(M^2) DFT along the first axis.
    fn naive_dft(data: &Array2<Complex64>) -> Array2<Complex64> {
        let (m, n) = data.dim();
        Array2::from_shape_fn((m, n), |(k, col)| {
            (0..m)
                .map(|t| data[[t, col]] * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / m as f64))
                .sum()
        })
    }

    fn random(m: usize, n: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = SarRng::new(seed);
        Array2::from_shape_fn((m, n), |_| Complex64::new(rng.normal(), rng.normal()))
    }

    #[test]
    fn constant_column_is_dc_impulse() {
        let v = vignette(Array2::from_elem((8, 1), Complex64::new(1.0, 0.0)));
        let s = azimuth_dft(&v);
        assert!((s.data[[0, 0]] - Complex64::new(8.0, 0.0)).norm() < 1e-12);
        for k in 1..8 {
            assert!(s.data[[k, 0]].norm() < 1e-12);
        }
    }

    #[test]
    fn tone_is_impulse_at_its_bin() {
        let m = 16;
        let k0 = 5;
        let data = Array2::from_shape_fn((m, 2), |(t, _)| {
            Complex64::from_polar(1.0, 2.0 * PI * (k0 * t) as f64 / m as f64)
        });
        let s = azimuth_dft(&vignette(data));
        for k in 0..m {
            let expected = if k == k0 { m as f64 } else { 0.0 };
            assert!((s.data[[k, 1]].norm() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_naive_dft_for_odd_and_even_lengths() {
        for (m, n) in [(9, 3), (12, 2), (7, 1)] {
            let data = random(m, n, m as u64);
            let fast = dft_columns(&data);
            let slow = naive_dft(&data);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_zero_and_linearity() {
        let a = random(32, 4, 1);
        let b = random(32, 4, 2);
        let v = vignette(a.clone());
        let back = azimuth_idft(&azimuth_dft(&v));
        for (x, y) in back.data.iter().zip(a.iter()) {
            assert!((x - y).norm() <= 1e-10 * y.norm().max(1.0));
        }
        assert_eq!(back.id, v.id);

        let zero = idft_columns(&Array2::zeros((6, 3)));
        assert!(zero.iter().all(|c| c.norm() == 0.0));

        let (ca, cb) = (Complex64::new(0.5, -2.0), Complex64::new(3.0, 0.25));
        let combo = idft_columns(&(a.mapv(|x| x * ca) + b.mapv(|x| x * cb)));
        let sep = idft_columns(&a).mapv(|x| x * ca) + idft_columns(&b).mapv(|x| x * cb);
        for (x, y) in combo.iter().zip(sep.iter()) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn parseval_per_column() {
        let data = random(64, 5, 9);
        let s = dft_columns(&data);
        for n in 0..5 {
            let e_in: f64 = data.column(n).iter().map(|c| c.norm_sqr()).sum();
            let e_out: f64 = s.column(n).iter().map(|c| c.norm_sqr()).sum();
            assert!((e_out - 64.0 * e_in).abs() <= 1e-9 * e_out);
        }
    }

    #[test]
    fn centered_axis_helpers() {
        assert_eq!(centered_bin(0, 8), 0);
        assert_eq!(centered_bin(4, 8), -4);
        assert_eq!(centered_bin(7, 8), -1);
        assert_eq!(centered_bin(3, 7), 3);
        assert_eq!(centered_bin(4, 7), -3);
        for m in [7, 8, 9] {
            for k in 0..m {
                let p = centered_position(k, m);
                assert_eq!(bin_at_position(p, m), k);
                assert_eq!(p as i64 - (m / 2) as i64, centered_bin(k, m));
            }
        }
    }
}

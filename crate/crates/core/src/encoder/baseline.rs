use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;

use super::{EncoderKind, Embedding, InputStack};
use crate::error::{Error, Result};
use crate::preprocess::dft_columns;

pub const BASELINE_VERSION: &str = "baseline-v1";

const HIST_BINS: usize = 8;
const HIST_RANGE: f64 = 3.0;
const RADIAL_BINS: usize = 16;
const LAGS: usize = 8;

/// Fixed descriptor: per channel, an 8-bin histogram over `[-3, 3]`,
/// 16 radial log power-spectrum bins and 8 azimuth autocorrelation lags.
/// Dimension `32 * C`.
pub fn baseline_descriptor(s: &InputStack) -> Result<Embedding> {
    let (h, w) = s.dims();
    if h < 16 || w < 16 {
        return Err(Error::Shape(format!("baseline needs at least 16x16, got {h}x{w}")));
    }
    let mut vector = Vec::with_capacity(32 * s.channels());
    for ch in s.data.outer_iter() {
        vector.extend(histogram(ch));
        vector.extend(radial_spectrum(ch));
        vector.extend(azimuth_autocorrelation(ch));
    }
    Ok(Embedding {
        id: s.source_id.clone(),
        vector,
        representation: s.representation,
        encoder: EncoderKind::Baseline,
        version: BASELINE_VERSION.to_string(),
    })
}

/// Fraction of samples per bin; values outside the range land in the edge bins.
fn histogram(ch: ArrayView2<f64>) -> [f64; HIST_BINS] {
    let mut counts = [0.0; HIST_BINS];
    let width = 2.0 * HIST_RANGE / HIST_BINS as f64;
    for &v in ch {
        let b = ((v + HIST_RANGE) / width).floor();
        let b = b.clamp(0.0, (HIST_BINS - 1) as f64) as usize;
        counts[b] += 1.0;
    }
    let n = ch.len() as f64;
    counts.map(|c| c / n)
}

/// `ln(1 + mean |F|^2 / (H W))` over 16 annuli of normalized radial frequency
/// in `[0, 0.5]`; corner frequencies beyond 0.5 fold into the last annulus.
fn radial_spectrum(ch: ArrayView2<f64>) -> [f64; RADIAL_BINS] {
    let (h, w) = ch.dim();
    let complex: Array2<Complex64> = ch.mapv(|v| Complex64::new(v, 0.0));
    let cols = dft_columns(&complex);
    let both = dft_columns(&cols.t().to_owned()).reversed_axes();
    let mut sum = [0.0; RADIAL_BINS];
    let mut count = [0usize; RADIAL_BINS];
    let norm = (h * w) as f64;
    for ((i, j), z) in both.indexed_iter() {
        let fy = signed_frequency(i, h);
        let fx = signed_frequency(j, w);
        let r = (fy * fy + fx * fx).sqrt();
        let b = ((r / 0.5) * RADIAL_BINS as f64).floor().min((RADIAL_BINS - 1) as f64) as usize;
        sum[b] += z.norm_sqr() / norm;
        count[b] += 1;
    }
    let mut out = [0.0; RADIAL_BINS];
    for b in 0..RADIAL_BINS {
        if count[b] > 0 {
            out[b] = (sum[b] / count[b] as f64).ln_1p();
        }
    }
    out
}

fn signed_frequency(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n = n as f64;
    if k < n / 2.0 {
        k / n
    } else {
        k / n - 1.0
    }
}

/// Correlation between rows `i` and `i + lag`, averaged over range and
/// normalized by the lag-0 energy.
fn azimuth_autocorrelation(ch: ArrayView2<f64>) -> [f64; LAGS] {
    let mut out = [0.0; LAGS];
    let energy: f64 = ch.iter().map(|v| v * v).sum::<f64>() / ch.len() as f64;
    if energy == 0.0 {
        return out;
    }
    let h = ch.dim().0;
    for (l, o) in out.iter_mut().enumerate() {
        let lag = l + 1;
        if lag >= h {
            break;
        }
        let a = ch.slice_axis(Axis(0), (0..h - lag).into());
        let b = ch.slice_axis(Axis(0), (lag..h).into());
        let prod: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        *o = prod / a.len() as f64 / energy;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{normalize_stack, Representation};
    use crate::rng::SarRng;
    use ndarray::Array3;

    fn stack(data: Array3<f64>) -> InputStack {
        let c = data.dim().0;
        InputStack {
            source_id: "s".into(),
            data,
            representation: Representation::Subap,
            stats: vec![super::super::ChannelStats { mean: 0.0, std: 1.0 }; c],
        }
    }

    #[test]
    fn dimension_and_determinism() {
        let mut rng = SarRng::new(2);
        let chans: Vec<_> = (0..4)
            .map(|_| Array2::from_shape_simple_fn((32, 24), || rng.normal()))
            .collect();
        let s = normalize_stack("a", &chans, Representation::Subap).unwrap();
        let e1 = baseline_descriptor(&s).unwrap();
        let e2 = baseline_descriptor(&s).unwrap();
        assert_eq!(e1.vector.len(), 128);
        assert_eq!(e1.vector, e2.vector);
        assert_eq!(e1.encoder, EncoderKind::Baseline);
    }

    #[test]
    fn zero_stack() {
        let e = baseline_descriptor(&stack(Array3::zeros((1, 16, 16)))).unwrap();
        // all mass in the bin starting at 0
        assert_eq!(&e.vector[..8], &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(e.vector[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rotation_keeps_histogram() {
        let mut rng = SarRng::new(3);
        let a = Array2::from_shape_simple_fn((16, 20), || rng.normal());
        let rot = a.t().slice(ndarray::s![.., ..;-1]).to_owned();
        let e = baseline_descriptor(&stack(a.insert_axis(Axis(0)))).unwrap();
        let r = baseline_descriptor(&stack(rot.insert_axis(Axis(0)))).unwrap();
        assert_eq!(&e.vector[..8], &r.vector[..8]);
        assert_ne!(&e.vector[8..], &r.vector[8..]);
    }

    #[test]
    fn parseval_total_energy() {
        let mut rng = SarRng::new(4);
        let a = Array2::from_shape_simple_fn((16, 16), || rng.normal());
        let complex = a.mapv(|v| Complex64::new(v, 0.0));
        let f = dft_columns(&dft_columns(&complex).t().to_owned());
        let spectral: f64 = f.iter().map(|z| z.norm_sqr()).sum::<f64>() / 256.0;
        let spatial: f64 = a.iter().map(|v| v * v).sum();
        assert!((spectral - spatial).abs() < 1e-9 * spatial);
    }

    #[test]
    fn out_of_range_values_clamp_to_edges() {
        let mut a = Array2::<f64>::zeros((16, 16));
        a[[0, 0]] = -10.0;
        a[[0, 1]] = 10.0;
        let e = baseline_descriptor(&stack(a.insert_axis(Axis(0)))).unwrap();
        assert_eq!(e.vector[0], 1.0 / 256.0);
        assert_eq!(e.vector[7], 1.0 / 256.0);
    }

    #[test]
    fn rejects_small_inputs() {
        assert!(baseline_descriptor(&stack(Array3::zeros((1, 8, 32)))).is_err());
    }
}

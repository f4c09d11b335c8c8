use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which signal an input stack was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Representation {
    /// Decimated magnitude of the full-band vignette.
    Vig,
    /// Decimated magnitudes of the subapertures.
    Subap,
    /// Doppler centroid field of the full-band vignette.
    DopVig,
    /// Doppler centroid fields of the subapertures.
    DopSubap,
}

impl Representation {
    pub const ALL: [Representation; 4] = [
        Representation::Vig,
        Representation::Subap,
        Representation::DopVig,
        Representation::DopSubap,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Representation::Vig => 0,
            Representation::Subap => 1,
            Representation::DopVig => 2,
            Representation::DopSubap => 3,
        }
    }

    pub fn from_tag(t: u8) -> Result<Self> {
        Self::ALL
            .get(t as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown representation tag {t}")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Vig => "VIG",
            Representation::Subap => "SUBAP",
            Representation::DopVig => "DOP_VIG",
            Representation::DopSubap => "DOP_SUBAP",
        }
    }

    pub fn is_doppler(self) -> bool {
        matches!(self, Representation::DopVig | Representation::DopSubap)
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown representation {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// Standardized channels `(C, H, W)` ready for an encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct InputStack {
    pub source_id: String,
    pub data: Array3<f64>,
    pub representation: Representation,
    pub stats: Vec<ChannelStats>,
}

impl InputStack {
    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn dims(&self) -> (usize, usize) {
        let (_, h, w) = self.data.dim();
        (h, w)
    }
}

/// Standardizes each channel to zero mean and unit (population) variance.
/// Constant channels become all zeros with `std` recorded as 1.
pub fn normalize_stack(
    source_id: impl Into<String>,
    channels: &[Array2<f64>],
    representation: Representation,
) -> Result<InputStack> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidArgument("no channels".into()))?;
    let dims = first.dim();
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::Shape("empty channel".into()));
    }
    let mut data = Array3::<f64>::zeros((channels.len(), dims.0, dims.1));
    let mut stats = Vec::with_capacity(channels.len());
    for (i, ch) in channels.iter().enumerate() {
        if ch.dim() != dims {
            return Err(Error::Shape(format!(
                "channel {i} is {:?}, expected {:?}",
                ch.dim(),
                dims
            )));
        }
        if ch.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("channel {i} has non-finite values")));
        }
        let n = ch.len() as f64;
        let mean = ch.sum() / n;
        let var = ch.fold(0.0, |a, &v| a + (v - mean) * (v - mean)) / n;
        let std = var.sqrt();
        let mut out = data.index_axis_mut(Axis(0), i);
        if std <= 1e-12 * mean.abs().max(1.0) {
            stats.push(ChannelStats { mean, std: 1.0 });
            continue;
        }
        out.zip_mut_with(ch, |o, &v| *o = (v - mean) / std);
        stats.push(ChannelStats { mean, std });
    }
    Ok(InputStack {
        source_id: source_id.into(),
        data,
        representation,
        stats,
    })
}

/// Center-crops or edge-replicates `a` to exactly `rows x cols`.
pub fn fit_grid(a: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (r, c) = a.dim();
    if (r, c) == (rows, cols) {
        return a.clone();
    }
    let r0 = r.saturating_sub(rows) / 2;
    let c0 = c.saturating_sub(cols) / 2;
    let cropped = a.slice(s![r0..r0 + rows.min(r), c0..c0 + cols.min(c)]);
    let (cr, cc) = cropped.dim();
    let pr = (rows - cr) / 2;
    let pc = (cols - cc) / 2;
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let si = i.saturating_sub(pr).min(cr - 1);
        let sj = j.saturating_sub(pc).min(cc - 1);
        cropped[[si, sj]]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SarRng;
    use ndarray::array;

    #[test]
    fn standardizes_each_channel() {
        let mut rng = SarRng::new(1);
        let a = Array2::from_shape_simple_fn((20, 30), || 5.0 + 3.0 * rng.normal());
        let b = Array2::from_shape_simple_fn((20, 30), || -2.0 + 0.1 * rng.uniform());
        let s = normalize_stack("x", &[a, b], Representation::Subap).unwrap();
        for ch in s.data.outer_iter() {
            let n = ch.len() as f64;
            let m = ch.sum() / n;
            let sd = (ch.fold(0.0, |acc, &v| acc + (v - m).powi(2)) / n).sqrt();
            assert!(m.abs() < 1e-10);
            assert!((sd - 1.0).abs() < 1e-9);
        }
        assert!((s.stats[0].mean - 5.0).abs() < 0.5);
        assert!((s.stats[1].mean + 1.95).abs() < 0.05);
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let s = normalize_stack("c", &[Array2::from_elem((4, 4), 7.0)], Representation::Vig).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
        assert_eq!(s.stats[0], ChannelStats { mean: 7.0, std: 1.0 });
    }

    #[test]
    fn rejects_mismatched_or_empty() {
        let a = Array2::<f64>::zeros((4, 4));
        let b = Array2::<f64>::zeros((4, 5));
        assert!(matches!(
            normalize_stack("x", &[a, b], Representation::Subap),
            Err(Error::Shape(_))
        ));
        assert!(normalize_stack("x", &[], Representation::Vig).is_err());
    }

    #[test]
    fn fit_grid_crops_and_pads() {
        let a = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let padded = fit_grid(&a, 4, 2);
        assert_eq!(padded, array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [5.0, 6.0]]);
        let cropped = fit_grid(&a, 1, 2);
        assert_eq!(cropped, array![[3.0, 4.0]]);
    }

    #[test]
    fn tags_round_trip() {
        for r in Representation::ALL {
            assert_eq!(Representation::from_tag(r.tag()).unwrap(), r);
            assert_eq!(r.as_str().parse::<Representation>().unwrap(), r);
        }
        assert_eq!("dop-subap".parse::<Representation>().unwrap(), Representation::DopSubap);
    }
}

//! Single-look-complex vignette model.
//!
//! Rows are azimuth samples, columns are range samples. This orientation is
//! used by every module of the crate.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ten geophysical phenomenon classes, in label order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    /// Pure ocean waves.
    Pow = 0,
    /// Wind streaks.
    Ws = 1,
    /// Micro convective cells.
    Mcc = 2,
    /// Rain cells.
    Rc = 3,
    /// Biological slicks.
    Bs = 4,
    /// Sea ice.
    Si = 5,
    /// Iceberg.
    Ic = 6,
    /// Low wind area.
    Lwa = 7,
    /// Atmospheric front.
    Af = 8,
    /// Oceanic front.
    Of = 9,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 10] = [
        ClassLabel::Pow,
        ClassLabel::Ws,
        ClassLabel::Mcc,
        ClassLabel::Rc,
        ClassLabel::Bs,
        ClassLabel::Si,
        ClassLabel::Ic,
        ClassLabel::Lwa,
        ClassLabel::Af,
        ClassLabel::Of,
    ];

    pub fn from_index(i: u8) -> Result<Self> {
        Self::ALL
            .get(i as usize)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("class id {i} outside [0, 9]")))
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            ClassLabel::Pow => "POW",
            ClassLabel::Ws => "WS",
            ClassLabel::Mcc => "MCC",
            ClassLabel::Rc => "RC",
            ClassLabel::Bs => "BS",
            ClassLabel::Si => "SI",
            ClassLabel::Ic => "Ic",
            ClassLabel::Lwa => "LWA",
            ClassLabel::Af => "AF",
            ClassLabel::Of => "OF",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbreviation())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(i) = s.parse::<u8>() {
            return Self::from_index(i);
        }
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.abbreviation().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class {s:?}")))
    }
}

/// Acquisition metadata carried alongside a vignette.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VignetteMeta {
    pub class_label: Option<u8>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub timestamp: Option<String>,
}

impl VignetteMeta {
    pub fn with_class(label: ClassLabel) -> Self {
        Self {
            class_label: Some(label.index()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.class_label {
            if c > 9 {
                return Err(Error::Invariant(format!("class_label {c} outside [0, 9]")));
            }
        }
        if let Some(lat) = self.lat {
            if !(-90.0..=90.0).contains(&lat) {
                return Err(Error::Invariant(format!("lat {lat} outside [-90, 90]")));
            }
        }
        if let Some(lon) = self.lon {
            if !(-180.0..=180.0).contains(&lon) {
                return Err(Error::Invariant(format!("lon {lon} outside [-180, 180]")));
            }
        }
        Ok(())
    }

    pub fn class(&self) -> Option<ClassLabel> {
        self.class_label.and_then(|c| ClassLabel::from_index(c).ok())
    }
}

/// Acquisition geometry and identity of a vignette, without its samples.
#[derive(Clone, Debug, PartialEq)]
pub struct VignetteHeader {
    pub id: String,
    pub prf: f64,
    pub azimuth_spacing: f64,
    pub range_spacing: f64,
    pub meta: VignetteMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVignette {
    pub id: String,
    /// `data[[m, n]]`: azimuth sample `m`, range sample `n`.
    pub data: Array2<Complex64>,
    pub prf: f64,
    pub azimuth_spacing: f64,
    pub range_spacing: f64,
    pub meta: VignetteMeta,
}

impl ComplexVignette {
    /// Builds a vignette and checks every invariant.
    pub fn new(
        id: impl Into<String>,
        data: Array2<Complex64>,
        prf: f64,
        azimuth_spacing: f64,
        range_spacing: f64,
        meta: VignetteMeta,
    ) -> Result<Self> {
        let v = Self {
            id: id.into(),
            data,
            prf,
            azimuth_spacing,
            range_spacing,
            meta,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn from_header(header: &VignetteHeader, data: Array2<Complex64>) -> Self {
        Self {
            id: header.id.clone(),
            data,
            prf: header.prf,
            azimuth_spacing: header.azimuth_spacing,
            range_spacing: header.range_spacing,
            meta: header.meta.clone(),
        }
    }

    pub fn header(&self) -> VignetteHeader {
        VignetteHeader {
            id: self.id.clone(),
            prf: self.prf,
            azimuth_spacing: self.azimuth_spacing,
            range_spacing: self.range_spacing,
            meta: self.meta.clone(),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.data.dim();
        if m < 2 || n < 1 {
            return Err(Error::Invariant(format!(
                "vignette must have at least 2 azimuth rows and 1 range column, got {m}x{n}"
            )));
        }
        if !(self.prf.is_finite() && self.prf > 0.0) {
            return Err(Error::Invariant(format!("prf must be positive, got {}", self.prf)));
        }
        for (name, s) in [
            ("azimuth_spacing", self.azimuth_spacing),
            ("range_spacing", self.range_spacing),
        ] {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Invariant(format!("{name} must be positive, got {s}")));
            }
        }
        if let Some(((i, j), _)) = self
            .data
            .indexed_iter()
            .find(|(_, c)| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(Error::Invariant(format!("non-finite sample at ({i}, {j})")));
        }
        self.meta.validate()
    }

    /// Mean detected power over the whole grid.
    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

/// Multiplies every azimuth line `m` by `exp(j 2 pi f m / prf)`.
///
/// Frequencies beyond half the PRF are rejected because they alias.
pub fn inject_doppler_ramp(v: &ComplexVignette, freq_hz: f64) -> Result<ComplexVignette> {
    if !freq_hz.is_finite() || freq_hz.abs() > v.prf / 2.0 {
        return Err(Error::InvalidArgument(format!(
            "ramp {freq_hz} Hz exceeds prf/2 = {} Hz",
            v.prf / 2.0
        )));
    }
    let mut out = v.clone();
    apply_ramp(&mut out.data, freq_hz, v.prf);
    Ok(out)
}

pub(crate) fn apply_ramp(data: &mut Array2<Complex64>, freq_hz: f64, prf: f64) {
    if freq_hz == 0.0 {
        return;
    }
    for (m, mut row) in data.outer_iter_mut().enumerate() {
        let phase = 2.0 * PI * freq_hz * m as f64 / prf;
        let rot = Complex64::from_polar(1.0, phase);
        row.mapv_inplace(|c| c * rot);
    }
}

//! On-disk formats for vignettes and derived rasters.
//!
//! SARV (little-endian):
//!
//! ```text
//! magic "SARV" | version u16 = 1 | reserved u16 = 0 | rows u32 | cols u32
//! prf f64 | azimuth_spacing f64 | range_spacing f64
//! rows * cols * (re f32, im f32), row-major
//! ```
//!
//! A JSON sidecar `<path>.json` holds the id and [`VignetteMeta`]. Samples are
//! narrowed to `f32` on write, so only `f32`-representable vignettes round-trip
//! bit-exactly.
//!
//! Real rasters are flat little-endian `f32` arrays with a JSON descriptor at
//! `<path>.json`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vignette::{ComplexVignette, VignetteMeta};

pub const SARV_MAGIC: &[u8; 4] = b"SARV";
pub const SARV_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 8 * 3;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    id: String,
    #[serde(flatten)]
    meta: VignetteMeta,
}

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_sarv(v: &ComplexVignette) -> Result<Vec<u8>> {
    v.validate()?;
    let (rows, cols) = v.data.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + rows * cols * 8);
    buf.extend_from_slice(SARV_MAGIC);
    buf.extend_from_slice(&SARV_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    buf.extend_from_slice(&v.prf.to_le_bytes());
    buf.extend_from_slice(&v.azimuth_spacing.to_le_bytes());
    buf.extend_from_slice(&v.range_spacing.to_le_bytes());
    for c in v.data.iter() {
        let (re, im) = (c.re as f32, c.im as f32);
        if !(re.is_finite() && im.is_finite()) {
            return Err(Error::Invariant("sample overflows f32".into()));
        }
        buf.extend_from_slice(&re.to_le_bytes());
        buf.extend_from_slice(&im.to_le_bytes());
    }
    Ok(buf)
}

/// Decodes a SARV payload. The id and metadata are left empty.
pub fn decode_sarv(bytes: &[u8]) -> Result<ComplexVignette> {
    if bytes.len() < 4 || &bytes[..4] != SARV_MAGIC {
        return Err(Error::Format("bad magic, expected \"SARV\"".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    let mut r = LeReader::new(&bytes[4..]);
    let version = r.u16()?;
    if version != SARV_VERSION {
        return Err(Error::Version {
            expected: SARV_VERSION,
            found: version,
        });
    }
    let _reserved = r.u16()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let prf = r.f64()?;
    let azimuth_spacing = r.f64()?;
    let range_spacing = r.f64()?;
    let payload = &bytes[HEADER_LEN..];
    let declared = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("declared size overflows".into()))?;
    if payload.len() != declared {
        return Err(Error::Format(format!(
            "truncated payload: header declares {rows}x{cols} samples ({declared} bytes), found {} bytes",
            payload.len()
        )));
    }
    let samples: Vec<Complex64> = payload
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let data = Array2::from_shape_vec((rows, cols), samples)
        .map_err(|e| Error::Format(e.to_string()))?;
    ComplexVignette::new(
        String::new(),
        data,
        prf,
        azimuth_spacing,
        range_spacing,
        VignetteMeta::default(),
    )
}

/// Writes the SARV file and its JSON sidecar.
pub fn write_vignette(v: &ComplexVignette, path: &Path) -> Result<()> {
    let bytes = encode_sarv(v)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    let sidecar = Sidecar {
        id: v.id.clone(),
        meta: v.meta.clone(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a SARV file. When the sidecar is missing the id defaults to the file
/// stem and the metadata is empty.
pub fn read_vignette(path: &Path) -> Result<ComplexVignette> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut v = decode_sarv(&bytes)?;
    let side = sidecar_path(path);
    if side.exists() {
        let sidecar: Sidecar = serde_json::from_slice(&fs::read(side)?)?;
        sidecar.meta.validate()?;
        v.id = sidecar.id;
        v.meta = sidecar.meta;
    } else {
        v.id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(v)
}

/// Wraps a real grid as a vignette with zero imaginary parts.
pub fn real_grid_as_vignette(
    id: &str,
    grid: &Array2<f64>,
    prf: f64,
    azimuth_spacing: f64,
    range_spacing: f64,
) -> Result<ComplexVignette> {
    ComplexVignette::new(
        id,
        grid.mapv(|x| Complex64::new(x, 0.0)),
        prf,
        azimuth_spacing,
        range_spacing,
        VignetteMeta::default(),
    )
}

/// JSON descriptor written next to a flat `f32` raster. Fields that do not
/// apply to a raster kind are omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RasterDescriptor {
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_spacing_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prf: Option<f64>,
    pub source_id: String,
    pub subaperture_index: Option<usize>,
}

pub fn write_raster(path: &Path, grid: &Array2<f64>, descriptor: &RasterDescriptor) -> Result<()> {
    if descriptor.rows != grid.nrows() || descriptor.cols != grid.ncols() {
        return Err(Error::Shape(format!(
            "descriptor {}x{} does not match grid {}x{}",
            descriptor.rows,
            descriptor.cols,
            grid.nrows(),
            grid.ncols()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for x in grid.iter() {
        w.write_all(&(*x as f32).to_le_bytes())?;
    }
    w.flush()?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(descriptor)?)?;
    Ok(())
}

pub fn read_raster(path: &Path) -> Result<(Array2<f64>, RasterDescriptor)> {
    let descriptor: RasterDescriptor = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    let expected = descriptor.rows * descriptor.cols * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "raster holds {} bytes, descriptor declares {expected}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let grid = Array2::from_shape_vec((descriptor.rows, descriptor.cols), values)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((grid, descriptor))
}

/// Minimal little-endian cursor used by the binary decoders.
pub(crate) struct LeReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> LeReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SarRng;
    use proptest::prelude::*;

    fn f32_vignette(rows: usize, cols: usize, seed: u64) -> ComplexVignette {
        let mut rng = SarRng::new(seed);
        let data = Array2::from_shape_fn((rows, cols), |_| {
            Complex64::new(rng.normal() as f32 as f64, rng.normal() as f32 as f64)
        });
        let meta = VignetteMeta {
            class_label: Some(3),
            lat: Some(-12.5),
            lon: Some(170.25),
            timestamp: Some("2021-03-04T05:06:07Z".into()),
        };
        ComplexVignette::new(format!("v{seed}"), data, 1600.0, 5.0, 4.5, meta).unwrap()
    }

    #[test]
    fn zeros_payload_layout() {
        let v = ComplexVignette::new(
            "z",
            Array2::from_elem((2, 2), Complex64::new(0.0, 0.0)),
            1600.0,
            5.0,
            5.0,
            VignetteMeta::default(),
        )
        .unwrap();
        let bytes = encode_sarv(&v).unwrap();
        assert_eq!(&bytes[..4], b"SARV");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 0);
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 8);
        assert!(bytes[HEADER_LEN..].iter().all(|&b| b == 0));
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.sarv");
        let v = f32_vignette(7, 5, 1);
        write_vignette(&v, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        let side: serde_json::Value =
            serde_json::from_slice(&fs::read(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(side["id"], "v1");
        assert_eq!(side["class_label"], 3);
        assert_eq!(read_vignette(&path).unwrap(), v);
    }

    #[test]
    fn nan_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.sarv");
        let mut v = f32_vignette(3, 3, 2);
        v.data[[0, 1]].re = f64::NAN;
        assert!(matches!(write_vignette(&v, &path), Err(Error::Invariant(_))));
        assert!(!path.exists());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_sarv(&f32_vignette(2, 2, 3)).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = decode_sarv(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_payload() {
        let v = f32_vignette(10, 10, 4);
        let bytes = encode_sarv(&v).unwrap();
        let cut = &bytes[..HEADER_LEN + 50 * 8];
        let err = decode_sarv(cut).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode_sarv(&f32_vignette(2, 2, 5)).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_sarv(&bytes), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn nan_on_disk_rejected() {
        let mut bytes = encode_sarv(&f32_vignette(2, 2, 6)).unwrap();
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_sarv(&bytes), Err(Error::Invariant(_))));
    }

    #[test]
    fn raster_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.f32");
        let grid = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.5);
        let desc = RasterDescriptor {
            rows: 3,
            cols: 4,
            pixel_spacing_m: Some(50.0),
            prf: None,
            source_id: "s".into(),
            subaperture_index: Some(2),
        };
        write_raster(&path, &grid, &desc).unwrap();
        let (g, d) = read_raster(&path).unwrap();
        assert_eq!(g, grid);
        assert_eq!(d, desc);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn encode_decode_identity(rows in 2usize..12, cols in 1usize..12, seed in any::<u64>()) {
            let v = f32_vignette(rows, cols, seed);
            let mut back = decode_sarv(&encode_sarv(&v).unwrap()).unwrap();
            back.id = v.id.clone();
            back.meta = v.meta.clone();
            prop_assert_eq!(back, v);
        }
    }
}

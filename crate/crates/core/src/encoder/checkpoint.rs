//! Checkpoint container: `SRAE`, u16 version, u32 manifest length, a JSON
//! manifest (config plus `path`, `shape`, `dtype` per array), then every
//! array as little-endian f64 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{AutoEncoder, EncoderConfig};
use super::nn::Parameterized;
use crate::error::{Error, Result};
use crate::sarv::LeReader;

const MAGIC: &[u8; 4] = b"SRAE";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: EncoderConfig,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct ArrayEntry {
    path: String,
    shape: Vec<usize>,
    dtype: String,
}

pub fn save_checkpoint(model: &AutoEncoder) -> Result<Vec<u8>> {
    let mut arrays = Vec::new();
    let mut payload = Vec::new();
    model.visit("", &mut |path, _, shape, values| {
        arrays.push(ArrayEntry {
            path: path.to_string(),
            shape: shape.to_vec(),
            dtype: "f64".into(),
        });
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    });
    let manifest = serde_json::to_vec(&Manifest { config: model.config.clone(), arrays })?;
    let mut out = Vec::with_capacity(10 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<AutoEncoder> {
    let mut r = LeReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not an auto-encoder checkpoint".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Version { expected: VERSION, found: version });
    }
    let len = r.u32()? as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(len)?)?;
    let mut model = AutoEncoder::new(manifest.config)?;
    let mut expected = Vec::new();
    model.visit("", &mut |path, _, shape, _| {
        expected.push(ArrayEntry {
            path: path.to_string(),
            shape: shape.to_vec(),
            dtype: "f64".into(),
        })
    });
    if expected != manifest.arrays {
        return Err(Error::Format("checkpoint manifest does not match its config".into()));
    }
    let mut fault = None;
    model.visit_mut("", &mut |path, _, _, values| {
        for v in values.iter_mut() {
            match r.f64() {
                Ok(x) if x.is_finite() => *v = x,
                Ok(_) => {
                    fault.get_or_insert_with(|| Error::Format(format!("non-finite value in {path}")));
                }
                Err(e) => {
                    fault.get_or_insert(e);
                    return;
                }
            }
        }
    });
    if let Some(e) = fault {
        return Err(e);
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    Ok(model)
}

pub fn write_checkpoint(model: &AutoEncoder, path: &Path) -> Result<()> {
    std::fs::write(path, save_checkpoint(model)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<AutoEncoder> {
    load_checkpoint(&std::fs::read(path)?)
}

/// Content-derived version string, `ae-<16 hex digits>`.
pub fn model_version(model: &AutoEncoder) -> Result<String> {
    Ok(format!("ae-{:016x}", super::fnv1a(&save_checkpoint(model)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            widths: [2, 2, 3, 4],
            attention_heads: 2,
            input_dims: (16, 16),
            ..EncoderConfig::desk(3, 11)
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = AutoEncoder::new(tiny()).unwrap();
        m.stem.bn.running_var[0] = 1.25;
        let bytes = save_checkpoint(&m).unwrap();
        let back = load_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_version(&back).unwrap(), model_version(&m).unwrap());
        let other = AutoEncoder::new(EncoderConfig { seed: 12, ..tiny() }).unwrap();
        assert_ne!(model_version(&other).unwrap(), model_version(&m).unwrap());
    }

    #[test]
    fn rejects_damage() {
        let m = AutoEncoder::new(tiny()).unwrap();
        let bytes = save_checkpoint(&m).unwrap();
        assert!(matches!(load_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(load_checkpoint(&bad), Err(Error::Version { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(load_checkpoint(&extra).is_err());
        assert!(load_checkpoint(b"nope").is_err());
    }
}

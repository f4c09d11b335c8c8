//! Input stacks and the two encoders that turn them into embeddings.

mod baseline;
mod checkpoint;
mod model;
pub mod nn;
mod optim;
mod stack;
mod train;

pub use baseline::{baseline_descriptor, BASELINE_VERSION};
pub use checkpoint::{load_checkpoint, model_version, read_checkpoint, save_checkpoint, write_checkpoint};
pub use model::{ae_loss, ae_loss_grad, embed, AutoEncoder, EncoderConfig, Forward, LatentPool};
pub use optim::Adam;
pub use stack::{fit_grid, normalize_stack, ChannelStats, InputStack, Representation};
pub use train::{train_autoencoder, write_metrics, EpochMetrics, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EncoderKind {
    Baseline,
    Autoenc,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 2] = [EncoderKind::Baseline, EncoderKind::Autoenc];

    pub fn tag(self) -> u8 {
        match self {
            EncoderKind::Baseline => 0,
            EncoderKind::Autoenc => 1,
        }
    }

    pub fn from_tag(t: u8) -> Result<Self> {
        Self::ALL
            .get(t as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown encoder tag {t}")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Baseline => "BASELINE",
            EncoderKind::Autoenc => "AUTOENC",
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BASELINE" | "B" => Ok(EncoderKind::Baseline),
            "AUTOENC" | "AE" | "U" => Ok(EncoderKind::Autoenc),
            _ => Err(Error::InvalidArgument(format!("unknown encoder {s:?}"))),
        }
    }
}

/// A fixed-length descriptor of one input stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub id: String,
    pub vector: Vec<f64>,
    pub representation: Representation,
    pub encoder: EncoderKind,
    pub version: String,
}

impl Embedding {
    pub fn validate(&self) -> Result<()> {
        if self.vector.is_empty() {
            return Err(Error::Invariant("empty embedding".into()));
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite embedding for {}", self.id)));
        }
        Ok(())
    }
}

/// 64-bit FNV-1a, used for content-derived version strings.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

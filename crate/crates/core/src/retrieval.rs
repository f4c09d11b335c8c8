//! Exhaustive cosine-similarity retrieval over stored embeddings, and the
//! SRIX index file.
//!
//! SRIX layout (little-endian): `SRIX`, u16 version, u32 dimension,
//! u32 count, then per entry a u32-length-prefixed UTF-8 id, representation
//! tag u8, encoder tag u8, `dimension` f32 values and u32-length-prefixed
//! metadata JSON.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{fnv1a, EncoderKind, Embedding, Representation};
use crate::error::{Error, Result};
use crate::sarv::LeReader;
use crate::vignette::VignetteMeta;

const MAGIC: &[u8; 4] = b"SRIX";
const VERSION: u16 = 1;

/// `a.b / (|a| |b|)` clamped to `[-1, 1]`. The denominator is taken as
/// `sqrt(|a|^2 |b|^2)` so that `a == b` gives exactly 1.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), found: b.len() });
    }
    let na = sq_norm(a.iter().copied());
    let nb = sq_norm(b.iter().copied());
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

fn sq_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub vector: Vec<f32>,
    pub representation: Representation,
    pub encoder: EncoderKind,
    pub meta: VignetteMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub id: String,
    pub similarity: f64,
    /// 1-based.
    pub rank: usize,
    pub meta: VignetteMeta,
}

/// Immutable set of embeddings sharing one dimension and one
/// (representation, encoder) pair. Entries are kept sorted by id.
#[derive(Clone, Debug)]
pub struct RetrievalIndex {
    entries: Vec<IndexEntry>,
    /// squared norms
    norms: Vec<f64>,
    positions: HashMap<String, usize>,
    dimension: usize,
    version: String,
}

impl PartialEq for RetrievalIndex {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension && self.entries == other.entries
    }
}

impl RetrievalIndex {
    /// An empty index of the given dimension.
    pub fn empty(dimension: usize) -> Result<Self> {
        Self::from_entries(dimension, Vec::new())
    }

    fn from_entries(dimension: usize, mut entries: Vec<IndexEntry>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let mut positions = HashMap::with_capacity(entries.len());
        let mut norms = Vec::with_capacity(entries.len());
        let tags = entries.first().map(|e| (e.representation, e.encoder));
        for (i, e) in entries.iter().enumerate() {
            if e.vector.len() != dimension {
                return Err(Error::Dimension { expected: dimension, found: e.vector.len() });
            }
            if Some((e.representation, e.encoder)) != tags {
                return Err(Error::InvalidArgument(format!(
                    "entry {} is {}/{}, index holds {}/{}",
                    e.id,
                    e.representation,
                    e.encoder,
                    tags.unwrap().0,
                    tags.unwrap().1
                )));
            }
            if e.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!("non-finite vector for {}", e.id)));
            }
            let n = sq_norm(e.vector.iter().map(|&v| v as f64));
            if n == 0.0 {
                return Err(Error::InvalidArgument(format!("zero-norm embedding for {}", e.id)));
            }
            norms.push(n);
            if positions.insert(e.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        let version = content_version(dimension, &entries);
        Ok(Self {
            entries,
            norms,
            positions,
            dimension,
            version,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Content hash, `srix-<16 hex digits>`.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.positions.get(id).map(|&i| &self.entries[i])
    }

    /// `(representation, encoder)` of the entries, `None` when empty.
    pub fn tags(&self) -> Option<(Representation, EncoderKind)> {
        self.entries.first().map(|e| (e.representation, e.encoder))
    }

    /// A new index with one more entry.
    pub fn with_entry(&self, e: Embedding, meta: VignetteMeta) -> Result<Self> {
        let mut entries = self.entries.clone();
        entries.push(entry_from(e, meta)?);
        Self::from_entries(self.dimension, entries)
    }

    /// Ranks every entry against `q` and returns the best `n_max`, similarity
    /// descending with ties broken by id ascending. The query is rounded to
    /// f32 like the stored vectors; scoring is in f64.
    pub fn query(&self, q: &[f64], n_max: usize) -> Result<Vec<RankedResult>> {
        self.query_excluding(q, n_max, None)
    }

    /// As [`query`](Self::query) with one id left out of the ranking.
    pub fn query_excluding(&self, q: &[f64], n_max: usize, exclude: Option<&str>) -> Result<Vec<RankedResult>> {
        if q.len() != self.dimension {
            return Err(Error::Dimension { expected: self.dimension, found: q.len() });
        }
        if n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("query has non-finite values".into()));
        }
        let q32: Vec<f64> = q.iter().map(|&v| v as f32 as f64).collect();
        let qn = sq_norm(q32.iter().copied());
        if qn == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| Some(e.id.as_str()) != exclude)
            .map(|(i, e)| {
                let dot: f64 = e.vector.iter().zip(&q32).map(|(&a, &b)| a as f64 * b).sum();
                ((dot / (self.norms[i] * qn).sqrt()).clamp(-1.0, 1.0), i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then_with(|| self.entries[a.1].id.cmp(&self.entries[b.1].id))
        };
        let n = n_max.min(scored.len());
        if n < scored.len() {
            scored.select_nth_unstable_by(n, cmp);
            scored.truncate(n);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(r, (similarity, i))| RankedResult {
                id: self.entries[i].id.clone(),
                similarity,
                rank: r + 1,
                meta: self.entries[i].meta.clone(),
            })
            .collect())
    }
}

fn entry_from(e: Embedding, meta: VignetteMeta) -> Result<IndexEntry> {
    e.validate()?;
    Ok(IndexEntry {
        id: e.id,
        vector: e.vector.iter().map(|&v| v as f32).collect(),
        representation: e.representation,
        encoder: e.encoder,
        meta,
    })
}

/// Builds an index from embeddings and their metadata.
pub fn build_index(items: Vec<(Embedding, VignetteMeta)>) -> Result<RetrievalIndex> {
    let dimension = items
        .first()
        .map(|(e, _)| e.vector.len())
        .ok_or_else(|| Error::InvalidArgument("cannot build an index from nothing".into()))?;
    let entries = items
        .into_iter()
        .map(|(e, m)| entry_from(e, m))
        .collect::<Result<Vec<_>>>()?;
    RetrievalIndex::from_entries(dimension, entries)
}

fn content_version(dimension: usize, entries: &[IndexEntry]) -> String {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&(dimension as u32).to_le_bytes());
    for e in entries {
        bytes.extend_from_slice(e.id.as_bytes());
        bytes.push(0);
        bytes.push(e.representation.tag());
        bytes.push(e.encoder.tag());
        for v in &e.vector {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    format!("srix-{:016x}", fnv1a(&bytes))
}

pub fn encode_index(idx: &RetrievalIndex) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(idx.dimension as u32).to_le_bytes());
    out.extend_from_slice(&(idx.entries.len() as u32).to_le_bytes());
    for e in &idx.entries {
        out.extend_from_slice(&(e.id.len() as u32).to_le_bytes());
        out.extend_from_slice(e.id.as_bytes());
        out.push(e.representation.tag());
        out.push(e.encoder.tag());
        for v in &e.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let meta = serde_json::to_vec(&e.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
    }
    Ok(out)
}

pub fn decode_index(bytes: &[u8]) -> Result<RetrievalIndex> {
    let mut r = LeReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad index magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Version { expected: VERSION, found: version });
    }
    let dimension = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(r.remaining()));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("id is not UTF-8".into()))?
            .to_string();
        let representation = Representation::from_tag(r.u8()?)?;
        let encoder = EncoderKind::from_tag(r.u8()?)?;
        let vector = (0..dimension).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let len = r.u32()? as usize;
        let meta: VignetteMeta = serde_json::from_slice(r.take(len)?)?;
        entries.push(IndexEntry { id, vector, representation, encoder, meta });
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    RetrievalIndex::from_entries(dimension, entries)
}

pub fn save_index(idx: &RetrievalIndex, path: &Path) -> Result<()> {
    std::fs::write(path, encode_index(idx)?)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<RetrievalIndex> {
    decode_index(&std::fs::read(path)?)
}

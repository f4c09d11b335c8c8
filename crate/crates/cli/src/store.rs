//! Data directory layout shared by the CLI and the service.
//!
//! ```text
//! <root>/vignettes/<id>.sarv (+ .json sidecar)
//! <root>/models/<REP>.ckpt
//! <root>/indexes/<REP>_<ENC>.srix
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sarret::encoder::{
    baseline_descriptor, embed, model_version, read_checkpoint, AutoEncoder, EncoderKind, Embedding, Representation,
};
use sarret::pipeline::{build_representations, PipelineConfig};
use sarret::preprocess::CalibrationProfile;
use sarret::retrieval::{build_index, load_index, save_index, RetrievalIndex};
use sarret::sarv::{read_vignette, write_vignette};
use sarret::{ComplexVignette, Error, Result, VignetteMeta};

pub type IndexKey = (Representation, EncoderKind);

pub fn key_label(key: IndexKey) -> String {
    format!("{}/{}", key.0.as_str(), key.1.as_str())
}

/// Ids become file names, so only a conservative character set is allowed.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("invalid vignette id {id:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["vignettes", "models", "indexes"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn vignette_path(&self, id: &str) -> Result<PathBuf> {
        validate_id(id)?;
        Ok(self.root.join("vignettes").join(format!("{id}.sarv")))
    }

    pub fn model_path(&self, rep: Representation) -> PathBuf {
        self.root.join("models").join(format!("{}.ckpt", rep.as_str()))
    }

    pub fn index_path(&self, key: IndexKey) -> PathBuf {
        self.root
            .join("indexes")
            .join(format!("{}_{}.srix", key.0.as_str(), key.1.as_str()))
    }

    /// Sorted ids of every stored vignette.
    pub fn ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join("vignettes"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "sarv") {
                if let Some(stem) = path.file_stem() {
                    ids.push(stem.to_string_lossy().into_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vignette_path(id).is_ok_and(|p| p.exists())
    }

    pub fn read(&self, id: &str) -> Result<ComplexVignette> {
        let path = self.vignette_path(id)?;
        if !path.exists() {
            return Err(Error::UnknownId(id.to_string()));
        }
        let mut v = read_vignette(&path)?;
        v.id = id.to_string();
        Ok(v)
    }

    pub fn write(&self, v: &ComplexVignette) -> Result<()> {
        write_vignette(v, &self.vignette_path(&v.id)?)
    }

    pub fn metas(&self) -> Result<BTreeMap<String, VignetteMeta>> {
        self.ids()?
            .into_iter()
            .map(|id| {
                let meta = self.read(&id)?.meta;
                Ok((id, meta))
            })
            .collect()
    }

    pub fn load_models(&self) -> Result<BTreeMap<Representation, AutoEncoder>> {
        let mut out = BTreeMap::new();
        for rep in Representation::ALL {
            let path = self.model_path(rep);
            if path.exists() {
                out.insert(rep, read_checkpoint(&path)?);
            }
        }
        Ok(out)
    }

    pub fn load_indexes(&self) -> Result<BTreeMap<IndexKey, RetrievalIndex>> {
        let mut out = BTreeMap::new();
        for rep in Representation::ALL {
            for enc in EncoderKind::ALL {
                let path = self.index_path((rep, enc));
                if path.exists() {
                    out.insert((rep, enc), load_index(&path)?);
                }
            }
        }
        Ok(out)
    }

    /// Written to a temporary file first so readers never see a partial index.
    pub fn save_index(&self, key: IndexKey, idx: &RetrievalIndex) -> Result<()> {
        let path = self.index_path(key);
        let tmp = path.with_extension("srix.tmp");
        save_index(idx, &tmp)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

/// Turns vignettes into embeddings for every configured index.
#[derive(Clone, Debug)]
pub struct Embedder {
    models: BTreeMap<Representation, (AutoEncoder, String)>,
    pipeline: PipelineConfig,
}

impl Embedder {
    pub fn new(models: BTreeMap<Representation, AutoEncoder>) -> Result<Self> {
        let mut pipeline = PipelineConfig::default();
        let mut dims = None;
        for m in models.values() {
            let d = m.config.input_dims;
            if dims.is_some_and(|x| x != d) {
                return Err(Error::InvalidArgument("models disagree on input dimensions".into()));
            }
            dims = Some(d);
        }
        if let Some(d) = dims {
            pipeline.dims = d;
        }
        let models = models
            .into_iter()
            .map(|(r, m)| {
                if m.config.input_channels != expected_channels(r, &pipeline) {
                    return Err(Error::InvalidArgument(format!(
                        "model for {} expects {} channels",
                        r.as_str(),
                        m.config.input_channels
                    )));
                }
                let v = model_version(&m)?;
                Ok((r, (m, v)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { models, pipeline })
    }

    pub fn from_store(store: &Store) -> Result<Self> {
        Self::new(store.load_models()?)
    }

    pub fn pipeline(&self) -> &PipelineConfig {
        &self.pipeline
    }

    /// Baseline for every representation, auto-encoder where a model exists.
    pub fn configurations(&self) -> Vec<IndexKey> {
        let mut out = Vec::new();
        for rep in Representation::ALL {
            out.push((rep, EncoderKind::Baseline));
            if self.models.contains_key(&rep) {
                out.push((rep, EncoderKind::Autoenc));
            }
        }
        out
    }

    pub fn embed(&self, v: &ComplexVignette, key: IndexKey) -> Result<Embedding> {
        let mut all = self.embed_keys(v, &[key])?;
        Ok(all.remove(0))
    }

    pub fn embed_all(&self, v: &ComplexVignette) -> Result<Vec<Embedding>> {
        self.embed_keys(v, &self.configurations())
    }

    fn embed_keys(&self, v: &ComplexVignette, keys: &[IndexKey]) -> Result<Vec<Embedding>> {
        let mut reps: Vec<Representation> = keys.iter().map(|k| k.0).collect();
        reps.dedup();
        let profile = CalibrationProfile::ones(v.cols());
        let stacks = build_representations(v, &profile, &self.pipeline, &reps)?;
        keys.iter()
            .map(|&(rep, enc)| {
                let s = stacks.iter().find(|s| s.representation == rep).expect("stack built above");
                match enc {
                    EncoderKind::Baseline => baseline_descriptor(s),
                    EncoderKind::Autoenc => {
                        let (m, version) = self
                            .models
                            .get(&rep)
                            .ok_or_else(|| Error::InvalidArgument(format!("no model for {}", rep.as_str())))?;
                        embed(m, s, version)
                    }
                }
            })
            .collect()
    }
}

fn expected_channels(rep: Representation, p: &PipelineConfig) -> usize {
    match rep {
        Representation::Vig | Representation::DopVig => 1,
        Representation::Subap | Representation::DopSubap => p.sd.n_sub,
    }
}

/// Embeds every stored vignette under every configuration.
pub fn build_store_indexes(store: &Store, embedder: &Embedder) -> Result<BTreeMap<IndexKey, RetrievalIndex>> {
    let keys = embedder.configurations();
    let mut items: BTreeMap<IndexKey, Vec<(Embedding, VignetteMeta)>> = BTreeMap::new();
    for id in store.ids()? {
        let v = store.read(&id)?;
        log::info!("embedding {id}");
        for (key, e) in keys.iter().zip(embedder.embed_all(&v)?) {
            items.entry(*key).or_default().push((e, v.meta.clone()));
        }
    }
    items.into_iter().map(|(k, v)| Ok((k, build_index(v)?))).collect()
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mcnemar_test, query_precisions, McNemar};
use crate::encoder::{
    baseline_descriptor, embed, model_version, train_autoencoder, EncoderConfig, EncoderKind, Embedding,
    InputStack, Representation, TrainConfig,
};
use crate::error::{Error, Result};
use crate::pipeline::{build_representations, PipelineConfig};
use crate::preprocess::CalibrationProfile;
use crate::retrieval::{build_index, RetrievalIndex};
use crate::rng::{splitmix64, SarRng};
use crate::synth::{synth_vignette, SynthGeometry, SynthParams};
use crate::vignette::{ClassLabel, VignetteMeta};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Class indices to generate.
    pub classes: Vec<u8>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Size of each generated vignette in samples.
    pub vignette_size: (usize, usize),
    /// Encoder input grid after decimation.
    pub grid: (usize, usize),
    pub queries_per_class: usize,
    pub ks: Vec<usize>,
    pub widths: [usize; 4],
    pub attention_heads: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub representations: Vec<Representation>,
    /// Also evaluate the fixed descriptor on every representation.
    pub baseline: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let desk = EncoderConfig::desk(1, 0);
        Self {
            seed: 2024,
            classes: (0..10).collect(),
            train_per_class: 100,
            test_per_class: 20,
            vignette_size: (640, 640),
            grid: (64, 64),
            queries_per_class: 10,
            ks: vec![5, 50],
            widths: desk.widths,
            attention_heads: desk.attention_heads,
            epochs: 20,
            batch_size: 16,
            lr: 1e-3,
            representations: Representation::ALL.to_vec(),
            baseline: true,
        }
    }
}

impl ExperimentConfig {
    /// A few seconds of work; used for smoke and determinism checks.
    pub fn small() -> Self {
        Self {
            seed: 7,
            classes: vec![0, 1, 2],
            train_per_class: 4,
            test_per_class: 4,
            vignette_size: (160, 160),
            grid: (16, 16),
            queries_per_class: 2,
            ks: vec![1, 3],
            widths: [4, 4, 8, 8],
            attention_heads: 2,
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
            representations: Representation::ALL.to_vec(),
            baseline: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        for &c in &self.classes {
            ClassLabel::from_index(c)?;
        }
        let mut sorted = self.classes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.classes.len() {
            return bad("duplicate class".into());
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("every class needs train and test samples".into());
        }
        if self.queries_per_class == 0 || self.queries_per_class > self.test_per_class {
            return bad(format!(
                "queries_per_class must be in 1..={}, got {}",
                self.test_per_class, self.queries_per_class
            ));
        }
        let pool = self.classes.len() * self.test_per_class - 1;
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0 || k > pool) {
            return bad(format!("every k must be in 1..={pool}"));
        }
        if self.representations.is_empty() {
            return bad("no representations".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("bad learning rate {}", self.lr));
        }
        self.encoder_config(1).validate()
    }

    fn encoder_config(&self, channels: usize) -> EncoderConfig {
        EncoderConfig {
            widths: self.widths,
            attention_heads: self.attention_heads,
            input_channels: channels,
            input_dims: self.grid,
            seed: splitmix64(self.seed ^ 0xae),
            ..EncoderConfig::desk(channels, 0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub representation: Representation,
    pub model_version: String,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub name: String,
    pub representation: Representation,
    pub encoder: EncoderKind,
    /// Keyed by "P@k".
    pub overall: BTreeMap<String, f64>,
    /// Class abbreviation -> "P@k" -> mean precision.
    pub per_class: BTreeMap<String, BTreeMap<String, f64>>,
    /// Whether the nearest neighbour of each query shares its class, in query order.
    pub top1_hits: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub test: McNemar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub dataset_seeds: BTreeMap<String, u64>,
    pub query_sampling: String,
    pub query_count: usize,
    pub query_ids: Vec<String>,
    pub classes: Vec<String>,
    pub training: Vec<TrainSummary>,
    pub configurations: Vec<ConfigResult>,
    /// McNemar tests on top-1 hits.
    pub comparisons: Vec<Comparison>,
}

/// The report plus values that vary between otherwise identical runs.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub runtime_secs: f64,
}

pub fn config_name(rep: Representation, enc: EncoderKind) -> String {
    let prefix = match enc {
        EncoderKind::Autoenc => "U",
        EncoderKind::Baseline => "B",
    };
    let body = match rep {
        Representation::Vig => "Vig",
        Representation::Subap => "Subap",
        Representation::DopVig => "Dop-Vig",
        Representation::DopSubap => "Dop-Subap",
    };
    format!("{prefix}-{body}")
}

struct Sample {
    label: u8,
    meta: VignetteMeta,
    stacks: Vec<InputStack>,
}

fn sample_seed(master: u64, split: u64, class: u8, i: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master ^ split) ^ class as u64) ^ i as u64)
}

fn generate_split(cfg: &ExperimentConfig, split: u64, per_class: usize) -> Result<Vec<Sample>> {
    let jobs: Vec<(u8, u64)> = cfg
        .classes
        .iter()
        .flat_map(|&c| (0..per_class).map(move |i| (c, sample_seed(cfg.seed, split, c, i))))
        .collect();
    let geom = SynthGeometry::default();
    let profile = CalibrationProfile::ones(cfg.vignette_size.1);
    let pcfg = PipelineConfig {
        dims: cfg.grid,
        ..PipelineConfig::default()
    };
    jobs.par_iter()
        .map(|&(c, seed)| {
            let class = ClassLabel::from_index(c)?;
            let v = synth_vignette(
                &SynthParams::new(class, seed).with_size(cfg.vignette_size.0, cfg.vignette_size.1),
                &geom,
            )
            .map_err(Error::in_stage("synthesis"))?;
            let stacks = build_representations(&v, &profile, &pcfg, &cfg.representations)?;
            Ok(Sample {
                label: c,
                meta: v.meta.clone(),
                stacks,
            })
        })
        .collect()
}

/// Stratified: `per_class` distinct test items of every class, in class order.
fn sample_queries(cfg: &ExperimentConfig, test: &[Sample]) -> Vec<usize> {
    let mut rng = SarRng::new(cfg.seed).substream(0x9e);
    let mut picked = Vec::new();
    for &c in &cfg.classes {
        let mut members: Vec<usize> = (0..test.len()).filter(|&i| test[i].label == c).collect();
        rng.shuffle(&mut members);
        members.truncate(cfg.queries_per_class);
        members.sort_unstable();
        picked.extend(members);
    }
    picked
}

fn evaluate(
    cfg: &ExperimentConfig,
    name: String,
    rep: Representation,
    enc: EncoderKind,
    embeddings: Vec<Embedding>,
    test: &[Sample],
    queries: &[usize],
) -> Result<ConfigResult> {
    let items = embeddings
        .iter()
        .cloned()
        .zip(test.iter().map(|s| s.meta.clone()))
        .collect();
    let idx: RetrievalIndex = build_index(items).map_err(Error::in_stage("indexing"))?;
    let qs: Vec<(Embedding, u8)> = queries.iter().map(|&i| (embeddings[i].clone(), test[i].label)).collect();

    let mut overall = BTreeMap::new();
    let mut per_class: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for &k in &cfg.ks {
        let key = format!("P@{k}");
        let p = query_precisions(&idx, &qs, k).map_err(Error::in_stage("evaluation"))?;
        overall.insert(key.clone(), p.iter().sum::<f64>() / p.len() as f64);
        for &c in &cfg.classes {
            let vals: Vec<f64> = p.iter().zip(&qs).filter(|(_, q)| q.1 == c).map(|(v, _)| *v).collect();
            let abbr = ClassLabel::from_index(c)?.abbreviation().to_string();
            per_class
                .entry(abbr)
                .or_default()
                .insert(key.clone(), vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    let top1_hits = query_precisions(&idx, &qs, 1)?.into_iter().map(|p| p == 1.0).collect();
    Ok(ConfigResult {
        name,
        representation: rep,
        encoder: enc,
        overall,
        per_class,
        top1_hits,
    })
}

/// Seeded synthetic dataset -> four representations -> one auto-encoder per
/// representation -> test-set indexes -> P@k and McNemar comparisons.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let start = Instant::now();
    log::info!(
        "generating {} train and {} test vignettes",
        cfg.classes.len() * cfg.train_per_class,
        cfg.classes.len() * cfg.test_per_class
    );
    let train = generate_split(cfg, 1, cfg.train_per_class)?;
    let test = generate_split(cfg, 2, cfg.test_per_class)?;
    let queries = sample_queries(cfg, &test);
    log::info!("datasets ready after {:.1} s", start.elapsed().as_secs_f64());

    let mut training = Vec::new();
    let mut configurations = Vec::new();
    for (ri, &rep) in cfg.representations.iter().enumerate() {
        let tr: Vec<InputStack> = train.iter().map(|s| s.stacks[ri].clone()).collect();
        let te: Vec<InputStack> = test.iter().map(|s| s.stacks[ri].clone()).collect();
        let channels = tr[0].channels();
        let tc = TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            seed: splitmix64(cfg.seed ^ (0x700 + rep.tag() as u64)),
        };
        log::info!("training {} ({} channels)", rep.as_str(), channels);
        let (model, tr_report) =
            train_autoencoder(&tr, &te, &cfg.encoder_config(channels), &tc).map_err(Error::in_stage("training"))?;
        let version = model_version(&model)?;
        let best = tr_report.best_epoch.and_then(|e| tr_report.history.iter().find(|m| m.epoch == e));
        training.push(TrainSummary {
            representation: rep,
            model_version: version.clone(),
            best_epoch: tr_report.best_epoch,
            best_val_loss: best.map(|m| m.val_loss),
            final_train_loss: tr_report.history.last().map(|m| m.train_loss),
            steps: tr_report.steps,
        });

        let embs = te
            .iter()
            .map(|s| embed(&model, s, &version))
            .collect::<Result<Vec<_>>>()
            .map_err(Error::in_stage("embedding"))?;
        let name = config_name(rep, EncoderKind::Autoenc);
        configurations.push(evaluate(cfg, name, rep, EncoderKind::Autoenc, embs, &test, &queries)?);

        if cfg.baseline {
            let embs = te
                .iter()
                .map(baseline_descriptor)
                .collect::<Result<Vec<_>>>()
                .map_err(Error::in_stage("embedding"))?;
            let name = config_name(rep, EncoderKind::Baseline);
            configurations.push(evaluate(cfg, name, rep, EncoderKind::Baseline, embs, &test, &queries)?);
        }
    }

    let mut comparisons = Vec::new();
    for (a, b) in [
        (Representation::Subap, Representation::Vig),
        (Representation::DopSubap, Representation::DopVig),
    ] {
        let find = |r| configurations.iter().find(|c: &&ConfigResult| c.representation == r && c.encoder == EncoderKind::Autoenc);
        if let (Some(x), Some(y)) = (find(a), find(b)) {
            comparisons.push(Comparison {
                a: x.name.clone(),
                b: y.name.clone(),
                test: mcnemar_test(&x.top1_hits, &y.top1_hits)?,
            });
        }
    }

    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        dataset_seeds: BTreeMap::from([
            ("master".to_string(), cfg.seed),
            ("train".to_string(), splitmix64(cfg.seed ^ 1)),
            ("test".to_string(), splitmix64(cfg.seed ^ 2)),
        ]),
        query_sampling: "stratified".into(),
        query_count: queries.len(),
        query_ids: queries.iter().map(|&i| test[i].stacks[0].source_id.clone()).collect(),
        classes: cfg
            .classes
            .iter()
            .map(|&c| ClassLabel::from_index(c).map(|l| l.abbreviation().to_string()))
            .collect::<Result<_>>()?,
        training,
        configurations,
        comparisons,
    };
    Ok(ExperimentOutput {
        report,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported report schema {}", r.schema_version)));
        }
        Ok(r)
    }

    pub fn config(&self, name: &str) -> Option<&ConfigResult> {
        self.configurations.iter().find(|c| c.name == name)
    }

    /// Percentages, classes as columns with one sub-column per k.
    pub fn table(&self) -> String {
        let keys: Vec<String> = self.config.ks.iter().map(|k| format!("P@{k}")).collect();
        let mut groups: Vec<&str> = self.classes.iter().map(String::as_str).collect();
        groups.push("Overall");
        let cell = 6;
        let group_w = keys.len() * (cell + 1) - 1;
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "");
        for g in &groups {
            let _ = write!(out, "|{g:^group_w$}");
        }
        out.push('\n');
        let _ = write!(out, "{:<12}", "Config");
        for _ in &groups {
            out.push('|');
            let sub: Vec<String> = keys.iter().map(|k| format!("{k:>cell$}")).collect();
            out.push_str(&sub.join(" "));
        }
        out.push('\n');
        out.push_str(&"-".repeat(12 + groups.len() * (group_w + 1)));
        out.push('\n');
        for c in &self.configurations {
            let _ = write!(out, "{:<12}", c.name);
            for g in &groups {
                let row = if *g == "Overall" { Some(&c.overall) } else { c.per_class.get(*g) };
                out.push('|');
                let sub: Vec<String> = keys
                    .iter()
                    .map(|k| match row.and_then(|r| r.get(k)) {
                        Some(v) => format!("{:>cell$.1}", v * 100.0),
                        None => format!("{:>cell$}", "-"),
                    })
                    .collect();
                out.push_str(&sub.join(" "));
            }
            out.push('\n');
        }
        for cmp in &self.comparisons {
            let _ = writeln!(
                out,
                "McNemar {} vs {}: statistic {:.3}, p {:.4} (b01 {}, b10 {})",
                cmp.a, cmp.b, cmp.test.statistic, cmp.test.p_value, cmp.test.b01, cmp.test.b10
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_experiment_schema() {
        let cfg = ExperimentConfig::small();
        let out = run_experiment(&cfg).unwrap();
        let r = &out.report;
        assert_eq!(r.configurations.len(), 8);
        assert_eq!(r.query_count, 6);
        assert_eq!(r.query_sampling, "stratified");
        for c in &r.configurations {
            assert_eq!(c.per_class.len(), 3);
            assert_eq!(c.overall.len(), 2);
            assert_eq!(c.top1_hits.len(), 6);
            for v in c.overall.values().chain(c.per_class.values().flat_map(|m| m.values())) {
                assert!((0.0..=1.0).contains(v));
            }
        }
        assert_eq!(r.comparisons.len(), 2);
        let back = ExperimentReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(&back, r);
        let table = r.table();
        assert!(table.contains("U-Dop-Subap"));
        assert!(table.contains("Overall"));
        assert_eq!(table.lines().count(), 3 + 8 + 2);
    }

    #[test]
    fn stratified_queries_are_distinct() {
        let cfg = ExperimentConfig {
            test_per_class: 4,
            queries_per_class: 3,
            ..ExperimentConfig::small()
        };
        let test: Vec<Sample> = (0..12)
            .map(|i| Sample {
                label: (i / 4) as u8,
                meta: VignetteMeta::default(),
                stacks: vec![],
            })
            .collect();
        let q = sample_queries(&cfg, &test);
        assert_eq!(q.len(), 9);
        for c in 0..3u8 {
            assert_eq!(q.iter().filter(|&&i| test[i].label == c).count(), 3);
        }
        let mut d = q.clone();
        d.dedup();
        assert_eq!(d, q);
        assert_eq!(sample_queries(&cfg, &test), q);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = [
            ExperimentConfig { classes: vec![], ..ExperimentConfig::small() },
            ExperimentConfig { classes: vec![1, 1], ..ExperimentConfig::small() },
            ExperimentConfig { classes: vec![11], ..ExperimentConfig::small() },
            ExperimentConfig { ks: vec![12], ..ExperimentConfig::small() },
            ExperimentConfig { queries_per_class: 5, ..ExperimentConfig::small() },
            ExperimentConfig { batch_size: 1, ..ExperimentConfig::small() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn names() {
        assert_eq!(config_name(Representation::DopSubap, EncoderKind::Autoenc), "U-Dop-Subap");
        assert_eq!(config_name(Representation::Vig, EncoderKind::Baseline), "B-Vig");
    }
}

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sarret::doppler::{doppler_on_subapertures_with, doppler_on_vignette, DceConfig};
use sarret::encoder::{
    baseline_descriptor, embed, model_version, read_checkpoint, train_autoencoder, write_checkpoint,
    write_metrics, EncoderConfig, EncoderKind, Embedding, InputStack, Representation, TrainConfig,
};
use sarret::eval::{run_experiment, ExperimentConfig};
use sarret::pipeline::{build_representations, PipelineConfig};
use sarret::preprocess::{
    calibrate_sigma0_with, subaperture_decompose_with, vignette_magnitude_decimated, CalibrationProfile, SdConfig,
};
use sarret::retrieval::{build_index, load_index, save_index, RetrievalIndex};
use sarret::rng::splitmix64;
use sarret::sarv::{read_vignette, write_raster, write_vignette, RasterDescriptor};
use sarret::synth::{synth_vignette, SynthGeometry, SynthParams};
use sarret::{ClassLabel, ComplexVignette, Error, Result, VignetteMeta};
use sarret_service::service::{open_state, router, AppState};
use sarret_service::store::{build_store_indexes, Embedder, Store};

#[derive(Parser)]
#[command(name = "sarret", version, about = "SAR vignette preprocessing, embedding and retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset
    Synth(SynthArgs),
    /// Subaperture decomposition into decimated rasters
    Preprocess(PreprocessArgs),
    /// Doppler centroid estimation
    Doppler(DopplerArgs),
    /// Train an auto-encoder on one representation
    Train(TrainArgs),
    /// Write embeddings as JSON lines
    Embed(EmbedArgs),
    #[command(subcommand)]
    Index(IndexCommand),
    /// Query an index by id or by vignette file
    Query(QueryArgs),
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP service
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    per_class: usize,
    /// Comma-separated abbreviations or indices; all ten by default
    #[arg(long, value_delimiter = ',')]
    classes: Vec<ClassLabel>,
    #[arg(long, default_value_t = 640)]
    rows: usize,
    #[arg(long, default_value_t = 640)]
    cols: usize,
    #[arg(long, default_value_t = 0.0)]
    ramp_hz: f64,
}

#[derive(Args)]
struct SdArgs {
    #[arg(long, default_value_t = 4)]
    n_sub: usize,
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    /// JSON gain profile; unit gain when omitted
    #[arg(long)]
    calibration: Option<PathBuf>,
}

impl SdArgs {
    fn config(&self) -> SdConfig {
        SdConfig {
            n_sub: self.n_sub,
            overlap: self.overlap,
            ..SdConfig::default()
        }
    }

    fn profile(&self, v: &ComplexVignette) -> Result<CalibrationProfile> {
        match &self.calibration {
            Some(p) => CalibrationProfile::load(p),
            None => Ok(CalibrationProfile::ones(v.cols())),
        }
    }
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sd: SdArgs,
    /// Also write the full-resolution sub-look SLCs as SARV files
    #[arg(long)]
    slc: bool,
}

#[derive(Args)]
struct DopplerArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Estimate on every sub-look instead of the whole vignette
    #[arg(long)]
    subapertures: bool,
    #[arg(long, default_value_t = 32)]
    window: usize,
    #[command(flatten)]
    sd: SdArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of SARV files
    #[arg(long)]
    data: PathBuf,
    /// Validation directory; the training loss selects the checkpoint when omitted
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    rep: Representation,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// desk or large
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rep: Representation,
    #[arg(long)]
    enc: EncoderKind,
    /// Checkpoint, required for AUTOENC
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Build from an embeddings file, or every index of a data directory
    Build(IndexBuildArgs),
    /// Print a JSON summary of an index
    Inspect {
        path: PathBuf,
    },
}

#[derive(Args)]
struct IndexBuildArgs {
    #[arg(long, conflicts_with = "data_dir", requires = "out")]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "SARRET_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    id: Option<String>,
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "SUBAP")]
    rep: Representation,
    #[arg(long, default_value = "AUTOENC")]
    enc: EncoderKind,
    /// Index file; resolved from the data directory when omitted
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, env = "SARRET_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Checkpoint used to embed --file with AUTOENC
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Run the synthetic retrieval experiment
    Run {
        /// default, small, or a JSON config file
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "SARRET_DATA_DIR")]
    data_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    embedding: Embedding,
    meta: VignetteMeta,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Doppler(a) => doppler(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed_cmd(a),
        Command::Index(IndexCommand::Build(a)) => index_build(a),
        Command::Index(IndexCommand::Inspect { path }) => index_inspect(&path),
        Command::Query(a) => query(a),
        Command::Eval(EvalCommand::Run { config, seed, out }) => eval_run(&config, seed, &out),
        Command::Serve(a) => serve(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let classes = if a.classes.is_empty() { ClassLabel::ALL.to_vec() } else { a.classes };
    let geom = SynthGeometry::default();
    for class in classes {
        for i in 0..a.per_class {
            let seed = splitmix64(splitmix64(a.seed ^ class.index() as u64) ^ i as u64);
            let p = SynthParams::new(class, seed).with_size(a.rows, a.cols).with_ramp(a.ramp_hz);
            let v = synth_vignette(&p, &geom)?;
            write_vignette(&v, &a.out.join(format!("{}.sarv", v.id)))?;
            println!("{}", v.id);
        }
    }
    Ok(())
}

fn raster(rows_cols: (usize, usize), spacing: Option<f64>, prf: Option<f64>, id: &str, sub: Option<usize>) -> RasterDescriptor {
    RasterDescriptor {
        rows: rows_cols.0,
        cols: rows_cols.1,
        pixel_spacing_m: spacing,
        prf,
        source_id: id.to_string(),
        subaperture_index: sub,
    }
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let v = read_vignette(&a.input)?;
    fs::create_dir_all(&a.out)?;
    let cfg = a.sd.config();
    let profile = a.sd.profile(&v)?;
    let spacing = Some(v.azimuth_spacing * cfg.decimation as f64);
    let vig = vignette_magnitude_decimated(&v, &profile, &cfg)?;
    write_raster(&a.out.join(format!("{}.vig.f32", v.id)), &vig, &raster(vig.dim(), spacing, None, &v.id, None))?;
    let ss = subaperture_decompose_with(&v, &profile, &cfg)?;
    for (i, g) in ss.sub_mag_decimated.iter().enumerate() {
        let path = a.out.join(format!("{}.sub{i}.f32", v.id));
        write_raster(&path, g, &raster(g.dim(), spacing, None, &v.id, Some(i)))?;
        if a.slc {
            let look = ComplexVignette::new(
                format!("{}.sub{i}", v.id),
                ss.sub_slc[i].clone(),
                v.prf,
                v.azimuth_spacing,
                v.range_spacing,
                v.meta.clone(),
            )?;
            write_vignette(&look, &a.out.join(format!("{}.sub{i}.sarv", v.id)))?;
        }
    }
    println!(
        "{}",
        json!({"id": v.id, "n_sub": ss.n_sub, "band_centers_hz": ss.band_centers_hz, "decimated": vig.dim()})
    );
    Ok(())
}

fn doppler(a: DopplerArgs) -> Result<()> {
    let v = read_vignette(&a.input)?;
    fs::create_dir_all(&a.out)?;
    let cfg = a.sd.config();
    let profile = a.sd.profile(&v)?;
    let dce = DceConfig {
        d1: a.window,
        d2: a.window,
        ..DceConfig::default()
    };
    let fields = if a.subapertures {
        let ss = subaperture_decompose_with(&v, &profile, &cfg)?;
        doppler_on_subapertures_with(&ss, v.prf, &dce, cfg.decimation)?
    } else {
        let cal = calibrate_sigma0_with(&v, &profile, cfg.calibration)?;
        vec![doppler_on_vignette(cal.data.view(), v.prf, &v.id, &dce, cfg.decimation)?]
    };
    for f in &fields {
        let name = match f.subaperture_index {
            Some(i) => format!("{}.dop{i}.f32", v.id),
            None => format!("{}.dop.f32", v.id),
        };
        write_raster(
            &a.out.join(name),
            &f.data,
            &raster(f.data.dim(), None, Some(f.prf), &v.id, f.subaperture_index),
        )?;
        println!(
            "{}",
            json!({"id": v.id, "subaperture_index": f.subaperture_index, "mean_hz": f.mean(), "undefined": f.undefined_count})
        );
    }
    Ok(())
}

fn sarv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "sarv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .sarv files in {}", dir.display())));
    }
    Ok(files)
}

fn load_stacks(dir: &Path, rep: Representation, pcfg: &PipelineConfig) -> Result<Vec<(InputStack, VignetteMeta)>> {
    sarv_files(dir)?
        .iter()
        .map(|p| {
            let v = read_vignette(p)?;
            let mut s = build_representations(&v, &CalibrationProfile::ones(v.cols()), pcfg, &[rep])?;
            Ok((s.remove(0), v.meta))
        })
        .collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let pcfg = PipelineConfig::default();
    let tr: Vec<InputStack> = load_stacks(&a.data, a.rep, &pcfg)?.into_iter().map(|s| s.0).collect();
    let val: Vec<InputStack> = match &a.val {
        Some(d) => load_stacks(d, a.rep, &pcfg)?.into_iter().map(|s| s.0).collect(),
        None => Vec::new(),
    };
    let channels = tr[0].channels();
    let cfg = match a.preset.as_str() {
        "desk" => EncoderConfig::desk(channels, a.seed),
        "large" => EncoderConfig::large(channels, a.seed),
        other => return Err(Error::InvalidArgument(format!("unknown preset {other:?}"))),
    };
    let cfg = EncoderConfig {
        input_dims: pcfg.dims,
        ..cfg
    };
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
    };
    let (model, report) = train_autoencoder(&tr, &val, &cfg, &tc)?;
    write_checkpoint(&model, &a.out)?;
    if let Some(m) = &a.metrics {
        write_metrics(m, &report.history)?;
    }
    println!(
        "{}",
        json!({"model_version": model_version(&model)?, "best_epoch": report.best_epoch, "steps": report.steps})
    );
    Ok(())
}

fn embed_stack(s: &InputStack, enc: EncoderKind, model: Option<&(sarret::encoder::AutoEncoder, String)>) -> Result<Embedding> {
    match enc {
        EncoderKind::Baseline => baseline_descriptor(s),
        EncoderKind::Autoenc => {
            let (m, v) = model.ok_or_else(|| Error::InvalidArgument("AUTOENC needs --model".into()))?;
            embed(m, s, v)
        }
    }
}

fn load_model(path: Option<&Path>, enc: EncoderKind) -> Result<Option<(sarret::encoder::AutoEncoder, String)>> {
    match (enc, path) {
        (EncoderKind::Autoenc, Some(p)) => {
            let m = read_checkpoint(p)?;
            let v = model_version(&m)?;
            Ok(Some((m, v)))
        }
        _ => Ok(None),
    }
}

fn pipeline_for(model: Option<&(sarret::encoder::AutoEncoder, String)>) -> PipelineConfig {
    let mut p = PipelineConfig::default();
    if let Some((m, _)) = model {
        p.dims = m.config.input_dims;
    }
    p
}

fn embed_cmd(a: EmbedArgs) -> Result<()> {
    let model = load_model(a.model.as_deref(), a.enc)?;
    let pcfg = pipeline_for(model.as_ref());
    let mut w = BufWriter::new(fs::File::create(&a.out)?);
    let mut n = 0;
    for (s, meta) in load_stacks(&a.data, a.rep, &pcfg)? {
        let embedding = embed_stack(&s, a.enc, model.as_ref())?;
        serde_json::to_writer(&mut w, &EmbeddingRecord { embedding, meta })?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    println!("{}", json!({"embeddings": n, "out": a.out}));
    Ok(())
}

fn index_build(a: IndexBuildArgs) -> Result<()> {
    if let Some(path) = &a.embeddings {
        let out = a.out.as_ref().expect("clap requires --out");
        let mut items = Vec::new();
        for line in BufReader::new(fs::File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: EmbeddingRecord = serde_json::from_str(&line)?;
            items.push((r.embedding, r.meta));
        }
        let idx = build_index(items)?;
        save_index(&idx, out)?;
        println!("{}", summary(&idx));
        return Ok(());
    }
    let dir = a
        .data_dir
        .ok_or_else(|| Error::InvalidArgument("either --embeddings or --data-dir is required".into()))?;
    let store = Store::open(dir)?;
    let embedder = Embedder::from_store(&store)?;
    for (k, idx) in build_store_indexes(&store, &embedder)? {
        store.save_index(k, &idx)?;
        println!("{}", summary(&idx));
    }
    Ok(())
}

fn summary(idx: &RetrievalIndex) -> serde_json::Value {
    let (rep, enc) = match idx.tags() {
        Some((r, e)) => (Some(r), Some(e)),
        None => (None, None),
    };
    json!({
        "version": idx.version(),
        "entries": idx.len(),
        "dimension": idx.dimension(),
        "representation": rep,
        "encoder": enc,
    })
}

fn index_inspect(path: &Path) -> Result<()> {
    let idx = load_index(path)?;
    let mut s = summary(&idx);
    let ids: Vec<&str> = idx.entries().iter().map(|e| e.id.as_str()).collect();
    s["ids"] = json!(ids);
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let store = a.data_dir.as_ref().map(Store::open).transpose()?;
    let idx_path = match (&a.index, &store) {
        (Some(p), _) => p.clone(),
        (None, Some(s)) => s.index_path((a.rep, a.enc)),
        (None, None) => return Err(Error::InvalidArgument("either --index or --data-dir is required".into())),
    };
    let idx = load_index(&idx_path)?;
    let vector: Vec<f64> = match (&a.id, &a.file) {
        (Some(id), _) => idx
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.clone()))?
            .vector
            .iter()
            .map(|&x| x as f64)
            .collect(),
        (None, Some(file)) => {
            let model_path = a
                .model
                .clone()
                .or_else(|| store.as_ref().map(|s| s.model_path(a.rep)));
            let model = load_model(model_path.as_deref(), a.enc)?;
            let v = read_vignette(file)?;
            let pcfg = pipeline_for(model.as_ref());
            let s = build_representations(&v, &CalibrationProfile::ones(v.cols()), &pcfg, &[a.rep])?.remove(0);
            embed_stack(&s, a.enc, model.as_ref())?.vector
        }
        (None, None) => unreachable!("clap requires --id or --file"),
    };
    for r in idx.query(&vector, a.k)? {
        println!("{}", serde_json::to_string(&r)?);
    }
    Ok(())
}

fn eval_run(config: &str, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        "default" => ExperimentConfig::default(),
        "small" => ExperimentConfig::small(),
        path => serde_json::from_slice(&fs::read(path)?)?,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let output = run_experiment(&cfg)?;
    fs::write(out, output.report.to_json()?)?;
    fs::write(out.with_extension("txt"), output.report.table())?;
    fs::write(
        out.with_extension("timing.json"),
        serde_json::to_vec_pretty(&json!({"runtime_secs": output.runtime_secs}))?,
    )?;
    print!("{}", output.report.table());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let state = Arc::new(open_state(&a.data_dir)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        if !state.load_persisted()? {
            log::warn!("indexes missing or stale; rebuilding in the background");
            let st: Arc<AppState> = state.clone();
            tokio::task::spawn_blocking(move || {
                if let Err(e) = st.rebuild() {
                    log::error!("index rebuild failed: {e}");
                }
            });
        }
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        log::info!("listening on {}", listener.local_addr()?);
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

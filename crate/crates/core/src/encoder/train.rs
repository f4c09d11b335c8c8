use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ae_loss, batch_of, AutoEncoder, EncoderConfig};
use super::nn::Mode;
use super::optim::Adam;
use super::InputStack;
use crate::error::{Error, Result};
use crate::rng::SarRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    /// Epoch whose parameters were returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub steps: u64,
}

/// Trains with Adam on shuffled mini-batches and returns the parameters from
/// the epoch with the lowest validation loss. With an empty validation set
/// the epoch's mean training loss is used instead. Trailing batches smaller
/// than two samples are skipped (batch norm needs at least two).
pub fn train_autoencoder(
    train: &[InputStack],
    val: &[InputStack],
    cfg: &EncoderConfig,
    tc: &TrainConfig,
) -> Result<(AutoEncoder, TrainReport)> {
    let mut model = AutoEncoder::new(cfg.clone())?;
    if tc.epochs == 0 {
        return Ok((model, TrainReport::default()));
    }
    if train.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least two samples".into()));
    }
    if tc.batch_size < 2 || !(tc.lr > 0.0) {
        return Err(Error::InvalidArgument("batch size must be >= 2 and lr > 0".into()));
    }
    for s in train.iter().chain(val) {
        if s.channels() != cfg.input_channels || s.dims() != cfg.input_dims {
            return Err(Error::Shape(format!(
                "stack {} is {}x{:?}, config expects {}x{:?}",
                s.source_id,
                s.channels(),
                s.dims(),
                cfg.input_channels,
                cfg.input_dims
            )));
        }
    }
    let mut opt = Adam::new(model.learnable_values().len(), tc.lr);
    let root = SarRng::new(tc.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, AutoEncoder)> = None;

    for epoch in 1..=tc.epochs {
        root.substream(epoch as u64).shuffle(&mut order);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let members: Vec<&InputStack> = chunk.iter().map(|&i| &train[i]).collect();
            let x = batch_of(&members);
            let (loss, grads, fwd) = model.loss_and_gradients(&x).map_err(|e| diverged(e, epoch))?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss became {loss} in epoch {epoch}")));
            }
            sum += loss * chunk.len() as f64;
            seen += chunk.len();
            let mut params = model.learnable_values();
            opt.step(&mut params, &grads.learnable_values());
            model.set_learnable_values(&params);
            model.commit_batch_stats(&fwd);
        }
        if !model.is_finite() {
            return Err(Error::Training(format!("parameters diverged in epoch {epoch}")));
        }
        let train_loss = sum / seen as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            eval_loss(&model, val, tc.batch_size).map_err(|e| diverged(e, epoch))?
        };
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        report.history.push(EpochMetrics { epoch, train_loss, val_loss });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            report.best_epoch = Some(epoch);
        }
    }
    report.steps = opt.steps();
    Ok((best.map(|(_, m)| m).unwrap_or(model), report))
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::Training(msg) => Error::Training(format!("{msg} (epoch {epoch})")),
        other => other,
    }
}

/// Mean eval-mode reconstruction loss over `data`.
pub(crate) fn eval_loss(model: &AutoEncoder, data: &[InputStack], batch: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for chunk in data.chunks(batch.max(1)) {
        let members: Vec<&InputStack> = chunk.iter().collect();
        let x = batch_of(&members);
        let f = model.forward(&x, Mode::Eval)?;
        sum += ae_loss(&x, &f.reconstruction)? * chunk.len() as f64;
        n += chunk.len();
    }
    Ok(sum / n as f64)
}

/// One JSON object per line: `{epoch, train_loss, val_loss}`.
pub fn write_metrics(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for m in history {
        serde_json::to_writer(&mut f, m)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

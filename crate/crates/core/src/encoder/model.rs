use ndarray::{Array3, Array4, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::nn::{
    join, relu, relu_backward, BatchNorm2d, BatchNormCache, Conv2d, ConvTranspose2d, Mode, ParamKind,
    Parameterized, TransformerBlock, TransformerCache, Visit, VisitMut,
};
use super::{EncoderKind, Embedding, InputStack};
use crate::error::{Error, Result};
use crate::rng::SarRng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentPool {
    #[default]
    GlobalAverage,
    Flatten,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Stem width followed by the three stride-2 stages.
    pub widths: [usize; 4],
    pub attention_heads: usize,
    pub token_kernel: usize,
    pub latent_pool: LatentPool,
    pub input_channels: usize,
    pub input_dims: (usize, usize),
    pub seed: u64,
    pub residual: bool,
}

impl EncoderConfig {
    /// Widths `[8, 8, 16, 32]` on 64 x 64 inputs.
    pub fn desk(input_channels: usize, seed: u64) -> Self {
        Self {
            widths: [8, 8, 16, 32],
            attention_heads: 4,
            token_kernel: 3,
            latent_pool: LatentPool::GlobalAverage,
            input_channels,
            input_dims: (64, 64),
            seed,
            residual: true,
        }
    }

    /// Widths `[32, 32, 64, 128]` on 128 x 128 inputs.
    pub fn large(input_channels: usize, seed: u64) -> Self {
        Self {
            widths: [32, 32, 64, 128],
            input_dims: (128, 128),
            ..Self::desk(input_channels, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.input_channels == 0 {
            return Err(Error::InvalidArgument("widths and channels must be positive".into()));
        }
        let (h, w) = self.input_dims;
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::InvalidArgument(format!("input dims {h}x{w} must be positive multiples of 8")));
        }
        if self.attention_heads == 0 || self.widths[3] % self.attention_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} heads do not divide width {}",
                self.attention_heads, self.widths[3]
            )));
        }
        if self.token_kernel % 2 == 0 {
            return Err(Error::InvalidArgument("token kernel must be odd".into()));
        }
        Ok(())
    }

    pub fn latent_dims(&self) -> (usize, usize, usize) {
        (self.widths[3], self.input_dims.0 / 8, self.input_dims.1 / 8)
    }

    pub fn embedding_dim(&self) -> usize {
        let (c, h, w) = self.latent_dims();
        match self.latent_pool {
            LatentPool::GlobalAverage => c,
            LatentPool::Flatten => c * h * w,
        }
    }
}

/// Convolution, batch norm, ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct DownBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

/// Transposed convolution, batch norm, ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct UpBlock {
    pub deconv: ConvTranspose2d,
    pub bn: BatchNorm2d,
}

#[derive(Clone, Debug)]
struct StageCache {
    input: Array4<f64>,
    bn: BatchNormCache,
    output: Array4<f64>,
}

impl DownBlock {
    fn forward(&self, x: &Array4<f64>, mode: Mode) -> (Array4<f64>, StageCache) {
        let (z, bn) = self.bn.forward(&self.conv.forward(x), mode);
        let y = relu(&z);
        (y.clone(), StageCache { input: x.clone(), bn, output: y })
    }

    fn backward(&self, c: &StageCache, dy: &Array4<f64>) -> (Array4<f64>, Self) {
        let dz = relu_backward(&c.output, dy);
        let (dc, bn) = self.bn.backward(&c.bn, &dz);
        let (dx, conv) = self.conv.backward(&c.input, &dc);
        (dx, Self { conv, bn })
    }

    fn zeros_like(&self) -> Self {
        Self { conv: self.conv.zeros_like(), bn: self.bn.zeros_like() }
    }
}

impl UpBlock {
    fn forward(&self, x: &Array4<f64>, mode: Mode) -> (Array4<f64>, StageCache) {
        let (z, bn) = self.bn.forward(&self.deconv.forward(x), mode);
        let y = relu(&z);
        (y.clone(), StageCache { input: x.clone(), bn, output: y })
    }

    fn backward(&self, c: &StageCache, dy: &Array4<f64>) -> (Array4<f64>, Self) {
        let dz = relu_backward(&c.output, dy);
        let (dc, bn) = self.bn.backward(&c.bn, &dz);
        let (dx, deconv) = self.deconv.backward(&c.input, &dc);
        (dx, Self { deconv, bn })
    }

    fn zeros_like(&self) -> Self {
        Self { deconv: self.deconv.zeros_like(), bn: self.bn.zeros_like() }
    }
}

/// Stem (7 x 7), three stride-2 stages, an attention block on the
/// bottleneck, three transposed-convolution stages and a 7 x 7 head.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoEncoder {
    pub config: EncoderConfig,
    pub stem: DownBlock,
    pub down: Vec<DownBlock>,
    pub transformer: TransformerBlock,
    pub up: Vec<UpBlock>,
    pub head: Conv2d,
}

/// Result of a forward pass, kept for the backward pass and for committing
/// batch statistics.
#[derive(Clone, Debug)]
pub struct Forward {
    pub reconstruction: Array4<f64>,
    /// Output of the transformer block.
    pub latent: Array4<f64>,
    encoder: Vec<StageCache>,
    transformer_input: Array4<f64>,
    transformer: TransformerCache,
    decoder: Vec<StageCache>,
    head_input: Array4<f64>,
}

impl AutoEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SarRng::new(config.seed).substream(0xae);
        let [w0, w1, w2, w3] = config.widths;
        let c = config.input_channels;
        let down_block = |cin, cout, k, s, p, rng: &mut SarRng| DownBlock {
            conv: Conv2d::new(cin, cout, k, s, p, 1, false, rng),
            bn: BatchNorm2d::new(cout),
        };
        let stem = down_block(c, w0, 7, 1, 3, &mut rng);
        let down = vec![
            down_block(w0, w1, 3, 2, 1, &mut rng),
            down_block(w1, w2, 3, 2, 1, &mut rng),
            down_block(w2, w3, 3, 2, 1, &mut rng),
        ];
        let transformer =
            TransformerBlock::new(w3, config.attention_heads, config.token_kernel, config.residual, &mut rng);
        let up_block = |cin, cout, rng: &mut SarRng| UpBlock {
            deconv: ConvTranspose2d::new(cin, cout, 3, 2, 1, 1, false, rng),
            bn: BatchNorm2d::new(cout),
        };
        let up = vec![
            up_block(w3, w2, &mut rng),
            up_block(w2, w1, &mut rng),
            up_block(w1, w0, &mut rng),
        ];
        let head = Conv2d::new(w0, c, 7, 1, 3, 1, true, &mut rng);
        Ok(Self { config, stem, down, transformer, up, head })
    }

    /// Same structure with every array zeroed; used to hold gradients.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            stem: self.stem.zeros_like(),
            down: self.down.iter().map(DownBlock::zeros_like).collect(),
            transformer: self.transformer.zeros_like(),
            up: self.up.iter().map(UpBlock::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        let cfg = &self.config;
        if c != cfg.input_channels || (h, w) != cfg.input_dims {
            return Err(Error::Shape(format!(
                "input {c}x{h}x{w} does not match config {}x{}x{}",
                cfg.input_channels, cfg.input_dims.0, cfg.input_dims.1
            )));
        }
        if x.dim().0 == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    /// Encoder half only: the latent tensor after the transformer block.
    pub fn encode(&self, x: &Array4<f64>, mode: Mode) -> Result<Array4<f64>> {
        self.check_input(x)?;
        let (mut t, _) = self.stem.forward(x, mode);
        for block in &self.down {
            t = block.forward(&t, mode).0;
        }
        let (latent, _) = self.transformer.forward(&t, mode);
        finite(&latent, "latent")?;
        Ok(latent)
    }

    pub fn forward(&self, x: &Array4<f64>, mode: Mode) -> Result<Forward> {
        self.check_input(x)?;
        if mode == Mode::Train && x.dim().0 < 2 {
            return Err(Error::InvalidArgument("training batches need at least two samples".into()));
        }
        let mut encoder = Vec::with_capacity(4);
        let (mut t, c) = self.stem.forward(x, mode);
        encoder.push(c);
        for block in &self.down {
            let (y, c) = block.forward(&t, mode);
            encoder.push(c);
            t = y;
        }
        let (latent, transformer) = self.transformer.forward(&t, mode);
        let mut u = latent.clone();
        let mut decoder = Vec::with_capacity(3);
        for block in &self.up {
            let (y, c) = block.forward(&u, mode);
            decoder.push(c);
            u = y;
        }
        let reconstruction = self.head.forward(&u);
        finite(&reconstruction, "reconstruction")?;
        Ok(Forward {
            reconstruction,
            latent,
            encoder,
            transformer_input: t,
            transformer,
            decoder,
            head_input: u,
        })
    }

    /// Parameter gradients given the gradient of the loss with respect to the
    /// reconstruction.
    pub fn backward(&self, f: &Forward, d_recon: &Array4<f64>) -> AutoEncoder {
        let (mut g, head) = self.head.backward(&f.head_input, d_recon);
        let mut up = Vec::with_capacity(self.up.len());
        for (block, cache) in self.up.iter().zip(&f.decoder).rev() {
            let (dx, grads) = block.backward(cache, &g);
            up.push(grads);
            g = dx;
        }
        up.reverse();
        let (mut g, transformer) = self.transformer.backward(&f.transformer_input, &f.transformer, &g);
        let mut down = Vec::with_capacity(self.down.len());
        for (block, cache) in self.down.iter().zip(&f.encoder[1..]).rev() {
            let (dx, grads) = block.backward(cache, &g);
            down.push(grads);
            g = dx;
        }
        down.reverse();
        let (_, stem) = self.stem.backward(&f.encoder[0], &g);
        AutoEncoder { config: self.config.clone(), stem, down, transformer, up, head }
    }

    /// Folds the batch statistics of a training forward pass into the
    /// running averages.
    pub fn commit_batch_stats(&mut self, f: &Forward) {
        self.stem.bn.commit(&f.encoder[0].bn);
        for (block, cache) in self.down.iter_mut().zip(&f.encoder[1..]) {
            block.bn.commit(&cache.bn);
        }
        self.transformer.commit(&f.transformer);
        for (block, cache) in self.up.iter_mut().zip(&f.decoder) {
            block.bn.commit(&cache.bn);
        }
    }

    /// Loss and parameter gradients for one training batch.
    pub fn loss_and_gradients(&self, x: &Array4<f64>) -> Result<(f64, AutoEncoder, Forward)> {
        let f = self.forward(x, Mode::Train)?;
        let loss = ae_loss(x, &f.reconstruction)?;
        let d = ae_loss_grad(x, &f.reconstruction);
        let grads = self.backward(&f, &d);
        let mut bad = None;
        grads.visit("", &mut |path, _, _, v| {
            if bad.is_none() && v.iter().any(|x| !x.is_finite()) {
                bad = Some(path.to_string());
            }
        });
        if let Some(path) = bad {
            return Err(Error::Training(format!("non-finite gradient in {path}")));
        }
        Ok((loss, grads, f))
    }

    /// Learnable values flattened in visiting order.
    pub fn learnable_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, kind, _, v| {
            if kind == ParamKind::Learnable {
                out.extend_from_slice(v);
            }
        });
        out
    }

    pub fn set_learnable_values(&mut self, values: &[f64]) {
        let mut offset = 0;
        self.visit_mut("", &mut |_, kind, _, v| {
            if kind == ParamKind::Learnable {
                v.copy_from_slice(&values[offset..offset + v.len()]);
                offset += v.len();
            }
        });
        assert_eq!(offset, values.len(), "parameter vector length");
    }

    /// `(path, element count)` of each learnable block in visiting order.
    pub fn learnable_blocks(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit("", &mut |path, kind, _, v| {
            if kind == ParamKind::Learnable {
                out.push((path.to_string(), v.len()));
            }
        });
        out
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

impl Parameterized for AutoEncoder {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.stem.conv.visit(&join(prefix, "stem.conv"), f);
        self.stem.bn.visit(&join(prefix, "stem.bn"), f);
        for (i, b) in self.down.iter().enumerate() {
            b.conv.visit(&join(prefix, &format!("down.{i}.conv")), f);
            b.bn.visit(&join(prefix, &format!("down.{i}.bn")), f);
        }
        self.transformer.visit(&join(prefix, "transformer"), f);
        for (i, b) in self.up.iter().enumerate() {
            b.deconv.visit(&join(prefix, &format!("up.{i}.deconv")), f);
            b.bn.visit(&join(prefix, &format!("up.{i}.bn")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.stem.conv.visit_mut(&join(prefix, "stem.conv"), f);
        self.stem.bn.visit_mut(&join(prefix, "stem.bn"), f);
        for (i, b) in self.down.iter_mut().enumerate() {
            b.conv.visit_mut(&join(prefix, &format!("down.{i}.conv")), f);
            b.bn.visit_mut(&join(prefix, &format!("down.{i}.bn")), f);
        }
        self.transformer.visit_mut(&join(prefix, "transformer"), f);
        for (i, b) in self.up.iter_mut().enumerate() {
            b.deconv.visit_mut(&join(prefix, &format!("up.{i}.deconv")), f);
            b.bn.visit_mut(&join(prefix, &format!("up.{i}.bn")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

fn finite(a: &Array4<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Training(format!("non-finite {what}")))
    }
}

/// Mean squared reconstruction error.
pub fn ae_loss(x: &Array4<f64>, x_hat: &Array4<f64>) -> Result<f64> {
    if x.dim() != x_hat.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x.dim(), x_hat.dim())));
    }
    let n = x.len() as f64;
    Ok(Zip::from(x).and(x_hat).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b)) / n)
}

/// `d loss / d x_hat = 2 (x_hat - x) / numel`.
pub fn ae_loss_grad(x: &Array4<f64>, x_hat: &Array4<f64>) -> Array4<f64> {
    let n = x.len() as f64;
    Zip::from(x_hat).and(x).map_collect(|&b, &a| 2.0 * (b - a) / n)
}

/// Stacks inputs into a `(batch, C, H, W)` array.
pub(crate) fn batch_of(stacks: &[&InputStack]) -> Array4<f64> {
    let views: Vec<_> = stacks.iter().map(|s| s.data.view()).collect();
    ndarray::stack(Axis(0), &views).expect("stacks share dims")
}

/// Eval-mode latent pooled to a vector.
pub fn embed(model: &AutoEncoder, s: &InputStack, version: &str) -> Result<Embedding> {
    let x = s.data.clone().insert_axis(Axis(0));
    let latent = model.encode(&x, Mode::Eval)?;
    let latent: Array3<f64> = latent.index_axis_move(Axis(0), 0);
    let vector = match model.config.latent_pool {
        LatentPool::GlobalAverage => latent
            .outer_iter()
            .map(|plane| plane.sum() / plane.len() as f64)
            .collect(),
        LatentPool::Flatten => latent.iter().copied().collect(),
    };
    Ok(Embedding {
        id: s.source_id.clone(),
        vector,
        representation: s.representation,
        encoder: EncoderKind::Autoenc,
        version: version.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Representation;
    use ndarray::Array4;

    fn tiny(c: usize) -> EncoderConfig {
        EncoderConfig {
            widths: [2, 2, 3, 4],
            attention_heads: 2,
            input_channels: c,
            input_dims: (16, 16),
            ..EncoderConfig::desk(c, 5)
        }
    }

    fn random_batch(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = SarRng::new(seed);
        Array4::from_shape_simple_fn(shape, || rng.normal())
    }

    #[test]
    fn shapes_desk_and_large() {
        let m = AutoEncoder::new(EncoderConfig::desk(4, 1)).unwrap();
        let x = random_batch((2, 4, 64, 64), 1);
        let f = m.forward(&x, Mode::Train).unwrap();
        assert_eq!(f.latent.dim(), (2, 32, 8, 8));
        assert_eq!(f.reconstruction.dim(), x.dim());
        assert_eq!(EncoderConfig::large(1, 0).latent_dims(), (128, 16, 16));
        assert_eq!(EncoderConfig::large(1, 0).embedding_dim(), 128);
    }

    #[test]
    fn loss_closed_forms() {
        let z = Array4::<f64>::zeros((1, 1, 2, 2));
        let o = Array4::<f64>::ones((1, 1, 2, 2));
        assert_eq!(ae_loss(&z, &z).unwrap(), 0.0);
        assert_eq!(ae_loss(&z, &o).unwrap(), 1.0);
        let a = random_batch((2, 3, 4, 5), 2);
        let b = random_batch((2, 3, 4, 5), 3);
        let mut brute = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    for l in 0..5 {
                        brute += (a[[i, j, k, l]] - b[[i, j, k, l]]).powi(2);
                    }
                }
            }
        }
        assert!((ae_loss(&a, &b).unwrap() - brute / 120.0).abs() < 1e-14);
        assert!(ae_loss(&a, &z).is_err());
        let g = ae_loss_grad(&a, &b);
        assert!((g[[1, 2, 3, 4]] - 2.0 * (b[[1, 2, 3, 4]] - a[[1, 2, 3, 4]]) / 120.0).abs() < 1e-15);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let m = AutoEncoder::new(tiny(2)).unwrap();
        let x = random_batch((3, 2, 16, 16), 4);
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a.reconstruction, b.reconstruction);
        assert_eq!(a.latent, m.encode(&x, Mode::Eval).unwrap());
    }

    #[test]
    fn rejects_bad_shapes_and_configs() {
        let m = AutoEncoder::new(tiny(2)).unwrap();
        assert!(m.forward(&random_batch((2, 1, 16, 16), 0), Mode::Eval).is_err());
        assert!(m.forward(&random_batch((1, 2, 16, 16), 0), Mode::Train).is_err());
        let mut bad = tiny(1);
        bad.input_dims = (20, 16);
        assert!(AutoEncoder::new(bad).is_err());
        let mut bad = tiny(1);
        bad.attention_heads = 3;
        assert!(AutoEncoder::new(bad).is_err());
    }

    #[test]
    fn gradient_scales_linearly() {
        let m = AutoEncoder::new(tiny(1)).unwrap();
        let x = random_batch((2, 1, 16, 16), 6);
        let f = m.forward(&x, Mode::Train).unwrap();
        let d = ae_loss_grad(&x, &f.reconstruction);
        let g1 = m.backward(&f, &d).learnable_values();
        let g2 = m.backward(&f, &(&d * 2.0)).learnable_values();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    /// Central finite differences on every learnable block.
    #[test]
    fn gradients_match_finite_differences() {
        let mut m = AutoEncoder::new(tiny(2)).unwrap();
        // move batch-norm scales off their defaults so every path is exercised
        let mut rng = SarRng::new(77);
        m.visit_mut("", &mut |path, kind, _, v| {
            if kind == ParamKind::Learnable && (path.ends_with("gamma") || path.ends_with("bias") || path.ends_with("beta")) {
                for x in v.iter_mut() {
                    *x += 0.3 * rng.normal();
                }
            }
        });
        let x = random_batch((2, 2, 16, 16), 8);
        let (_, grads, _) = m.loss_and_gradients(&x).unwrap();
        let analytic = grads.learnable_values();
        let theta = m.learnable_values();
        let h = 1e-5;
        let mut numeric = analytic.clone();
        let mut probe = m.clone();
        let mut t = theta.clone();
        // every third coordinate; the acceptance suite checks all of them
        for i in (0..theta.len()).step_by(3) {
            t[i] = theta[i] + h;
            probe.set_learnable_values(&t);
            let lp = ae_loss(&x, &probe.forward(&x, Mode::Train).unwrap().reconstruction).unwrap();
            t[i] = theta[i] - h;
            probe.set_learnable_values(&t);
            let lm = ae_loss(&x, &probe.forward(&x, Mode::Train).unwrap().reconstruction).unwrap();
            t[i] = theta[i];
            numeric[i] = (lp - lm) / (2.0 * h);
        }
        // blocks whose true gradient vanishes (a shift of the keys leaves the
        // softmax unchanged) are compared against a floor tied to the
        // overall gradient scale
        let floor = 1e-6 * analytic.iter().map(|p| p * p).sum::<f64>().sqrt();
        let mut offset = 0;
        for (path, n) in m.learnable_blocks() {
            let a = &analytic[offset..offset + n];
            let b = &numeric[offset..offset + n];
            offset += n;
            let diff: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let scale = a.iter().map(|p| p * p).sum::<f64>().sqrt().max(b.iter().map(|p| p * p).sum::<f64>().sqrt());
            let rel = diff / scale.max(floor);
            println!("{path:40} {n:5} {rel:.3e}");
            assert!(rel < 1e-4, "{path}: relative error {rel:e}");
        }
    }

    #[test]
    fn embedding_pools_latent() {
        let m = AutoEncoder::new(tiny(1)).unwrap();
        let mut rng = SarRng::new(9);
        let s = InputStack {
            source_id: "q".into(),
            data: Array3::from_shape_simple_fn((1, 16, 16), || rng.normal()),
            representation: Representation::Vig,
            stats: vec![],
        };
        let e = embed(&m, &s, "v").unwrap();
        assert_eq!(e.vector.len(), 4);
        let latent = m.encode(&s.data.clone().insert_axis(Axis(0)), Mode::Eval).unwrap();
        let mean0 = latent.index_axis(Axis(0), 0).index_axis(Axis(0), 0).mean().unwrap();
        assert!((e.vector[0] - mean0).abs() < 1e-12);
        assert_eq!(e, embed(&m, &s, "v").unwrap());
    }
}

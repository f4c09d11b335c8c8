use ndarray::{Array1, Array4, Axis, Zip};

use super::{join, visit_array, visit_array_mut, Mode, ParamKind, Parameterized, Visit, VisitMut};

/// Per-channel batch normalization over `(batch, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    /// Unbiased (n - 1) running variance.
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// What the backward pass and the running-statistics update need.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub xhat: Array4<f64>,
    pub inv_std: Array1<f64>,
    pub batch_mean: Array1<f64>,
    /// Biased batch variance.
    pub batch_var: Array1<f64>,
    pub count: usize,
    pub mode: Mode,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.gamma.len();
        Self {
            gamma: Array1::zeros(c),
            beta: Array1::zeros(c),
            running_mean: Array1::zeros(c),
            running_var: Array1::zeros(c),
            ..*self
        }
    }

    pub fn forward(&self, x: &Array4<f64>, mode: Mode) -> (Array4<f64>, BatchNormCache) {
        let (b, c, h, w) = x.dim();
        let count = b * h * w;
        let (mean, var) = match mode {
            Mode::Train => channel_moments(x),
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = x.clone();
        let mut y = Array4::<f64>::zeros(x.raw_dim());
        for ch in 0..c {
            let (m, s) = (mean[ch], inv_std[ch]);
            let (g, bt) = (self.gamma[ch], self.beta[ch]);
            let mut xh = xhat.index_axis_mut(Axis(1), ch);
            xh.mapv_inplace(|v| (v - m) * s);
            Zip::from(y.index_axis_mut(Axis(1), ch))
                .and(&xh)
                .for_each(|o, &v| *o = g * v + bt);
        }
        let cache = BatchNormCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            count,
            mode,
        };
        (y, cache)
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Array4<f64>) -> (Array4<f64>, BatchNorm2d) {
        let c = self.gamma.len();
        let n = cache.count as f64;
        let mut grads = self.zeros_like();
        let mut dx = Array4::<f64>::zeros(dy.raw_dim());
        for ch in 0..c {
            let dyc = dy.index_axis(Axis(1), ch);
            let xh = cache.xhat.index_axis(Axis(1), ch);
            let sum_dy = dyc.sum();
            let sum_dy_xh: f64 = Zip::from(&dyc).and(&xh).fold(0.0, |acc, &g, &v| acc + g * v);
            grads.beta[ch] = sum_dy;
            grads.gamma[ch] = sum_dy_xh;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            let out = dx.index_axis_mut(Axis(1), ch);
            match cache.mode {
                Mode::Train => {
                    let (mdy, mdyx) = (sum_dy / n, sum_dy_xh / n);
                    Zip::from(out)
                        .and(&dyc)
                        .and(&xh)
                        .for_each(|o, &g, &v| *o = scale * (g - mdy - v * mdyx));
                }
                Mode::Eval => {
                    Zip::from(out).and(&dyc).for_each(|o, &g| *o = scale * g);
                }
            }
        }
        (dx, grads)
    }

    /// Folds a training batch's statistics into the running averages.
    pub fn commit(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let n = cache.count as f64;
        let unbias = if cache.count > 1 { n / (n - 1.0) } else { 1.0 };
        let m = self.momentum;
        Zip::from(&mut self.running_mean)
            .and(&cache.batch_mean)
            .for_each(|r, &b| *r = (1.0 - m) * *r + m * b);
        Zip::from(&mut self.running_var)
            .and(&cache.batch_var)
            .for_each(|r, &b| *r = (1.0 - m) * *r + m * b * unbias);
    }
}

fn channel_moments(x: &Array4<f64>) -> (Array1<f64>, Array1<f64>) {
    let c = x.dim().1;
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    for ch in 0..c {
        let xc = x.index_axis(Axis(1), ch);
        let n = xc.len() as f64;
        let m = xc.sum() / n;
        mean[ch] = m;
        var[ch] = xc.fold(0.0, |acc, &v| acc + (v - m) * (v - m)) / n;
    }
    (mean, var)
}

impl Parameterized for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        visit_array(join(prefix, "gamma"), ParamKind::Learnable, &self.gamma, f);
        visit_array(join(prefix, "beta"), ParamKind::Learnable, &self.beta, f);
        visit_array(join(prefix, "running_mean"), ParamKind::Buffer, &self.running_mean, f);
        visit_array(join(prefix, "running_var"), ParamKind::Buffer, &self.running_var, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        visit_array_mut(join(prefix, "gamma"), ParamKind::Learnable, &mut self.gamma, f);
        visit_array_mut(join(prefix, "beta"), ParamKind::Learnable, &mut self.beta, f);
        visit_array_mut(join(prefix, "running_mean"), ParamKind::Buffer, &mut self.running_mean, f);
        visit_array_mut(join(prefix, "running_var"), ParamKind::Buffer, &mut self.running_var, f);
    }
}

use ndarray::{s, Array2, Array4, ArrayView2, Axis};

use super::{join, BatchNorm2d, BatchNormCache, Conv2d, Mode, Parameterized, Visit, VisitMut};
use crate::rng::SarRng;

/// Convolutional token projection: depthwise `k x k` conv, batch norm,
/// pointwise conv.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvProjection {
    pub depthwise: Conv2d,
    pub bn: BatchNorm2d,
    pub pointwise: Conv2d,
}

#[derive(Clone, Debug)]
pub struct ProjectionCache {
    bn: BatchNormCache,
    bn_out: Array4<f64>,
}

impl ConvProjection {
    pub fn new(d: usize, k: usize, rng: &mut SarRng) -> Self {
        Self {
            depthwise: Conv2d::new(d, d, k, 1, k / 2, d, false, rng),
            bn: BatchNorm2d::new(d),
            pointwise: Conv2d::new(d, d, 1, 1, 0, 1, true, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            depthwise: self.depthwise.zeros_like(),
            bn: self.bn.zeros_like(),
            pointwise: self.pointwise.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Array4<f64>, mode: Mode) -> (Array4<f64>, ProjectionCache) {
        let dw_out = self.depthwise.forward(x);
        let (bn_out, bn) = self.bn.forward(&dw_out, mode);
        let y = self.pointwise.forward(&bn_out);
        (y, ProjectionCache { bn, bn_out })
    }

    pub fn backward(&self, x: &Array4<f64>, cache: &ProjectionCache, dy: &Array4<f64>) -> (Array4<f64>, Self) {
        let (d_bn_out, pointwise) = self.pointwise.backward(&cache.bn_out, dy);
        let (d_dw_out, bn) = self.bn.backward(&cache.bn, &d_bn_out);
        let (dx, depthwise) = self.depthwise.backward(x, &d_dw_out);
        (dx, Self { depthwise, bn, pointwise })
    }

    pub fn commit(&mut self, cache: &ProjectionCache) {
        self.bn.commit(&cache.bn);
    }
}

impl Parameterized for ConvProjection {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.depthwise.visit(&join(prefix, "depthwise"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        self.pointwise.visit(&join(prefix, "pointwise"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.depthwise.visit_mut(&join(prefix, "depthwise"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
        self.pointwise.visit_mut(&join(prefix, "pointwise"), f);
    }
}

/// Row-wise softmax in place.
fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Scaled dot-product attention over the `h w` spatial tokens of
/// `(batch, d, h, w)` inputs, split into `heads` groups of channels.
/// Returns the output and the attention matrices `(batch * heads)` of `N x N`.
pub fn multi_head_attention(
    q: &Array4<f64>,
    k: &Array4<f64>,
    v: &Array4<f64>,
    heads: usize,
) -> (Array4<f64>, Vec<Array2<f64>>) {
    let (b, d, h, w) = q.dim();
    let n = h * w;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array4::<f64>::zeros((b, d, h, w));
    let mut attn = Vec::with_capacity(b * heads);
    for bi in 0..b {
        let qb = tokens(q, bi);
        let kb = tokens(k, bi);
        let vb = tokens(v, bi);
        let mut ob = Array2::<f64>::zeros((d, n));
        for hd in 0..heads {
            let rows = s![hd * dh..(hd + 1) * dh, ..];
            // q^T k: (n x dh) (dh x n)
            let mut a = qb.slice(rows).t().dot(&kb.slice(rows));
            a *= scale;
            softmax_rows(&mut a);
            // o^T = v^T a^T
            ob.slice_mut(rows).assign(&vb.slice(rows).dot(&a.t()));
            attn.push(a);
        }
        out.index_axis_mut(Axis(0), bi)
            .assign(&ob.into_shape_with_order((d, h, w)).unwrap());
    }
    (out, attn)
}

/// Gradients `(dq, dk, dv)` of [`multi_head_attention`].
pub fn multi_head_attention_backward(
    q: &Array4<f64>,
    k: &Array4<f64>,
    v: &Array4<f64>,
    attn: &[Array2<f64>],
    heads: usize,
    dout: &Array4<f64>,
) -> (Array4<f64>, Array4<f64>, Array4<f64>) {
    let (b, d, h, w) = q.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array4::<f64>::zeros(q.raw_dim());
    let mut dk = Array4::<f64>::zeros(k.raw_dim());
    let mut dv = Array4::<f64>::zeros(v.raw_dim());
    for bi in 0..b {
        let qb = tokens(q, bi);
        let kb = tokens(k, bi);
        let vb = tokens(v, bi);
        let gb = tokens(dout, bi);
        let n = h * w;
        let mut dqb = Array2::<f64>::zeros((d, n));
        let mut dkb = Array2::<f64>::zeros((d, n));
        let mut dvb = Array2::<f64>::zeros((d, n));
        for hd in 0..heads {
            let rows = s![hd * dh..(hd + 1) * dh, ..];
            let a = &attn[bi * heads + hd];
            let g = gb.slice(rows);
            // da = dO V^T with dO = g^T, V = v^T
            let da = g.t().dot(&vb.slice(rows));
            dvb.slice_mut(rows).assign(&g.dot(a));
            let mut ds = da;
            for (mut drow, arow) in ds.outer_iter_mut().zip(a.outer_iter()) {
                let dot: f64 = drow.iter().zip(arow.iter()).map(|(x, y)| x * y).sum();
                drow.zip_mut_with(&arow, |dv, &av| *dv = av * (*dv - dot));
            }
            ds *= scale;
            dqb.slice_mut(rows).assign(&kb.slice(rows).dot(&ds.t()));
            dkb.slice_mut(rows).assign(&qb.slice(rows).dot(&ds));
        }
        for (dst, src) in [(&mut dq, dqb), (&mut dk, dkb), (&mut dv, dvb)] {
            dst.index_axis_mut(Axis(0), bi)
                .assign(&src.into_shape_with_order((d, h, w)).unwrap());
        }
    }
    (dq, dk, dv)
}

fn tokens(x: &Array4<f64>, bi: usize) -> ArrayView2<'_, f64> {
    let (_, d, h, w) = x.dim();
    x.index_axis(Axis(0), bi)
        .into_shape_with_order((d, h * w))
        .expect("activations are contiguous")
}

/// Attention block on the bottleneck: conv projections for q, k, v,
/// multi-head attention, batch norm, pointwise projection, optional residual.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock {
    pub q: ConvProjection,
    pub k: ConvProjection,
    pub v: ConvProjection,
    pub norm: BatchNorm2d,
    pub proj: Conv2d,
    pub heads: usize,
    pub residual: bool,
}

#[derive(Clone, Debug)]
pub struct TransformerCache {
    q: (Array4<f64>, ProjectionCache),
    k: (Array4<f64>, ProjectionCache),
    v: (Array4<f64>, ProjectionCache),
    attn: Vec<Array2<f64>>,
    norm: BatchNormCache,
    norm_out: Array4<f64>,
}

impl TransformerBlock {
    pub fn new(d: usize, heads: usize, kernel: usize, residual: bool, rng: &mut SarRng) -> Self {
        assert!(heads > 0 && d % heads == 0, "heads must divide the token width");
        Self {
            q: ConvProjection::new(d, kernel, rng),
            k: ConvProjection::new(d, kernel, rng),
            v: ConvProjection::new(d, kernel, rng),
            norm: BatchNorm2d::new(d),
            proj: Conv2d::new(d, d, 1, 1, 0, 1, true, rng),
            heads,
            residual,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            q: self.q.zeros_like(),
            k: self.k.zeros_like(),
            v: self.v.zeros_like(),
            norm: self.norm.zeros_like(),
            proj: self.proj.zeros_like(),
            ..*self
        }
    }

    pub fn forward(&self, x: &Array4<f64>, mode: Mode) -> (Array4<f64>, TransformerCache) {
        let q = self.q.forward(x, mode);
        let k = self.k.forward(x, mode);
        let v = self.v.forward(x, mode);
        let (o, attn) = multi_head_attention(&q.0, &k.0, &v.0, self.heads);
        let (norm_out, norm) = self.norm.forward(&o, mode);
        let mut y = self.proj.forward(&norm_out);
        if self.residual {
            y += x;
        }
        (y, TransformerCache { q, k, v, attn, norm, norm_out })
    }

    pub fn backward(&self, x: &Array4<f64>, cache: &TransformerCache, dy: &Array4<f64>) -> (Array4<f64>, Self) {
        let (d_norm_out, proj) = self.proj.backward(&cache.norm_out, dy);
        let (d_o, norm) = self.norm.backward(&cache.norm, &d_norm_out);
        let (dq, dk, dv) =
            multi_head_attention_backward(&cache.q.0, &cache.k.0, &cache.v.0, &cache.attn, self.heads, &d_o);
        let (mut dx, q) = self.q.backward(x, &cache.q.1, &dq);
        let (dxk, k) = self.k.backward(x, &cache.k.1, &dk);
        let (dxv, v) = self.v.backward(x, &cache.v.1, &dv);
        dx += &dxk;
        dx += &dxv;
        if self.residual {
            dx += dy;
        }
        let grads = Self {
            q,
            k,
            v,
            norm,
            proj,
            heads: self.heads,
            residual: self.residual,
        };
        (dx, grads)
    }

    pub fn commit(&mut self, cache: &TransformerCache) {
        self.q.commit(&cache.q.1);
        self.k.commit(&cache.k.1);
        self.v.commit(&cache.v.1);
        self.norm.commit(&cache.norm);
    }
}

impl Parameterized for TransformerBlock {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.q.visit(&join(prefix, "q"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.norm.visit(&join(prefix, "norm"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

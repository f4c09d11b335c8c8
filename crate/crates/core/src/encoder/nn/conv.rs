use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView3, Axis, Ix4};
use rayon::prelude::*;

use super::{init_uniform, join, visit_array, visit_array_mut, ParamKind, Parameterized, Visit, VisitMut};
use crate::rng::SarRng;

/// Geometry of a square-kernel convolution applied to an `h x w` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.k) / self.stride + 1
    }
}

/// Unfolds `x` (c, h, w) into a `(c k k) x (ho wo)` patch matrix.
fn im2col(x: ArrayView3<f64>, g: Geometry, ho: usize, wo: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let k = g.k;
    let mut cols = Array2::<f64>::zeros((c * k * k, ho * wo));
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    let dst = cols.as_slice_mut().unwrap();
    for ci in 0..c {
        let plane = &xs[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let out = &mut dst[row * ho * wo..(row + 1) * ho * wo];
                for oi in 0..ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                    let o = &mut out[oi * wo..(oi + 1) * wo];
                    for (oj, v) in o.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < w as isize {
                            *v = src[jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates patches back into a `(c, h, w)` image.
fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize, g: Geometry, ho: usize, wo: usize) -> Array3<f64> {
    let k = g.k;
    let mut img = Array3::<f64>::zeros((c, h, w));
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().unwrap();
    let dst = img.as_slice_mut().unwrap();
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let patch = &src[row * ho * wo..(row + 1) * ho * wo];
                for oi in 0..ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let line = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < w as isize {
                            line[jj as usize] += patch[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
    img
}

fn sum_in_order<T, F: Fn(&mut T, &T)>(mut parts: Vec<T>, add: F) -> T {
    let mut acc = parts.remove(0);
    for p in &parts {
        add(&mut acc, p);
    }
    acc
}

/// Zero-pads each of `c` planes of `h x w` by `p` on every side.
fn pad_planes(x: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; c * hp * wp];
    for ch in 0..c {
        for i in 0..h {
            let src = &x[(ch * h + i) * w..(ch * h + i + 1) * w];
            let at = (ch * hp + i + p) * wp + p;
            out[at..at + w].copy_from_slice(src);
        }
    }
    out
}

/// `dst[j] += sum_t taps[t] * src[j + t]`.
#[inline]
fn row_correlate(taps: &[f64], src: &[f64], dst: &mut [f64]) {
    match taps.len() {
        7 => row_correlate_n::<7>(taps.try_into().unwrap(), src, dst),
        5 => row_correlate_n::<5>(taps.try_into().unwrap(), src, dst),
        3 => row_correlate_n::<3>(taps.try_into().unwrap(), src, dst),
        _ => {
            for (j, d) in dst.iter_mut().enumerate() {
                *d += taps.iter().zip(&src[j..]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}

#[inline]
fn row_correlate_n<const K: usize>(taps: &[f64; K], src: &[f64], dst: &mut [f64]) {
    let n = dst.len();
    assert!(src.len() >= n + K - 1);
    for j in 0..n {
        let mut acc = dst[j];
        for t in 0..K {
            acc += taps[t] * src[j + t];
        }
        dst[j] = acc;
    }
}

/// `acc[t] += sum_j g[j] * src[j + t]` for every tap `t`.
#[inline]
fn row_dots(g: &[f64], src: &[f64], acc: &mut [f64]) {
    match acc.len() {
        7 => row_dots_n::<7>(g, src, acc.try_into().unwrap()),
        5 => row_dots_n::<5>(g, src, acc.try_into().unwrap()),
        3 => row_dots_n::<3>(g, src, acc.try_into().unwrap()),
        k => {
            for (t, a) in acc.iter_mut().enumerate().take(k) {
                *a += dot(g, &src[t..t + g.len()]);
            }
        }
    }
}

#[inline]
fn row_dots_n<const K: usize>(g: &[f64], src: &[f64], acc: &mut [f64; K]) {
    let n = g.len();
    assert!(src.len() >= n + K - 1);
    let mut lanes = [[0.0f64; 2]; K];
    let body = n - n % 2;
    for j in (0..body).step_by(2) {
        for t in 0..K {
            for l in 0..2 {
                lanes[t][l] += g[j + l] * src[j + l + t];
            }
        }
    }
    for t in 0..K {
        let mut s = lanes[t][0] + lanes[t][1];
        for j in body..n {
            s += g[j] * src[j + t];
        }
        acc[t] += s;
    }
}

/// Dot product with four independent partial sums so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// 2-D convolution with square kernels. `groups` is either 1 or equal to the
/// channel count (depthwise, one filter per channel).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `(out, in / groups, k, k)`
    pub weight: Array4<f64>,
    pub bias: Option<Array1<f64>>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
        rng: &mut SarRng,
    ) -> Self {
        assert!(groups == 1 || (groups == in_ch && groups == out_ch), "only dense or depthwise convolutions");
        let per_group = in_ch / groups;
        let fan_in = per_group * k * k;
        let weight = init_uniform(&[out_ch, per_group, k, k], fan_in, rng)
            .into_dimensionality::<Ix4>()
            .unwrap();
        Self {
            weight,
            bias: bias.then(|| Array1::zeros(out_ch)),
            stride,
            pad,
            groups,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array4::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.len())),
            ..self.clone()
        }
    }

    fn geometry(&self) -> Geometry {
        Geometry {
            k: self.weight.dim().2,
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let g = self.geometry();
        (g.out_dim(h), g.out_dim(w))
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let (o, i, k, _) = self.weight.dim();
        self.weight.to_shape((o, i * k * k)).unwrap().to_owned()
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        if self.groups > 1 {
            return self.depthwise_forward(x);
        }
        if self.stride == 1 && self.weight.dim().2 > 1 {
            return self.direct_forward(x);
        }
        let (b, _, h, w) = x.dim();
        let g = self.geometry();
        let (ho, wo) = (g.out_dim(h), g.out_dim(w));
        let cout = self.out_channels();
        let wm = self.weight_matrix();
        let outs: Vec<Array2<f64>> = (0..b)
            .into_par_iter()
            .map(|n| {
                let cols = im2col(x.index_axis(Axis(0), n), g, ho, wo);
                let mut y = wm.dot(&cols);
                if let Some(bias) = &self.bias {
                    for (mut row, bv) in y.outer_iter_mut().zip(bias.iter()) {
                        row += *bv;
                    }
                }
                y
            })
            .collect();
        let mut out = Array4::<f64>::zeros((b, cout, ho, wo));
        for (n, y) in outs.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), n)
                .assign(&y.into_shape_with_order((cout, ho, wo)).unwrap());
        }
        out
    }

    /// Returns `(dx, parameter gradients)` for input `x` and output gradient `dy`.
    pub fn backward(&self, x: &Array4<f64>, dy: &Array4<f64>) -> (Array4<f64>, Conv2d) {
        if self.groups > 1 {
            return self.depthwise_backward(x, dy);
        }
        if self.stride == 1 && self.weight.dim().2 > 1 {
            return self.direct_backward(x, dy);
        }
        let (b, cin, h, w) = x.dim();
        let g = self.geometry();
        let (_, cout, ho, wo) = dy.dim();
        let wm = self.weight_matrix();
        let parts: Vec<(Array3<f64>, Array2<f64>, Array1<f64>)> = (0..b)
            .into_par_iter()
            .map(|n| {
                let cols = im2col(x.index_axis(Axis(0), n), g, ho, wo);
                let dyn_ = dy
                    .index_axis(Axis(0), n)
                    .to_shape((cout, ho * wo))
                    .unwrap()
                    .to_owned();
                let dw = dyn_.dot(&cols.t());
                let db = dyn_.sum_axis(Axis(1));
                let dcols = wm.t().dot(&dyn_);
                (col2im(&dcols, cin, h, w, g, ho, wo), dw, db)
            })
            .collect();
        let mut dx = Array4::<f64>::zeros((b, cin, h, w));
        let mut dw = Array2::<f64>::zeros(wm.raw_dim());
        let mut db = Array1::<f64>::zeros(cout);
        for (n, (dxn, dwn, dbn)) in parts.into_iter().enumerate() {
            dx.index_axis_mut(Axis(0), n).assign(&dxn);
            dw += &dwn;
            db += &dbn;
        }
        let mut grads = self.zeros_like();
        grads.weight = dw.into_shape_with_order(self.weight.raw_dim()).unwrap();
        if grads.bias.is_some() {
            grads.bias = Some(db);
        }
        (dx, grads)
    }

    /// Stride-1 dense convolution on zero-padded planes; each output row
    /// accumulates all horizontal taps in registers.
    fn direct_forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (b, cin, h, w) = x.dim();
        let (cout, _, k, _) = self.weight.dim();
        let (ho, wo) = self.output_dims(h, w);
        let p = self.pad;
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().unwrap();
        let ws = self.weight.as_slice().unwrap();
        let outs: Vec<Vec<f64>> = (0..b)
            .into_par_iter()
            .map(|n| {
                let xp = pad_planes(&xs[n * cin * h * w..(n + 1) * cin * h * w], cin, h, w, p);
                let (hp, wp) = (h + 2 * p, w + 2 * p);
                let mut out = vec![0.0; cout * ho * wo];
                for o in 0..cout {
                    let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
                    if let Some(bias) = &self.bias {
                        plane.fill(bias[o]);
                    }
                    for c in 0..cin {
                        let src = &xp[c * hp * wp..(c + 1) * hp * wp];
                        for ki in 0..k {
                            let taps = &ws[((o * cin + c) * k + ki) * k..][..k];
                            for oi in 0..ho {
                                let row = &src[(oi + ki) * wp..(oi + ki + 1) * wp];
                                row_correlate(taps, row, &mut plane[oi * wo..(oi + 1) * wo]);
                            }
                        }
                    }
                }
                out
            })
            .collect();
        let flat: Vec<f64> = outs.into_iter().flatten().collect();
        Array4::from_shape_vec((b, cout, ho, wo), flat).unwrap()
    }

    fn direct_backward(&self, x: &Array4<f64>, dy: &Array4<f64>) -> (Array4<f64>, Conv2d) {
        let (b, cin, h, w) = x.dim();
        let (cout, _, k, _) = self.weight.dim();
        let (_, _, ho, wo) = dy.dim();
        let p = self.pad;
        // dx is the correlation of dy, padded by k - 1 - p, with the flipped kernel
        let q = k - 1 - p;
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().unwrap();
        let gs = dy.as_standard_layout();
        let gs = gs.as_slice().unwrap();
        let ws = self.weight.as_slice().unwrap();
        let mut flipped = vec![0.0; ws.len()];
        for o in 0..cout {
            for c in 0..cin {
                for ki in 0..k {
                    for kj in 0..k {
                        flipped[((c * cout + o) * k + ki) * k + kj] = ws[((o * cin + c) * k + (k - 1 - ki)) * k + (k - 1 - kj)];
                    }
                }
            }
        }
        let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..b)
            .into_par_iter()
            .map(|n| {
                let xp = pad_planes(&xs[n * cin * h * w..(n + 1) * cin * h * w], cin, h, w, p);
                let (hp, wp) = (h + 2 * p, w + 2 * p);
                let gn = &gs[n * cout * ho * wo..(n + 1) * cout * ho * wo];
                let gp = pad_planes(gn, cout, ho, wo, q);
                let (hq, wq) = (ho + 2 * q, wo + 2 * q);
                let mut dx = vec![0.0; cin * h * w];
                for c in 0..cin {
                    let plane = &mut dx[c * h * w..(c + 1) * h * w];
                    for o in 0..cout {
                        let src = &gp[o * hq * wq..(o + 1) * hq * wq];
                        for ki in 0..k {
                            let taps = &flipped[((c * cout + o) * k + ki) * k..][..k];
                            for i in 0..h {
                                let row = &src[(i + ki) * wq..(i + ki + 1) * wq];
                                row_correlate(taps, row, &mut plane[i * w..(i + 1) * w]);
                            }
                        }
                    }
                }
                let mut dw = vec![0.0; ws.len()];
                let mut db = vec![0.0; cout];
                for o in 0..cout {
                    let g = &gn[o * ho * wo..(o + 1) * ho * wo];
                    db[o] = g.iter().sum();
                    for c in 0..cin {
                        let src = &xp[c * hp * wp..(c + 1) * hp * wp];
                        for ki in 0..k {
                            let acc = &mut dw[((o * cin + c) * k + ki) * k..][..k];
                            for oi in 0..ho {
                                let gr = &g[oi * wo..(oi + 1) * wo];
                                let row = &src[(oi + ki) * wp..(oi + ki + 1) * wp];
                                row_dots(gr, row, acc);
                            }
                        }
                    }
                }
                (dx, dw, db)
            })
            .collect();
        let mut grads = self.zeros_like();
        let gw = grads.weight.as_slice_mut().unwrap();
        let mut db_total = Array1::<f64>::zeros(cout);
        let mut dx_flat = Vec::with_capacity(b * cin * h * w);
        for (dx, dw, db) in parts {
            dx_flat.extend_from_slice(&dx);
            for (a, v) in gw.iter_mut().zip(&dw) {
                *a += v;
            }
            for (a, v) in db_total.iter_mut().zip(&db) {
                *a += v;
            }
        }
        if grads.bias.is_some() {
            grads.bias = Some(db_total);
        }
        (Array4::from_shape_vec((b, cin, h, w), dx_flat).unwrap(), grads)
    }

    fn depthwise_forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        let g = self.geometry();
        let (ho, wo) = (g.out_dim(h), g.out_dim(w));
        let mut out = Array4::<f64>::zeros((b, c, ho, wo));
        for n in 0..b {
            for ch in 0..c {
                let bias = self.bias.as_ref().map_or(0.0, |bb| bb[ch]);
                for oi in 0..ho {
                    for oj in 0..wo {
                        let mut acc = bias;
                        for ki in 0..g.k {
                            let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..g.k {
                                let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                                if jj >= 0 && jj < w as isize {
                                    acc += self.weight[[ch, 0, ki, kj]] * x[[n, ch, ii as usize, jj as usize]];
                                }
                            }
                        }
                        out[[n, ch, oi, oj]] = acc;
                    }
                }
            }
        }
        out
    }

    fn depthwise_backward(&self, x: &Array4<f64>, dy: &Array4<f64>) -> (Array4<f64>, Conv2d) {
        let (b, c, h, w) = x.dim();
        let g = self.geometry();
        let (_, _, ho, wo) = dy.dim();
        let mut dx = Array4::<f64>::zeros(x.raw_dim());
        let mut grads = self.zeros_like();
        for n in 0..b {
            for ch in 0..c {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let gy = dy[[n, ch, oi, oj]];
                        if let Some(bias) = grads.bias.as_mut() {
                            bias[ch] += gy;
                        }
                        for ki in 0..g.k {
                            let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..g.k {
                                let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                                if jj >= 0 && jj < w as isize {
                                    let (iu, ju) = (ii as usize, jj as usize);
                                    grads.weight[[ch, 0, ki, kj]] += gy * x[[n, ch, iu, ju]];
                                    dx[[n, ch, iu, ju]] += gy * self.weight[[ch, 0, ki, kj]];
                                }
                            }
                        }
                    }
                }
            }
        }
        (dx, grads)
    }
}

impl Parameterized for Conv2d {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        visit_array(join(prefix, "weight"), ParamKind::Learnable, &self.weight, f);
        if let Some(b) = &self.bias {
            visit_array(join(prefix, "bias"), ParamKind::Learnable, b, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        visit_array_mut(join(prefix, "weight"), ParamKind::Learnable, &mut self.weight, f);
        if let Some(b) = &mut self.bias {
            visit_array_mut(join(prefix, "bias"), ParamKind::Learnable, b, f);
        }
    }
}

/// Transposed convolution (the input-gradient operator of [`Conv2d`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    /// `(in, out, k, k)`
    pub weight: Array4<f64>,
    pub bias: Option<Array1<f64>>,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        bias: bool,
        rng: &mut SarRng,
    ) -> Self {
        let fan_in = (in_ch * k * k / (stride * stride)).max(1);
        let weight = init_uniform(&[in_ch, out_ch, k, k], fan_in, rng)
            .into_dimensionality::<Ix4>()
            .unwrap();
        Self {
            weight,
            bias: bias.then(|| Array1::zeros(out_ch)),
            stride,
            pad,
            output_pad,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array4::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.len())),
            ..self.clone()
        }
    }

    fn geometry(&self) -> Geometry {
        Geometry {
            k: self.weight.dim().2,
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.weight.dim().2;
        let f = |n: usize| (n - 1) * self.stride + k + self.output_pad - 2 * self.pad;
        (f(h), f(w))
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let (i, o, k, _) = self.weight.dim();
        self.weight.to_shape((i, o * k * k)).unwrap().to_owned()
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (b, cin, h, w) = x.dim();
        let cout = self.weight.dim().1;
        let (ho, wo) = self.output_dims(h, w);
        let g = self.geometry();
        let wm = self.weight_matrix();
        let outs: Vec<Array3<f64>> = (0..b)
            .into_par_iter()
            .map(|n| {
                let xn = x.index_axis(Axis(0), n).to_shape((cin, h * w)).unwrap().to_owned();
                let cols = wm.t().dot(&xn);
                let mut y = col2im(&cols, cout, ho, wo, g, h, w);
                if let Some(bias) = &self.bias {
                    for (mut plane, bv) in y.outer_iter_mut().zip(bias.iter()) {
                        plane += *bv;
                    }
                }
                y
            })
            .collect();
        let mut out = Array4::<f64>::zeros((b, cout, ho, wo));
        for (n, y) in outs.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), n).assign(&y);
        }
        out
    }

    pub fn backward(&self, x: &Array4<f64>, dy: &Array4<f64>) -> (Array4<f64>, ConvTranspose2d) {
        let (b, cin, h, w) = x.dim();
        let g = self.geometry();
        let wm = self.weight_matrix();
        let parts: Vec<(Array2<f64>, Array2<f64>, Array1<f64>)> = (0..b)
            .into_par_iter()
            .map(|n| {
                let dyn_ = dy.index_axis(Axis(0), n);
                let cols = im2col(dyn_, g, h, w);
                let xn = x.index_axis(Axis(0), n).to_shape((cin, h * w)).unwrap().to_owned();
                let dx = wm.dot(&cols);
                let dw = xn.dot(&cols.t());
                let db = dyn_.sum_axis(Axis(2)).sum_axis(Axis(1));
                (dx, dw, db)
            })
            .collect();
        let mut dx = Array4::<f64>::zeros((b, cin, h, w));
        for (n, (dxn, _, _)) in parts.iter().enumerate() {
            dx.slice_mut(s![n, .., .., ..])
                .assign(&dxn.to_shape((cin, h, w)).unwrap());
        }
        let dw = sum_in_order(parts.iter().map(|p| p.1.clone()).collect(), |a, p| *a += p);
        let db = sum_in_order(parts.iter().map(|p| p.2.clone()).collect(), |a, p| *a += p);
        let mut grads = self.zeros_like();
        grads.weight = dw.into_shape_with_order(self.weight.raw_dim()).unwrap();
        if grads.bias.is_some() {
            grads.bias = Some(db);
        }
        (dx, grads)
    }
}

impl Parameterized for ConvTranspose2d {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        visit_array(join(prefix, "weight"), ParamKind::Learnable, &self.weight, f);
        if let Some(b) = &self.bias {
            visit_array(join(prefix, "bias"), ParamKind::Learnable, b, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        visit_array_mut(join(prefix, "weight"), ParamKind::Learnable, &mut self.weight, f);
        if let Some(b) = &mut self.bias {
            visit_array_mut(join(prefix, "bias"), ParamKind::Learnable, b, f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = SarRng::new(seed);
        Array4::from_shape_simple_fn(shape, || rng.normal())
    }

    /// Direct nested-loop convolution.
    fn naive_conv(x: &Array4<f64>, c: &Conv2d) -> Array4<f64> {
        let (b, cin, h, w) = x.dim();
        let (cout, _, k, _) = c.weight.dim();
        let (ho, wo) = c.output_dims(h, w);
        Array4::from_shape_fn((b, cout, ho, wo), |(n, o, i, j)| {
            let mut acc = c.bias.as_ref().map_or(0.0, |bb| bb[o]);
            for ci in 0..cin {
                if c.groups > 1 && ci != o {
                    continue;
                }
                let wi = if c.groups > 1 { 0 } else { ci };
                for ki in 0..k {
                    for kj in 0..k {
                        let ii = (i * c.stride + ki) as isize - c.pad as isize;
                        let jj = (j * c.stride + kj) as isize - c.pad as isize;
                        if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                            acc += c.weight[[o, wi, ki, kj]] * x[[n, ci, ii as usize, jj as usize]];
                        }
                    }
                }
            }
            acc
        })
    }

    fn dot(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn im2col_conv_matches_naive() {
        let mut rng = SarRng::new(1);
        for (k, s, p) in [(7, 1, 3), (3, 2, 1), (1, 1, 0)] {
            let mut c = Conv2d::new(3, 4, k, s, p, 1, true, &mut rng);
            c.bias = Some(Array1::from(vec![0.1, -0.2, 0.3, 0.0]));
            let x = random4((2, 3, 9, 8), 2);
            let fast = c.forward(&x);
            let slow = naive_conv(&x, &c);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direct_backward_matches_im2col() {
        let mut rng = SarRng::new(21);
        let c = Conv2d::new(3, 2, 5, 1, 2, 1, true, &mut rng);
        let x = random4((2, 3, 7, 9), 22);
        let dy = random4((2, 2, 7, 9), 23);
        let (dx, g) = c.direct_backward(&x, &dy);
        let (dx2, g2) = {
            // the im2col path, reached through a 1-strided copy that skips dispatch
            let (b, cin, h, w) = x.dim();
            let geo = c.geometry();
            let wm = c.weight_matrix();
            let mut dxs = Array4::<f64>::zeros((b, cin, h, w));
            let mut dw = Array2::<f64>::zeros(wm.raw_dim());
            for n in 0..b {
                let cols = im2col(x.index_axis(Axis(0), n), geo, 7, 9);
                let d = dy.index_axis(Axis(0), n).to_shape((2, 63)).unwrap().to_owned();
                dw += &d.dot(&cols.t());
                dxs.index_axis_mut(Axis(0), n).assign(&col2im(&wm.t().dot(&d), cin, h, w, geo, 7, 9));
            }
            (dxs, dw.into_shape_with_order(c.weight.raw_dim()).unwrap())
        };
        for (a, b) in dx.iter().zip(dx2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g.weight.iter().zip(g2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let db = g.bias.unwrap();
        assert!((db[1] - dy.index_axis(Axis(1), 1).sum()).abs() < 1e-12);
    }

    #[test]
    fn depthwise_matches_naive() {
        let mut rng = SarRng::new(3);
        let c = Conv2d::new(5, 5, 3, 1, 1, 5, true, &mut rng);
        let x = random4((2, 5, 6, 6), 4);
        for (a, b) in c.forward(&x).iter().zip(naive_conv(&x, &c).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// <conv(x), y> == <x, conv^T(y)> checks that the transposed convolution
    /// and the data gradient are the adjoint of the forward pass.
    #[test]
    fn transpose_is_adjoint_of_conv() {
        let mut rng = SarRng::new(5);
        let conv = Conv2d::new(3, 2, 3, 2, 1, 1, false, &mut rng);
        let mut convt = ConvTranspose2d::new(2, 3, 3, 2, 1, 1, false, &mut rng);
        // conv weight (out=2, in=3) and convT weight (in=2, out=3) share layout
        convt.weight = conv.weight.clone();
        let x = random4((1, 3, 8, 8), 6);
        let y = random4((1, 2, 4, 4), 7);
        let lhs = dot(&conv.forward(&x), &y);
        let up = convt.forward(&y);
        assert_eq!(up.dim(), (1, 3, 8, 8));
        let rhs = dot(&x, &up);
        assert!((lhs - rhs).abs() < 1e-10);
        let (dx, _) = conv.backward(&x, &y);
        for (a, b) in dx.iter().zip(up.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_dims() {
        let mut rng = SarRng::new(0);
        let c = Conv2d::new(1, 1, 3, 2, 1, 1, false, &mut rng);
        assert_eq!(c.output_dims(64, 64), (32, 32));
        let t = ConvTranspose2d::new(1, 1, 3, 2, 1, 1, false, &mut rng);
        assert_eq!(t.output_dims(8, 8), (16, 16));
    }
}

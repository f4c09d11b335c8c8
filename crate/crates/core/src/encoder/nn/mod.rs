//! Minimal layer library with explicit backward passes.
//!
//! Activations are `(batch, channels, height, width)` arrays in standard
//! layout. Every layer exposes a pure `forward` that returns its output plus
//! whatever the backward pass needs, and a `backward` that returns the input
//! gradient together with a parameter-gradient value of the layer's own type.

mod attention;
mod conv;
mod norm;

pub use attention::{
    multi_head_attention, multi_head_attention_backward, ConvProjection, ProjectionCache, TransformerBlock,
    TransformerCache,
};
pub use conv::{Conv2d, ConvTranspose2d};
pub use norm::{BatchNorm2d, BatchNormCache};

use ndarray::{Array4, ArrayD};

/// Whether batch-norm layers use batch statistics or their running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Learnable,
    /// Running statistics: saved with the model but not optimized.
    Buffer,
}

/// Visitor callbacks receive `(path, kind, shape, values)`.
pub type Visit<'a> = dyn FnMut(&str, ParamKind, &[usize], &[f64]) + 'a;
pub type VisitMut<'a> = dyn FnMut(&str, ParamKind, &[usize], &mut [f64]) + 'a;

/// Anything that owns named parameter arrays.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>);
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_array<D: ndarray::Dimension>(
    path: String,
    kind: ParamKind,
    a: &ndarray::Array<f64, D>,
    f: &mut Visit<'_>,
) {
    let slice = a.as_slice().expect("parameters are kept in standard layout");
    f(&path, kind, a.shape(), slice);
}

pub(crate) fn visit_array_mut<D: ndarray::Dimension>(
    path: String,
    kind: ParamKind,
    a: &mut ndarray::Array<f64, D>,
    f: &mut VisitMut<'_>,
) {
    let shape = a.shape().to_vec();
    let slice = a.as_slice_mut().expect("parameters are kept in standard layout");
    f(&path, kind, &shape, slice);
}

pub fn relu(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
    ndarray::Zip::from(y)
        .and(dy)
        .map_collect(|&o, &g| if o > 0.0 { g } else { 0.0 })
}

/// Fan-in scaled uniform initialization, bound `sqrt(6 / fan_in)`.
pub(crate) fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut crate::rng::SarRng) -> ArrayD<f64> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    ArrayD::from_shape_simple_fn(ndarray::IxDyn(shape), || rng.uniform_range(-bound, bound))
}

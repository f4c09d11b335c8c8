//! SAR ocean-vignette processing and query-by-example retrieval.
//!
//! The crate covers the whole chain from single-look-complex vignettes to
//! ranked retrieval results:
//!
//! * [`vignette`], [`sarv`], [`synth`]: data model, binary format and a seeded
//!   synthetic generator for the ten phenomenon classes
//! * [`preprocess`]: subaperture decomposition and decimation
//! * [`doppler`]: lag-one Doppler centroid estimation
//! * [`encoder`]: input stacks, a fixed baseline descriptor and a
//!   convolutional-transformer auto-encoder trained on reconstruction error
//! * [`retrieval`]: cosine-similarity index with a persistent binary format
//! * [`eval`]: precision at k, McNemar's test and the experiment harness

pub mod doppler;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod preprocess;
pub mod retrieval;
pub mod rng;
pub mod sarv;
pub mod synth;
pub mod vignette;

pub use error::{Error, Result};
pub use vignette::{inject_doppler_ramp, ClassLabel, ComplexVignette, VignetteHeader, VignetteMeta};

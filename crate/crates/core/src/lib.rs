//! Automatic natural-language explanations for neurons of vision
//! classifiers, and unit-ablation importance analysis.
//!
//! The pipeline for one neuron:
//!
//! 1. [`patches`]: pick the top-K activating images, sweep an occluder over
//!    each, turn the activation discrepancies into a receptive field and
//!    mask the image down to the activated patch.
//! 2. [`vocab`]: build a concept vocabulary by prompting a language model
//!    once per class name.
//! 3. [`matcher`]: score every concept by its mean similarity to the
//!    patches under a vision-language embedder and rank them.
//!
//! [`ablation`] measures per-category accuracy drops when a unit is zeroed,
//! and [`testbed`] provides planted-detector models, synthetic corpora and a
//! mock embedder with known ground truth.

pub mod ablation;
pub mod data;
mod error;
pub mod fsutil;
pub mod matcher;
pub mod model;
pub mod patches;
pub mod testbed;
pub mod vocab;

pub use data::{Cache, CacheKey, Corpus, Image};
pub use error::{Error, Result};
pub use model::{ActivationRecord, LayerId, LayerKind, ModelHandle, NeuronKey, NeuronRef};

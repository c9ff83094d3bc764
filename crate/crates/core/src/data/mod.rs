//! Image corpora and the content-addressed result cache.

mod cache;
mod corpus;
mod image;

pub use cache::{Cache, CacheEntry, CacheKey};
pub use corpus::{Corpus, CorpusEntry, ManifestLine, ManifestRecord};
pub use image::{array_to_rgb, encode_png, resize, Image};

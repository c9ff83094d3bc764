//! Planted-detector models, synthetic corpora, a table-driven embedder and
//! brute-force oracles with known ground truth.

mod mock;
mod oracle;
mod planted;

pub use mock::{mock_embedder, MockEmbedder};
pub use oracle::brute_force_discrepancy;
pub use planted::{
    color_concept, make_planted_model, make_synthetic_corpus, synthetic_images, GroundTruth, PlantedSpec,
    PlantedUnit, Region, Trigger, BACKGROUND_CLASS, PALETTE,
};

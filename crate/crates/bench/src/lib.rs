//! Shared fixtures for the pipeline benchmarks.

use neuron_explain::testbed::{make_planted_model, synthetic_images, PlantedSpec};
use neuron_explain::{Image, ModelHandle};

/// Planted model and noisy corpus of the given image side.
pub fn fixture(side: usize, n_per_class: usize) -> (ModelHandle, Vec<Image>, PlantedSpec) {
    let spec = PlantedSpec {
        image_size: (side, side),
        noise_level: 0.3,
        seed: 1,
        ..Default::default()
    };
    let (model, _) = make_planted_model(&spec).expect("valid spec");
    let (images, _) = synthetic_images(&spec, n_per_class).expect("valid spec");
    (model, images, spec)
}

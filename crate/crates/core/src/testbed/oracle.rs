use crate::data::Image;
use crate::error::Result;
use crate::model::{Aggregator, ModelHandle, NeuronRef, UnitMap};
use crate::patches::{DiscrepancyMap, OcclusionGrid};

fn fold(map: &UnitMap, aggregator: Aggregator) -> f64 {
    let values: Vec<f64> = match map {
        UnitMap::Spatial(a) => a.iter().copied().collect(),
        UnitMap::Tokens(a) => a.iter().copied().collect(),
    };
    match aggregator {
        Aggregator::Max => {
            let mut best = f64::NEG_INFINITY;
            for v in values {
                if v > best {
                    best = v;
                }
            }
            best
        }
        Aggregator::Mean => {
            let mut sum = 0.0;
            for v in &values {
                sum += v;
            }
            sum / values.len() as f64
        }
    }
}

/// Position-by-position discrepancy computation with no batching, caching
/// or parallelism. Test use only.
pub fn brute_force_discrepancy(
    model: &ModelHandle,
    neuron: &NeuronRef,
    image: &Image,
    grid: &OcclusionGrid,
) -> Result<DiscrepancyMap> {
    let aggregator = model.spec().aggregator;
    let original = fold(&model.unit_map(image, neuron)?, aggregator);
    let mut scores = Vec::new();
    for &(r, c) in &grid.positions {
        let mut occluded = image.clone();
        for y in 0..image.height() {
            for x in 0..image.width() {
                if y >= r && y < r + grid.size && x >= c && x < c + grid.size {
                    for ch in 0..image.channels() {
                        occluded.pixels[[y, x, ch]] = grid.fill_value[ch];
                    }
                }
            }
        }
        let a = fold(&model.unit_map(&occluded, neuron)?, aggregator);
        scores.push((a - original).abs());
    }
    Ok(DiscrepancyMap {
        neuron: neuron.key(),
        image_id: image.id.clone(),
        original,
        scores,
        grid: grid.clone(),
    })
}

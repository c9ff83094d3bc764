use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::occlusion::DiscrepancyMap;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::model::NeuronKey;

/// Occlusion windows averaged with discrepancy-score weights:
/// `field[p] = Σ_m score[m] · [p ∈ window_m] / M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceptiveField {
    pub neuron: NeuronKey,
    pub image_id: String,
    pub field: Array2<f64>,
}

pub fn synthesize_receptive_field(dmap: &DiscrepancyMap) -> ReceptiveField {
    let grid = &dmap.grid;
    let mut field = Array2::<f64>::zeros((grid.height, grid.width));
    for (&(r, c), &score) in grid.positions.iter().zip(&dmap.scores) {
        if score == 0.0 {
            continue;
        }
        field
            .slice_mut(ndarray::s![r..r + grid.size, c..c + grid.size])
            .mapv_inplace(|v| v + score);
    }
    let m = grid.len() as f64;
    field.mapv_inplace(|v| v / m);
    ReceptiveField {
        neuron: dmap.neuron.clone(),
        image_id: dmap.image_id.clone(),
        field,
    }
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let v = sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo]);
    v.min(sorted[hi])
}

/// Binary activation mask derived from a receptive field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMask {
    pub mask: Array2<bool>,
    pub threshold_percentile: f64,
    pub threshold: f64,
    /// Set when the field was constant and the whole image was kept.
    pub degenerate: bool,
}

impl ActivationMask {
    pub fn pixel_count(&self) -> usize {
        self.mask.iter().filter(|v| **v).count()
    }

    pub fn fraction(&self) -> f64 {
        self.pixel_count() as f64 / self.mask.len() as f64
    }

    pub fn all(height: usize, width: usize) -> Self {
        ActivationMask {
            mask: Array2::from_elem((height, width), true),
            threshold_percentile: 0.0,
            threshold: f64::NEG_INFINITY,
            degenerate: false,
        }
    }

    /// Intersection over union with a rectangle `(row, col, height, width)`.
    pub fn iou_with_rect(&self, rect: (usize, usize, usize, usize)) -> f64 {
        let (r0, c0, h, w) = rect;
        let inside = |y: usize, x: usize| y >= r0 && y < r0 + h && x >= c0 && x < c0 + w;
        let mut inter = 0usize;
        let mut union = 0usize;
        for ((y, x), &m) in self.mask.indexed_iter() {
            let t = inside(y, x);
            inter += (m && t) as usize;
            union += (m || t) as usize;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Keeps pixels whose field value reaches the given percentile. A constant
/// field keeps the whole image and sets `degenerate`.
pub fn binarize_mask(field: &ReceptiveField, threshold_percentile: f64) -> Result<ActivationMask> {
    if !(threshold_percentile > 0.0 && threshold_percentile < 100.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold percentile must be in (0, 100), got {threshold_percentile}"
        )));
    }
    let values: Vec<f64> = field.field.iter().copied().collect();
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if min == max {
        let (h, w) = field.field.dim();
        return Ok(ActivationMask {
            degenerate: true,
            threshold_percentile,
            threshold: max,
            ..ActivationMask::all(h, w)
        });
    }
    let threshold = percentile(&values, threshold_percentile);
    Ok(ActivationMask {
        mask: field.field.mapv(|v| v >= threshold),
        threshold_percentile,
        threshold,
        degenerate: false,
    })
}

fn check_mask_shape(image: &Image, mask: (usize, usize)) -> Result<()> {
    if (image.height(), image.width()) != mask {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} mask", image.height(), image.width()),
            actual: format!("{}x{}", mask.0, mask.1),
        });
    }
    Ok(())
}

/// `x ⊙ m`: pixels outside the mask are replaced by `background`.
pub fn apply_mask(image: &Image, mask: &ActivationMask, background: f64) -> Result<Array3<f64>> {
    check_mask_shape(image, mask.mask.dim())?;
    Ok(Array3::from_shape_fn(image.pixels.dim(), |(y, x, c)| {
        if mask.mask[[y, x]] {
            image.pixels[[y, x, c]]
        } else {
            background
        }
    }))
}

/// Soft variant: blends towards `background` with weight `field / max(field)`.
pub fn apply_soft_mask(image: &Image, field: &ReceptiveField, background: f64) -> Result<Array3<f64>> {
    check_mask_shape(image, field.field.dim())?;
    let max = field.field.iter().copied().fold(0.0, f64::max);
    Ok(Array3::from_shape_fn(image.pixels.dim(), |(y, x, c)| {
        let w = if max > 0.0 { field.field[[y, x]] / max } else { 1.0 };
        w * image.pixels[[y, x, c]] + (1.0 - w) * background
    }))
}

/// Crops `pixels` to the bounding box of the mask.
pub fn crop_to_mask(pixels: &Array3<f64>, mask: &ActivationMask) -> Array3<f64> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for ((y, x), &m) in mask.mask.indexed_iter() {
        if m {
            bounds = Some(match bounds {
                None => (y, y, x, x),
                Some((y0, y1, x0, x1)) => (y0.min(y), y1.max(y), x0.min(x), x1.max(x)),
            });
        }
    }
    match bounds {
        Some((y0, y1, x0, x1)) => pixels.slice(ndarray::s![y0..=y1, x0..=x1, ..]).to_owned(),
        None => pixels.clone(),
    }
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::model::{ModelHandle, NeuronKey, NeuronRef};

/// What an occluded window is painted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Fill {
    Gray,
    #[default]
    MeanPixel,
    Zero,
}

/// Square occluder positions swept over an `height × width` image.
///
/// Anchors along each axis are `0, stride, 2·stride, …`, with the last one
/// clamped to `side − size` so every window lies inside the image and every
/// pixel is covered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionGrid {
    pub height: usize,
    pub width: usize,
    pub size: usize,
    pub stride: usize,
    pub fill: Fill,
    /// Per-channel value painted into the window.
    pub fill_value: Vec<f64>,
    pub positions: Vec<(usize, usize)>,
}

fn anchors(side: usize, size: usize, stride: usize) -> Vec<usize> {
    let span = side - size;
    let count = span.div_ceil(stride) + 1;
    (0..count).map(|i| (i * stride).min(span)).collect()
}

impl OcclusionGrid {
    /// A grid with gray fill; see [`OcclusionGrid::with_fill`].
    pub fn new(height: usize, width: usize, size: usize, stride: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("occluder size must be at least 1".into()));
        }
        if size > height.min(width) {
            return Err(Error::InvalidParameter(format!(
                "occluder larger than image: {size} > min({height}, {width})"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be at least 1".into()));
        }
        if stride > size {
            return Err(Error::InvalidParameter(format!(
                "stride {stride} exceeds occluder size {size}; windows would leave gaps"
            )));
        }
        let rows = anchors(height, size, stride);
        let cols = anchors(width, size, stride);
        let positions = rows
            .iter()
            .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
            .collect();
        Ok(OcclusionGrid {
            height,
            width,
            size,
            stride,
            fill: Fill::Gray,
            fill_value: vec![0.5; 3],
            positions,
        })
    }

    pub fn with_fill(mut self, fill: Fill, value: Vec<f64>) -> Self {
        self.fill = fill;
        self.fill_value = value;
        self
    }

    /// Resolves `fill` against the dataset mean pixel for `channels` channels.
    pub fn resolve_fill(mut self, fill: Fill, mean_pixel: &[f64], channels: usize) -> Self {
        self.fill = fill;
        self.fill_value = match fill {
            Fill::Gray => vec![0.5; channels],
            Fill::Zero => vec![0.0; channels],
            Fill::MeanPixel => (0..channels)
                .map(|c| mean_pixel.get(c).copied().unwrap_or(0.5))
                .collect(),
        };
        self
    }

    /// Number of positions `M`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn covers(&self, m: usize, row: usize, col: usize) -> bool {
        let (r, c) = self.positions[m];
        row >= r && row < r + self.size && col >= c && col < c + self.size
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if (image.height(), image.width()) != (self.height, self.width) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} image for this grid", self.height, self.width),
                actual: format!("{}x{}", image.height(), image.width()),
            });
        }
        Ok(())
    }

    /// Copy of `image` with window `m` painted over.
    pub fn occlude(&self, image: &Image, m: usize) -> Image {
        let (r, c) = self.positions[m];
        let mut pixels = image.pixels.clone();
        let channels = pixels.dim().2;
        for y in r..r + self.size {
            for x in c..c + self.size {
                for ch in 0..channels {
                    pixels[[y, x, ch]] = self.fill_value.get(ch).copied().unwrap_or(0.5);
                }
            }
        }
        Image {
            id: format!("{}#occ{m}", image.id),
            pixels,
            label: image.label,
        }
    }
}

/// The `M` occluded copies of `image`; the original is untouched.
pub fn generate_occlusions(image: &Image, grid: &OcclusionGrid) -> Result<Vec<Image>> {
    grid.check_image(image)?;
    Ok((0..grid.len()).map(|m| grid.occlude(image, m)).collect())
}

/// Per-position `|a(occluded) − a(original)|` for one neuron and image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyMap {
    pub neuron: NeuronKey,
    pub image_id: String,
    /// Activation on the unoccluded image.
    pub original: f64,
    pub scores: Vec<f64>,
    pub grid: OcclusionGrid,
}

pub fn discrepancy_scores(
    model: &ModelHandle,
    neuron: &NeuronRef,
    image: &Image,
    grid: &OcclusionGrid,
) -> Result<DiscrepancyMap> {
    grid.check_image(image)?;
    let original = model.neuron_activation(image, neuron)?.scalar;
    let scores = (0..grid.len())
        .into_par_iter()
        .map(|m| {
            let occluded = grid.occlude(image, m);
            Ok((model.neuron_activation(&occluded, neuron)?.scalar - original).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DiscrepancyMap {
        neuron: neuron.key(),
        image_id: image.id.clone(),
        original,
        scores,
        grid: grid.clone(),
    })
}

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{apply_mask, apply_soft_mask, binarize_mask, synthesize_receptive_field, ActivationMask};
use super::occlusion::{discrepancy_scores, DiscrepancyMap, Fill, OcclusionGrid};
use crate::data::{encode_png, Cache, CacheKey, Corpus, Image};
use crate::error::{Error, Result};
use crate::fsutil::{file_safe, read_json, write_atomic, write_json};
use crate::model::{LayerId, ModelHandle, NeuronKey, NeuronRef};

fn default_k() -> usize {
    10
}
fn default_stride() -> usize {
    3
}
fn default_percentile() -> f64 {
    95.0
}
fn default_background() -> f64 {
    0.5
}

/// Parameters of the activated-patch chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchParams {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Side of the square occluder; `None` scales 11 px per 224 px of the
    /// shorter image side (never below the stride).
    #[serde(default)]
    pub occluder_size: Option<usize>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default)]
    pub fill: Fill,
    /// Gray level painted outside the mask.
    #[serde(default = "default_background")]
    pub background: f64,
    #[serde(default)]
    pub soft_mask: bool,
}

impl Default for PatchParams {
    fn default() -> Self {
        PatchParams {
            k: default_k(),
            occluder_size: None,
            stride: default_stride(),
            percentile: default_percentile(),
            fill: Fill::default(),
            background: default_background(),
            soft_mask: false,
        }
    }
}

impl PatchParams {
    pub fn occluder_for(&self, height: usize, width: usize) -> usize {
        self.occluder_size.unwrap_or_else(|| {
            let scaled = (11.0 * height.min(width) as f64 / 224.0).round() as usize;
            scaled.max(self.stride).max(1)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::InvalidParameter("percentile must be in (0, 100)".into()));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::InvalidParameter("background must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Row indices of the `k` highest activations of `unit`, descending, ties
/// broken by ascending image id. Asking for more than the corpus holds
/// returns everything with a warning.
pub fn select_top_images(
    activations: ArrayView2<'_, f64>,
    ids: &[String],
    unit: usize,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    if unit >= activations.ncols() || ids.len() != activations.nrows() {
        return Err(Error::InvalidParameter(format!(
            "activation matrix {:?} does not match unit {unit} / {} ids",
            activations.dim(),
            ids.len()
        )));
    }
    let n = activations.nrows();
    if k > n {
        log::warn!("K = {k} exceeds corpus size {n}; using the full corpus");
    }
    let column = activations.column(unit);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| column[b].total_cmp(&column[a]).then_with(|| ids[a].cmp(&ids[b])));
    order.truncate(k.min(n));
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub image_id: String,
    pub activation: f64,
    pub pixels: Array3<f64>,
    pub mask: ActivationMask,
}

/// The activated patches of one neuron, sorted by activation descending.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub neuron: NeuronKey,
    pub k: usize,
    pub params: PatchParams,
    pub model_hash: String,
    pub patches: Vec<Patch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub image_id: String,
    pub activation: f64,
    pub mask_pixels: usize,
    pub mask_fraction: f64,
    pub threshold: f64,
    pub degenerate: bool,
}

/// `meta.json` of a stored patch set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSetMeta {
    pub neuron: NeuronKey,
    pub k: usize,
    pub model_hash: String,
    pub params: PatchParams,
    pub patches: Vec<PatchMeta>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn meta(&self) -> PatchSetMeta {
        PatchSetMeta {
            neuron: self.neuron.clone(),
            k: self.k,
            model_hash: self.model_hash.clone(),
            params: self.params.clone(),
            patches: self
                .patches
                .iter()
                .map(|p| PatchMeta {
                    image_id: p.image_id.clone(),
                    activation: p.activation,
                    mask_pixels: p.mask.pixel_count(),
                    mask_fraction: p.mask.fraction(),
                    threshold: p.mask.threshold,
                    degenerate: p.mask.degenerate,
                })
                .collect(),
        }
    }

    /// Conventional location: `<root>/patches/<model>/<layer>/<unit>`.
    pub fn dir_for(root: &Path, model: &str, neuron: &NeuronKey) -> std::path::PathBuf {
        root.join("patches")
            .join(file_safe(model))
            .join(file_safe(&neuron.layer))
            .join(neuron.unit.to_string())
    }

    /// Writes `meta.json`, `<id>_patch.png` and `<id>_mask.png` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for p in &self.patches {
            let stem = file_safe(&p.image_id);
            write_atomic(&dir.join(format!("{stem}_patch.png")), &encode_png(&p.pixels)?)?;
            let mask = p.mask.mask.mapv(|m| if m { 1.0 } else { 0.0 });
            let mask = mask.insert_axis(ndarray::Axis(2));
            write_atomic(&dir.join(format!("{stem}_mask.png")), &encode_png(&mask)?)?;
        }
        write_json(&dir.join("meta.json"), &self.meta())
    }

    pub fn read_meta(dir: &Path) -> Result<PatchSetMeta> {
        read_json(&dir.join("meta.json"))
    }

    pub fn patch_png_path(dir: &Path, image_id: &str) -> std::path::PathBuf {
        dir.join(format!("{}_patch.png", file_safe(image_id)))
    }
}

/// Corpus-level inputs shared by every neuron of one layer.
#[derive(Debug, Clone)]
pub struct PatchContext {
    pub layer: LayerId,
    pub ids: Vec<String>,
    pub activations: Array2<f64>,
    pub mean_pixel: Vec<f64>,
    corpus_id: String,
}

/// Activations of every unit of `layer` over the corpus, through the cache.
pub fn layer_activations(
    model: &ModelHandle,
    corpus: &Corpus,
    layer: &LayerId,
    cache: &Cache,
) -> Result<Array2<f64>> {
    let key = CacheKey::new(
        model.content_hash(),
        "activations",
        serde_json::json!({ "layer": layer.name }),
        vec![corpus.content_id()],
    );
    if let Some(m) = cache.fetch_json::<Array2<f64>>(&key) {
        if m.dim() == (corpus.len(), layer.unit_count) {
            return Ok(m);
        }
    }
    let images = corpus.load_all()?;
    let m = model.batch_activations(&images, layer)?;
    cache.put_json(&key, &m)?;
    Ok(m)
}

/// Dataset mean pixel, through the cache.
pub fn corpus_mean_pixel(corpus: &Corpus, cache: &Cache) -> Result<Vec<f64>> {
    let key = CacheKey::new("corpus", "mean-pixel", serde_json::Value::Null, vec![corpus.content_id()]);
    if let Some(m) = cache.fetch_json::<Vec<f64>>(&key) {
        return Ok(m);
    }
    let m = corpus.mean_pixel()?;
    cache.put_json(&key, &m)?;
    Ok(m)
}

impl PatchContext {
    pub fn prepare(model: &ModelHandle, corpus: &Corpus, layer: &LayerId, params: &PatchParams, cache: &Cache) -> Result<Self> {
        let activations = layer_activations(model, corpus, layer, cache)?;
        let mean_pixel = if params.fill == Fill::MeanPixel {
            corpus_mean_pixel(corpus, cache)?
        } else {
            Vec::new()
        };
        Ok(PatchContext {
            layer: layer.clone(),
            ids: corpus.ids(),
            activations,
            mean_pixel,
            corpus_id: corpus.content_id(),
        })
    }
}

/// Full chain for one image: occlusion sweep, receptive field, mask, patch.
pub fn patch_for_image(
    model: &ModelHandle,
    neuron: &NeuronRef,
    image: &Image,
    grid: &OcclusionGrid,
    params: &PatchParams,
    cache: &Cache,
    corpus_id: &str,
) -> Result<Patch> {
    let key = CacheKey::new(
        model.content_hash(),
        "discrepancy",
        serde_json::json!({ "grid": grid }),
        vec![corpus_id.to_string(), image.id.clone(), neuron.layer.name.clone(), neuron.unit.to_string()],
    );
    let dmap = match cache.fetch_json::<DiscrepancyMap>(&key) {
        Some(d) if d.grid == *grid => d,
        _ => {
            let d = discrepancy_scores(model, neuron, image, grid)?;
            cache.put_json(&key, &d)?;
            d
        }
    };
    let field = synthesize_receptive_field(&dmap);
    let mask = binarize_mask(&field, params.percentile)?;
    let pixels = if params.soft_mask {
        apply_soft_mask(image, &field, params.background)?
    } else {
        apply_mask(image, &mask, params.background)?
    };
    Ok(Patch {
        image_id: image.id.clone(),
        activation: dmap.original,
        pixels,
        mask,
    })
}

/// Activated patches for `neuron`: top-K images by activation, each masked
/// down to the region whose occlusion changes the activation most.
pub fn extract_patches(
    model: &ModelHandle,
    neuron: &NeuronRef,
    corpus: &Corpus,
    params: &PatchParams,
    cache: &Cache,
) -> Result<PatchSet> {
    let ctx = PatchContext::prepare(model, corpus, &neuron.layer, params, cache)?;
    extract_patches_in(&ctx, model, neuron, corpus, params, cache)
}

pub fn extract_patches_in(
    ctx: &PatchContext,
    model: &ModelHandle,
    neuron: &NeuronRef,
    corpus: &Corpus,
    params: &PatchParams,
    cache: &Cache,
) -> Result<PatchSet> {
    params.validate()?;
    if ctx.layer != neuron.layer {
        return Err(Error::InvalidParameter(format!(
            "patch context is for layer {}, neuron is in {}",
            ctx.layer.name, neuron.layer.name
        )));
    }
    let top = select_top_images(ctx.activations.view(), &ctx.ids, neuron.unit, params.k)?;
    let results: Vec<Result<Patch>> = top
        .par_iter()
        .map(|&idx| {
            let image = corpus.image(idx)?;
            let size = params.occluder_for(image.height(), image.width());
            let grid = OcclusionGrid::new(image.height(), image.width(), size, params.stride)?
                .resolve_fill(params.fill, &ctx.mean_pixel, image.channels());
            patch_for_image(model, neuron, &image, &grid, params, cache, &ctx.corpus_id)
        })
        .collect();
    let mut patches = Vec::with_capacity(results.len());
    let mut first_err = None;
    for (r, &idx) in results.into_iter().zip(&top) {
        match r {
            Ok(p) => patches.push(p),
            Err(e) => {
                log::warn!("skipping image {:?} for neuron {neuron}: {e}", ctx.ids[idx]);
                first_err.get_or_insert(e);
            }
        }
    }
    if patches.is_empty() {
        return Err(first_err.unwrap_or(Error::EmptyPatchSet));
    }
    patches.sort_by(|a, b| b.activation.total_cmp(&a.activation).then_with(|| a.image_id.cmp(&b.image_id)));
    Ok(PatchSet {
        neuron: neuron.key(),
        k: params.k,
        params: params.clone(),
        model_hash: model.content_hash(),
        patches,
    })
}

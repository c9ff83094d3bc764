//! Activated image patches: top-K activating images, occlusion sweeps,
//! discrepancy scores, receptive fields, masks and masked patches.

mod extract;
mod field;
mod occlusion;

pub use extract::{
    corpus_mean_pixel, extract_patches, extract_patches_in, layer_activations, patch_for_image,
    select_top_images, Patch, PatchContext, PatchMeta, PatchParams, PatchSet, PatchSetMeta,
};
pub use field::{
    apply_mask, apply_soft_mask, binarize_mask, crop_to_mask, percentile, synthesize_receptive_field,
    ActivationMask, ReceptiveField,
};
pub use occlusion::{discrepancy_scores, generate_occlusions, DiscrepancyMap, Fill, OcclusionGrid};

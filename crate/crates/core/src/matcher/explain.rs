use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embedder::{cosine, embed_image, embed_text, Embedder};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::NeuronKey;
use crate::patches::{crop_to_mask, Patch, PatchSet};
use crate::vocab::{normalize_key, Vocabulary};

/// How a patch is presented to the embedder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchRender {
    /// Full frame, pixels outside the mask filled with the background.
    #[default]
    GrayFill,
    /// Bounding box of the mask.
    Crop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    pub top_m: usize,
    pub embedder_id: String,
    /// Template with a `{}` placeholder, e.g. `"a photo of {}"`.
    pub prompt_wrapper: Option<String>,
    pub render: PatchRender,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            top_m: 5,
            embedder_id: String::new(),
            prompt_wrapper: None,
            render: PatchRender::GrayFill,
        }
    }
}

impl MatchParams {
    pub fn wrap(&self, text: &str) -> String {
        match &self.prompt_wrapper {
            Some(w) if w.contains("{}") => w.replacen("{}", text, 1),
            Some(w) => format!("{w} {text}"),
            None => text.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptScore {
    pub text: String,
    pub score: f64,
    pub per_patch_scores: Vec<f64>,
}

impl ConceptScore {
    /// Mean of the per-patch similarities.
    pub fn from_scores(text: impl Into<String>, per_patch_scores: Vec<f64>) -> Result<Self> {
        if per_patch_scores.is_empty() {
            return Err(Error::EmptyPatchSet);
        }
        let score = per_patch_scores.iter().sum::<f64>() / per_patch_scores.len() as f64;
        Ok(ConceptScore { text: text.into(), score, per_patch_scores })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub neuron: NeuronKey,
    pub model_hash: String,
    pub vocabulary_hash: String,
    pub params: MatchParams,
    pub ranked: Vec<ConceptScore>,
    pub top_m: usize,
}

impl Explanation {
    /// The explanation proper: the first `top_m` ranked concepts.
    pub fn top(&self) -> &[ConceptScore] {
        &self.ranked[..self.top_m.min(self.ranked.len())]
    }

    pub fn top_texts(&self) -> Vec<&str> {
        self.top().iter().map(|c| c.text.as_str()).collect()
    }

    pub fn path_for(root: &Path, model: &str, neuron: &NeuronKey) -> PathBuf {
        root.join("explanations")
            .join(fsutil::file_safe(model))
            .join(fsutil::file_safe(&neuron.layer))
            .join(format!("{}.json", neuron.unit))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        fsutil::read_json(path)
    }
}

/// Sort by score descending, then normalized key ascending.
pub fn sort_ranked(scores: &mut [ConceptScore]) {
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| normalize_key(&a.text).cmp(&normalize_key(&b.text)))
            .then_with(|| a.text.cmp(&b.text))
    });
}

/// Rank concepts from a `patches × concepts` similarity matrix.
pub fn rank_from_similarities(texts: &[String], sims: &Array2<f64>) -> Result<Vec<ConceptScore>> {
    if sims.ncols() != texts.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} concept columns", texts.len()),
            actual: format!("{:?}", sims.shape()),
        });
    }
    let mut scores = texts
        .iter()
        .zip(sims.columns())
        .map(|(t, col)| ConceptScore::from_scores(t.clone(), col.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    sort_ranked(&mut scores);
    Ok(scores)
}

/// Scores a vocabulary against patch sets, caching text embeddings across
/// neurons.
pub struct ConceptMatcher<'e> {
    embedder: &'e dyn Embedder,
    params: MatchParams,
    text_cache: RwLock<HashMap<String, Vec<f64>>>,
}

impl<'e> ConceptMatcher<'e> {
    pub fn new(embedder: &'e dyn Embedder, mut params: MatchParams) -> Self {
        if params.embedder_id.is_empty() {
            params.embedder_id = embedder.model_id().to_string();
        }
        ConceptMatcher { embedder, params, text_cache: RwLock::new(HashMap::new()) }
    }

    pub fn params(&self) -> &MatchParams {
        &self.params
    }

    pub fn cached_texts(&self) -> usize {
        self.text_cache.read().expect("text cache poisoned").len()
    }

    pub fn text_embedding(&self, text: &str) -> Result<Vec<f64>> {
        let prompt = self.params.wrap(text);
        if let Some(v) = self.text_cache.read().expect("text cache poisoned").get(&prompt) {
            return Ok(v.clone());
        }
        let v = embed_text(self.embedder, &prompt)?;
        self.text_cache
            .write()
            .expect("text cache poisoned")
            .entry(prompt)
            .or_insert_with(|| v.clone());
        Ok(v)
    }

    pub fn render(&self, patch: &Patch) -> Array3<f64> {
        match self.params.render {
            PatchRender::GrayFill => patch.pixels.clone(),
            PatchRender::Crop => crop_to_mask(&patch.pixels, &patch.mask),
        }
    }

    pub fn patch_embeddings(&self, patches: &PatchSet) -> Result<Vec<Vec<f64>>> {
        if patches.is_empty() {
            return Err(Error::EmptyPatchSet);
        }
        patches
            .patches
            .par_iter()
            .map(|p| embed_image(self.embedder, &self.render(p)))
            .collect()
    }

    pub fn score_concept(&self, patches: &PatchSet, concept: &str) -> Result<ConceptScore> {
        let images = self.patch_embeddings(patches)?;
        let text = self.text_embedding(concept)?;
        ConceptScore::from_scores(concept, images.iter().map(|v| cosine(v, &text)).collect())
    }

    pub fn explain(&self, patches: &PatchSet, vocabulary: &Vocabulary, top_m: usize) -> Result<Explanation> {
        if vocabulary.concepts.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if top_m == 0 {
            return Err(Error::InvalidParameter("top-m must be at least 1".into()));
        }
        let images = self.patch_embeddings(patches)?;
        let texts: Vec<String> = vocabulary.concepts.iter().map(|c| c.text.clone()).collect();
        let text_vecs = texts
            .par_iter()
            .map(|t| self.text_embedding(t))
            .collect::<Result<Vec<_>>>()?;
        let sims = Array2::from_shape_fn((images.len(), texts.len()), |(p, c)| cosine(&images[p], &text_vecs[c]));
        let ranked = rank_from_similarities(&texts, &sims)?;
        Ok(Explanation {
            neuron: patches.neuron.clone(),
            model_hash: patches.model_hash.clone(),
            vocabulary_hash: vocabulary.content_hash(),
            params: MatchParams { top_m, ..self.params.clone() },
            ranked,
            top_m,
        })
    }
}

pub fn score_concept(embedder: &dyn Embedder, patches: &PatchSet, concept: &str) -> Result<ConceptScore> {
    ConceptMatcher::new(embedder, MatchParams::default()).score_concept(patches, concept)
}

pub fn explain_neuron(
    embedder: &dyn Embedder,
    patches: &PatchSet,
    vocabulary: &Vocabulary,
    top_m: usize,
) -> Result<Explanation> {
    ConceptMatcher::new(embedder, MatchParams::default()).explain(patches, vocabulary, top_m)
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Image};
use crate::error::{Error, Result};
use crate::model::ModelHandle;

/// Which corpus images an accuracy is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum EvalSubset {
    Full,
    /// Up to `per_class` images per class, drawn with a fixed seed.
    Stratified { per_class: usize, seed: u64 },
}

impl Default for EvalSubset {
    fn default() -> Self {
        EvalSubset::Stratified { per_class: 50, seed: 0 }
    }
}

/// Labeled images held in memory so every measurement sees the same set.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub class_names: Vec<String>,
    pub images: Vec<Image>,
}

impl EvalSet {
    pub fn prepare(corpus: &Corpus, subset: EvalSubset) -> Result<Self> {
        if !corpus.is_labeled() {
            return Err(Error::Unlabeled);
        }
        let indices = select_indices(corpus, subset);
        let images = indices
            .par_iter()
            .map(|&i| corpus.image(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalSet { class_names: corpus.class_names().to_vec(), images })
    }

    pub fn from_images(class_names: Vec<String>, images: Vec<Image>) -> Result<Self> {
        if images.iter().any(|img| img.label.is_none()) {
            return Err(Error::Unlabeled);
        }
        if let Some(img) = images.iter().find(|img| img.label.unwrap() >= class_names.len()) {
            return Err(Error::ClassOutOfRange { class: img.label.unwrap(), classes: class_names.len() });
        }
        Ok(EvalSet { class_names, images })
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn select_indices(corpus: &Corpus, subset: EvalSubset) -> Vec<usize> {
    match subset {
        EvalSubset::Full => (0..corpus.len()).collect(),
        EvalSubset::Stratified { per_class, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = Vec::new();
            for class in 0..corpus.class_count() {
                let mut members: Vec<usize> = corpus
                    .entries()
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.label == Some(class))
                    .map(|(i, _)| i)
                    .collect();
                members.shuffle(&mut rng);
                members.truncate(per_class);
                picked.extend(members);
            }
            picked.sort_unstable();
            picked
        }
    }
}

/// Top-1 accuracy per class. Classes with no images are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAccuracy {
    pub per_class: Vec<Option<f64>>,
    pub n_per_class: Vec<usize>,
    pub correct_per_class: Vec<usize>,
    pub model_hash: String,
}

impl CategoryAccuracy {
    pub fn evaluated(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.per_class.iter().enumerate().filter_map(|(c, a)| a.map(|a| (c, a)))
    }

    pub fn overall(&self) -> f64 {
        let n: usize = self.n_per_class.iter().sum();
        self.correct_per_class.iter().sum::<usize>() as f64 / n.max(1) as f64
    }
}

pub fn category_accuracy_on(model: &ModelHandle, eval: &EvalSet) -> Result<CategoryAccuracy> {
    if model.class_count() != eval.class_count() {
        return Err(Error::InvalidParameter(format!(
            "model has {} classes, evaluation set {}",
            model.class_count(),
            eval.class_count()
        )));
    }
    let predictions = eval
        .images
        .par_iter()
        .map(|img| model.predict_class(img))
        .collect::<Result<Vec<_>>>()?;
    let c = eval.class_count();
    let mut n = vec![0usize; c];
    let mut correct = vec![0usize; c];
    for (img, pred) in eval.images.iter().zip(predictions) {
        let label = img.label.ok_or(Error::Unlabeled)?;
        n[label] += 1;
        if pred == label {
            correct[label] += 1;
        }
    }
    let per_class = n
        .iter()
        .zip(&correct)
        .map(|(&n, &k)| (n > 0).then(|| k as f64 / n as f64))
        .collect();
    Ok(CategoryAccuracy { per_class, n_per_class: n, correct_per_class: correct, model_hash: model.content_hash() })
}

/// Accuracy over the whole corpus.
pub fn category_accuracy(model: &ModelHandle, corpus: &Corpus) -> Result<CategoryAccuracy> {
    category_accuracy_on(model, &EvalSet::prepare(corpus, EvalSubset::Full)?)
}

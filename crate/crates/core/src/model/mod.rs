//! Uniform access to vision classifiers: predictions, per-unit activations,
//! classifier-head weights and reversible unit ablation.
//!
//! A unit's scalar activation is the maximum of its feature map (spatial
//! positions for conv layers, token positions including the class token for
//! MLP hidden layers). Mean aggregation is available through the model spec.

pub mod network;
mod spec;

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use network::{ActivationSite, Features, Layer, NetworkWeights, Nonlinearity};
pub use spec::{Aggregator, Architecture, ModelSpec, Preprocessing};

use crate::data::Image;
use crate::error::{Error, Result};
use network::{check_shape, softmax, HeadKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    ConvFeatureMap,
    MlpHidden,
}

/// A layer whose units can be explained.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerId {
    pub name: String,
    pub kind: LayerKind,
    pub unit_count: usize,
}

/// One neuron: unit `unit` of `layer`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeuronRef {
    pub layer: LayerId,
    pub unit: usize,
}

impl NeuronRef {
    pub fn key(&self) -> NeuronKey {
        NeuronKey {
            layer: self.layer.name.clone(),
            unit: self.unit,
        }
    }
}

impl std::fmt::Display for NeuronRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.layer.name, self.unit)
    }
}

/// Neuron address as written in output records.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronKey {
    pub layer: String,
    pub unit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Spatial { row: usize, col: usize },
    Token(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub neuron: NeuronRef,
    pub image_id: String,
    pub scalar: f64,
    /// First maximizing position in row-major (or token) order; absent under
    /// mean aggregation.
    pub argmax: Option<Position>,
}

/// The raw activation map of a single unit.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitMap {
    Spatial(Array2<f64>),
    Tokens(Array1<f64>),
}

impl UnitMap {
    /// Max with first-in-order tie-breaking, or mean.
    pub fn aggregate(&self, aggregator: Aggregator) -> (f64, Option<Position>) {
        let values: Box<dyn Iterator<Item = f64>> = match self {
            UnitMap::Spatial(m) => Box::new(m.iter().copied()),
            UnitMap::Tokens(t) => Box::new(t.iter().copied()),
        };
        match aggregator {
            Aggregator::Mean => {
                let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                (sum / n as f64, None)
            }
            Aggregator::Max => {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for (i, v) in values.enumerate() {
                    if v > best {
                        best = v;
                        at = i;
                    }
                }
                let pos = match self {
                    UnitMap::Spatial(m) => Position::Spatial {
                        row: at / m.ncols(),
                        col: at % m.ncols(),
                    },
                    UnitMap::Tokens(_) => Position::Token(at),
                };
                (best, Some(pos))
            }
        }
    }
}

/// Saved parameters of an ablated unit; pass back to
/// [`ModelHandle::restore`] to undo the ablation.
#[must_use = "an ablation is only undone by passing the token to restore"]
#[derive(Debug)]
pub struct AblationToken {
    neuron: NeuronRef,
    layer_index: usize,
    weights: Vec<f64>,
    bias: f64,
}

impl AblationToken {
    pub fn neuron(&self) -> &NeuronRef {
        &self.neuron
    }
}

/// A loaded classifier. Inference takes `&self` and may run concurrently;
/// ablation takes `&mut self`. Clones are fully independent.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    spec: ModelSpec,
    weights: NetworkWeights,
    catalog: Vec<LayerId>,
    catalog_index: Vec<usize>,
    ablated: BTreeSet<(String, usize)>,
    base_hash: String,
}

impl ModelHandle {
    /// Reads a model-spec JSON file and the weights it points to.
    pub fn load(spec_path: &Path) -> Result<Self> {
        let spec = ModelSpec::read(spec_path)?;
        let base = spec_path.parent().unwrap_or(Path::new("."));
        let weights_path = base.join(&spec.weight_source);
        if !weights_path.is_file() {
            return Err(Error::InvalidModel(format!(
                "unreadable weights: {}",
                weights_path.display()
            )));
        }
        let weights: NetworkWeights = crate::fsutil::read_json(&weights_path)?;
        Self::from_parts(spec, weights)
    }

    pub fn from_parts(spec: ModelSpec, weights: NetworkWeights) -> Result<Self> {
        let has_tokens = weights.layers.iter().any(|l| matches!(l, Layer::PatchEmbed(_)));
        match spec.architecture {
            Architecture::Conv if has_tokens => {
                return Err(Error::InvalidModel("conv architecture with a patch embedding".into()))
            }
            Architecture::Transformer if !has_tokens => {
                return Err(Error::InvalidModel("transformer architecture without a patch embedding".into()))
            }
            _ => {}
        }
        weights.validate(spec.input_shape())?;
        if let Some(head) = &spec.head_layer_name {
            if head != &weights.head.name {
                return Err(Error::InvalidModel(format!(
                    "head layer {head:?} not found (weights head is {:?})",
                    weights.head.name
                )));
            }
        }
        let c = spec.input_shape[2];
        for (what, v) in [("mean", &spec.preprocessing.mean), ("std", &spec.preprocessing.std)] {
            if !v.is_empty() && v.len() != c {
                return Err(Error::InvalidModel(format!("preprocessing {what} needs {c} values")));
            }
        }
        if spec.preprocessing.std.contains(&0.0) {
            return Err(Error::InvalidModel("preprocessing std must be nonzero".into()));
        }
        let mut catalog = Vec::new();
        let mut catalog_index = Vec::new();
        for (i, layer) in weights.layers.iter().enumerate() {
            let id = match layer {
                Layer::Conv2d(l) => LayerId {
                    name: l.name.clone(),
                    kind: LayerKind::ConvFeatureMap,
                    unit_count: l.out_channels,
                },
                Layer::MlpBlock(l) => LayerId {
                    name: l.name.clone(),
                    kind: LayerKind::MlpHidden,
                    unit_count: l.hidden,
                },
                _ => continue,
            };
            catalog.push(id);
            catalog_index.push(i);
        }
        if catalog.is_empty() {
            return Err(Error::InvalidModel("model has no conv or mlp layers".into()));
        }
        for (alias, target) in &spec.layer_aliases {
            if !catalog.iter().any(|l| &l.name == target) {
                return Err(Error::InvalidModel(format!(
                    "alias {alias:?} points at unknown layer {target:?}"
                )));
            }
        }
        let spec_for_hash = ModelSpec {
            weight_source: String::new(),
            ..spec.clone()
        };
        let base_hash = crate::fsutil::hash_json(&(&spec_for_hash, &weights));
        Ok(ModelHandle {
            spec,
            weights,
            catalog,
            catalog_index,
            ablated: BTreeSet::new(),
            base_hash,
        })
    }

    /// Writes `<stem>.json` (spec) and `<stem>.weights.json` into `dir` and
    /// returns the spec path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
        let weights_name = format!("{stem}.weights.json");
        crate::fsutil::write_json(&dir.join(&weights_name), &self.weights)?;
        let spec = ModelSpec {
            weight_source: weights_name,
            ..self.spec.clone()
        };
        let spec_path = dir.join(format!("{stem}.json"));
        crate::fsutil::write_json(&spec_path, &spec)?;
        Ok(spec_path)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn into_parts(self) -> (ModelSpec, NetworkWeights) {
        (self.spec, self.weights)
    }

    pub fn architecture(&self) -> Architecture {
        self.spec.architecture
    }

    pub fn layers(&self) -> &[LayerId] {
        &self.catalog
    }

    pub fn class_count(&self) -> usize {
        self.weights.head.classes()
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.spec.input_shape()
    }

    /// Looks a layer up by name or alias.
    pub fn layer(&self, name: &str) -> Result<&LayerId> {
        let name = self.spec.layer_aliases.get(name).map(String::as_str).unwrap_or(name);
        self.catalog
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// The last unit layer, the one the classifier head reads.
    pub fn final_layer(&self) -> &LayerId {
        self.catalog.last().expect("catalog is non-empty")
    }

    pub fn neuron(&self, layer: &str, unit: usize) -> Result<NeuronRef> {
        let layer = self.layer(layer)?.clone();
        let n = NeuronRef { layer, unit };
        self.check_neuron(&n)?;
        Ok(n)
    }

    fn catalog_position(&self, layer: &LayerId) -> Result<usize> {
        self.catalog
            .iter()
            .position(|l| l == layer)
            .ok_or_else(|| Error::UnknownLayer(layer.name.clone()))
    }

    fn check_neuron(&self, neuron: &NeuronRef) -> Result<usize> {
        let pos = self.catalog_position(&neuron.layer).map_err(|_| Error::InvalidNeuron {
            layer: neuron.layer.name.clone(),
            unit: neuron.unit,
            reason: "layer not in this model".into(),
        })?;
        if neuron.unit >= neuron.layer.unit_count {
            return Err(Error::InvalidNeuron {
                layer: neuron.layer.name.clone(),
                unit: neuron.unit,
                reason: format!("layer has {} units", neuron.layer.unit_count),
            });
        }
        Ok(pos)
    }

    /// Resizes (when configured), checks shape and normalizes to `(C, H, W)`.
    pub fn preprocess(&self, image: &Image) -> Result<Array3<f64>> {
        let expected = self.input_shape();
        let resized;
        let pixels = if image.shape() != expected
            && self.spec.preprocessing.resize
            && image.channels() == expected.2
        {
            resized = crate::data::resize(&image.pixels, expected.0, expected.1);
            &resized
        } else {
            &image.pixels
        };
        check_shape(expected, pixels.dim())?;
        let pre = &self.spec.preprocessing;
        let mut out = pixels.view().permuted_axes([2, 0, 1]).to_owned();
        if !pre.mean.is_empty() || !pre.std.is_empty() {
            for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
                let m = pre.mean.get(c).copied().unwrap_or(0.0);
                let s = pre.std.get(c).copied().unwrap_or(1.0);
                plane.mapv_inplace(|v| (v - m) / s);
            }
        }
        Ok(out)
    }

    pub fn logits(&self, image: &Image) -> Result<Vec<f64>> {
        let input = self.preprocess(image)?;
        Ok(self.weights.forward(input, None, false).0)
    }

    /// Class probabilities (softmax of the logits).
    pub fn predict(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(image)?))
    }

    /// Index of the highest logit; the lowest index wins ties.
    pub fn predict_class(&self, image: &Image) -> Result<usize> {
        let logits = self.logits(image)?;
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Every unit's map for `layer`: `(units, H, W)` for conv layers,
    /// `(tokens, units)` for MLP hidden layers.
    pub fn layer_maps(&self, image: &Image, layer: &LayerId) -> Result<Features> {
        let pos = self.catalog_position(layer)?;
        let input = self.preprocess(image)?;
        let (_, captured) = self.weights.forward(
            input,
            Some((self.catalog_index[pos], self.spec.activation_site)),
            true,
        );
        Ok(captured.expect("capture layer is in the network"))
    }

    fn unit_of(maps: &Features, unit: usize) -> UnitMap {
        match maps {
            Features::Map(m) => UnitMap::Spatial(m.index_axis(Axis(0), unit).to_owned()),
            Features::Tokens(t) => UnitMap::Tokens(t.index_axis(Axis(1), unit).to_owned()),
        }
    }

    /// The full activation map of one unit.
    pub fn unit_map(&self, image: &Image, neuron: &NeuronRef) -> Result<UnitMap> {
        self.check_neuron(neuron)?;
        let maps = self.layer_maps(image, &neuron.layer)?;
        Ok(Self::unit_of(&maps, neuron.unit))
    }

    pub fn neuron_activation(&self, image: &Image, neuron: &NeuronRef) -> Result<ActivationRecord> {
        let map = self.unit_map(image, neuron)?;
        let (scalar, argmax) = map.aggregate(self.spec.aggregator);
        Ok(ActivationRecord {
            neuron: neuron.clone(),
            image_id: image.id.clone(),
            scalar,
            argmax,
        })
    }

    /// `(images × units)` matrix of scalar activations for `layer`.
    pub fn batch_activations(&self, images: &[Image], layer: &LayerId) -> Result<Array2<f64>> {
        if images.is_empty() {
            return Err(Error::InvalidParameter("batch_activations needs at least one image".into()));
        }
        self.catalog_position(layer)?;
        let rows: Vec<Vec<f64>> = images
            .par_iter()
            .map(|img| {
                let maps = self.layer_maps(img, layer)?;
                Ok((0..layer.unit_count)
                    .map(|k| Self::unit_of(&maps, k).aggregate(self.spec.aggregator).0)
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((images.len(), layer.unit_count));
        for (i, row) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&Array1::from(row));
        }
        Ok(out)
    }

    /// Head weights of `class` over the final layer's units.
    pub fn classifier_head_weights(&self, class: usize) -> Result<Vec<f64>> {
        let classes = self.class_count();
        let HeadKind::Linear { weight, .. } = &self.weights.head.kind else {
            return Err(Error::NoLinearHead);
        };
        let final_layer = self.final_layer();
        if final_layer.kind != LayerKind::ConvFeatureMap {
            return Err(Error::InvalidModel(
                "classifier head does not read pooled unit activations".into(),
            ));
        }
        if class >= classes {
            return Err(Error::ClassOutOfRange { class, classes });
        }
        let n = final_layer.unit_count;
        Ok(weight[class * n..(class + 1) * n].to_vec())
    }

    /// Zeros the parameters producing `neuron`: the conv filter and bias of
    /// its channel, or the incoming weights and bias of an MLP hidden unit.
    pub fn ablate_unit(&mut self, neuron: &NeuronRef) -> Result<AblationToken> {
        let pos = self.check_neuron(neuron)?;
        let key = (neuron.layer.name.clone(), neuron.unit);
        if self.ablated.contains(&key) {
            return Err(Error::AlreadyAblated {
                layer: key.0,
                unit: key.1,
            });
        }
        let layer_index = self.catalog_index[pos];
        let k = neuron.unit;
        let (weights, bias) = match &mut self.weights.layers[layer_index] {
            Layer::Conv2d(l) => {
                let n = l.filter_len();
                let saved = l.weight[k * n..(k + 1) * n].to_vec();
                l.weight[k * n..(k + 1) * n].fill(0.0);
                (saved, std::mem::replace(&mut l.bias[k], 0.0))
            }
            Layer::MlpBlock(l) => {
                let n = l.dim;
                let saved = l.w_in[k * n..(k + 1) * n].to_vec();
                l.w_in[k * n..(k + 1) * n].fill(0.0);
                (saved, std::mem::replace(&mut l.b_in[k], 0.0))
            }
            _ => unreachable!("catalog holds unit layers only"),
        };
        self.ablated.insert(key);
        Ok(AblationToken {
            neuron: neuron.clone(),
            layer_index,
            weights,
            bias,
        })
    }

    /// Writes the saved parameters back, bit for bit.
    pub fn restore(&mut self, token: AblationToken) -> Result<()> {
        let k = token.neuron.unit;
        let key = (token.neuron.layer.name.clone(), k);
        if !self.ablated.remove(&key) {
            return Err(Error::NotAblated {
                layer: key.0,
                unit: key.1,
            });
        }
        match &mut self.weights.layers[token.layer_index] {
            Layer::Conv2d(l) => {
                let n = l.filter_len();
                l.weight[k * n..(k + 1) * n].copy_from_slice(&token.weights);
                l.bias[k] = token.bias;
            }
            Layer::MlpBlock(l) => {
                let n = l.dim;
                l.w_in[k * n..(k + 1) * n].copy_from_slice(&token.weights);
                l.b_in[k] = token.bias;
            }
            _ => unreachable!("catalog holds unit layers only"),
        }
        Ok(())
    }

    /// Runs `f` with `neuron` ablated and restores afterwards, whether or
    /// not `f` succeeded.
    pub fn with_ablation<T>(
        &mut self,
        neuron: &NeuronRef,
        f: impl FnOnce(&ModelHandle) -> Result<T>,
    ) -> Result<T> {
        let token = self.ablate_unit(neuron)?;
        let out = f(self);
        self.restore(token)?;
        out
    }

    pub fn is_ablated(&self, neuron: &NeuronRef) -> bool {
        self.ablated.contains(&(neuron.layer.name.clone(), neuron.unit))
    }

    /// Hash of spec and weights; reflects currently ablated units.
    pub fn content_hash(&self) -> String {
        if self.ablated.is_empty() {
            self.base_hash.clone()
        } else {
            crate::fsutil::hash_json(&(&self.base_hash, &self.ablated))
        }
    }
}

#[cfg(test)]
mod tests;

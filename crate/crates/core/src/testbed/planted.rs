use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Image};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::patches::PatchParams;
use crate::model::network::{Conv2d, Head, HeadKind, Pool};
use crate::model::{
    ActivationSite, Aggregator, Architecture, Layer, ModelHandle, ModelSpec, NetworkWeights, Nonlinearity, Preprocessing,
};

pub const PALETTE: [(&str, [f64; 3]); 6] = [
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("magenta", [1.0, 0.0, 1.0]),
];

pub const BACKGROUND_CLASS: &str = "background";

pub fn color_concept(name: &str) -> String {
    format!("{name} square")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub name: String,
    /// Channel values, each 0 or 1.
    pub color: [f64; 3],
}

impl Trigger {
    pub fn from_palette(name: &str) -> Result<Self> {
        PALETTE
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, c)| Trigger { name: n.to_string(), color: *c })
            .ok_or_else(|| Error::InvalidParameter(format!("no palette color named {name:?}")))
    }

    pub fn concept(&self) -> String {
        color_concept(&self.name)
    }

    fn lit_channels(&self) -> usize {
        self.color.iter().filter(|&&v| v == 1.0).count()
    }
}

/// Description of a planted-detector testbed.
///
/// Trigger `u` is detected by unit `u` and defines class `u`; the last
/// class is a trigger-free background class. Units past the triggers carry
/// random zero-mean filters wired to nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub image_size: (usize, usize),
    pub trigger_size: usize,
    pub triggers: Vec<Trigger>,
    pub n_units: usize,
    /// Background pixels are `noise_level * U[0, 1]` per channel.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            image_size: (16, 16),
            trigger_size: 4,
            triggers: vec![
                Trigger::from_palette("red").expect("palette"),
                Trigger::from_palette("green").expect("palette"),
            ],
            n_units: 4,
            noise_level: 0.0,
            seed: 0,
        }
    }
}

impl PlantedSpec {
    /// `n_planted` distinct palette colors drawn from `seed`.
    pub fn random(seed: u64, n_planted: usize, noise_level: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names: Vec<&str> = PALETTE.iter().map(|(n, _)| *n).collect();
        names.shuffle(&mut rng);
        PlantedSpec {
            triggers: names
                .iter()
                .take(n_planted)
                .map(|n| Trigger::from_palette(n).expect("palette"))
                .collect(),
            noise_level,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if self.trigger_size == 0 || self.trigger_size > h || self.trigger_size > w {
            return Err(Error::InvalidParameter(format!(
                "trigger of size {} does not fit a {h}x{w} image",
                self.trigger_size
            )));
        }
        if self.triggers.is_empty() {
            return Err(Error::InvalidParameter("at least one trigger is required".into()));
        }
        if self.n_units < self.triggers.len() {
            return Err(Error::InvalidParameter(format!(
                "{} triggers need at least as many units, got {}",
                self.triggers.len(),
                self.n_units
            )));
        }
        for (i, t) in self.triggers.iter().enumerate() {
            if t.color.iter().any(|&v| v != 0.0 && v != 1.0) || t.lit_channels() == 0 {
                return Err(Error::InvalidParameter(format!("trigger {:?} must be a non-black 0/1 color", t.name)));
            }
            if self.triggers[..i].iter().any(|o| o.color == t.color) {
                return Err(Error::InvalidParameter(format!("duplicate trigger color {:?}", t.name)));
            }
        }
        if !(self.noise_level >= 0.0 && self.noise_level <= 1.0) {
            return Err(Error::InvalidParameter("noise level must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn planted_units(&self) -> usize {
        self.triggers.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.triggers.iter().map(|t| t.name.clone()).collect();
        names.push(BACKGROUND_CLASS.into());
        names
    }

    /// Head weight of `unit` for `class`.
    pub fn head_weight(&self, class: usize, unit: usize) -> f64 {
        let p = self.planted_units();
        if class >= p || unit >= p {
            return 0.0;
        }
        let mut w = 0.0;
        if unit == class {
            w += 0.9;
        }
        if unit == (class + 1) % p {
            w += 0.1;
        }
        w
    }

    /// Patch parameters proportioned for testbed-sized images: a 3 px
    /// occluder at stride 1. The library default stride of 3 leaves a
    /// 16 px receptive field with block artifacts as large as the trigger.
    pub fn patch_params(&self) -> PatchParams {
        PatchParams { occluder_size: Some(3), stride: 1, ..Default::default() }
    }

    fn model_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn corpus_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        rng
    }
}

/// Top-left corner and side of a trigger square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl Region {
    pub fn as_rect(&self) -> (usize, usize, usize, usize) {
        (self.row, self.col, self.size, self.size)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.size && col >= self.col && col < self.col + self.size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedUnit {
    pub unit: usize,
    pub concept: String,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: PlantedSpec,
    pub layer: String,
    pub units: Vec<PlantedUnit>,
    /// Trigger region per image id.
    #[serde(default)]
    pub regions: BTreeMap<String, Region>,
}

impl GroundTruth {
    fn for_spec(spec: &PlantedSpec) -> Self {
        GroundTruth {
            spec: spec.clone(),
            layer: "conv".into(),
            units: spec
                .triggers
                .iter()
                .enumerate()
                .map(|(u, t)| PlantedUnit { unit: u, concept: t.concept(), class: u })
                .collect(),
            regions: BTreeMap::new(),
        }
    }

    pub fn planted(&self, unit: usize) -> Option<&PlantedUnit> {
        self.units.iter().find(|p| p.unit == unit)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        fsutil::read_json(path)
    }
}

/// One conv layer (kernel = trigger size, valid padding, ReLU), global max
/// pooling and a linear head.
///
/// The planted filter for a trigger with lit channels `t` has weight
/// `2(2t_c − 1)/n` at every position (`n` = pixels per window) and bias
/// `1 − 2·|t|`, so a window filled with the trigger scores exactly 1 and a
/// window of any other palette color scores at most −1.
pub fn make_planted_model(spec: &PlantedSpec) -> Result<(ModelHandle, GroundTruth)> {
    spec.validate()?;
    let (h, w) = spec.image_size;
    let k = spec.trigger_size;
    let n = (k * k) as f64;
    let mut rng = spec.model_rng();

    let mut weight = Vec::with_capacity(spec.n_units * 3 * k * k);
    let mut bias = Vec::with_capacity(spec.n_units);
    for u in 0..spec.n_units {
        if let Some(t) = spec.triggers.get(u) {
            for c in 0..3 {
                let v = 2.0 * (2.0 * t.color[c] - 1.0) / n;
                weight.extend(std::iter::repeat(v).take(k * k));
            }
            bias.push(1.0 - 2.0 * t.lit_channels() as f64);
        } else {
            for _ in 0..3 {
                let raw: Vec<f64> = (0..k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mean = raw.iter().sum::<f64>() / n;
                weight.extend(raw.iter().map(|v| 0.5 * (v - mean)));
            }
            bias.push(0.0);
        }
    }

    let classes = spec.planted_units() + 1;
    let mut head_w = vec![0.0; classes * spec.n_units];
    for c in 0..classes {
        for u in 0..spec.n_units {
            head_w[c * spec.n_units + u] = spec.head_weight(c, u);
        }
    }
    let mut head_b = vec![0.0; classes];
    head_b[classes - 1] = 0.05;

    let weights = NetworkWeights {
        layers: vec![Layer::Conv2d(Conv2d {
            name: "conv".into(),
            in_channels: 3,
            out_channels: spec.n_units,
            kernel: k,
            stride: 1,
            padding: 0,
            activation: Nonlinearity::Relu,
            weight,
            bias,
        })],
        head: Head {
            name: "fc".into(),
            pool: Pool::Max,
            kind: HeadKind::Linear { classes, weight: head_w, bias: head_b },
        },
    };
    let model_spec = ModelSpec {
        name: format!("planted-{}", spec.seed),
        architecture: Architecture::Conv,
        weight_source: format!("planted-{}.weights.json", spec.seed),
        input_shape: [h, w, 3],
        preprocessing: Preprocessing::identity(),
        head_layer_name: Some("fc".into()),
        layer_aliases: [("last_conv".to_string(), "conv".to_string())].into(),
        activation_site: ActivationSite::Post,
        aggregator: Aggregator::Max,
    };
    Ok((ModelHandle::from_parts(model_spec, weights)?, GroundTruth::for_spec(spec)))
}

/// Noise background with one trigger square per image.
///
/// Noise is quantized to multiples of 1/255 so images survive a PNG round
/// trip unchanged.
pub fn synthetic_images(spec: &PlantedSpec, n_per_class: usize) -> Result<(Vec<Image>, GroundTruth)> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(Error::InvalidParameter("n-per-class must be at least 1".into()));
    }
    let (h, w) = spec.image_size;
    let k = spec.trigger_size;
    let mut rng = spec.corpus_rng();
    let mut truth = GroundTruth::for_spec(spec);
    let mut images = Vec::with_capacity(n_per_class * spec.triggers.len());
    for (class, trigger) in spec.triggers.iter().enumerate() {
        for i in 0..n_per_class {
            let mut pixels = Array3::from_shape_simple_fn((h, w, 3), || {
                let level = (spec.noise_level * 255.0 * rng.random::<f64>()).round();
                level / 255.0
            });
            let region = Region { row: rng.random_range(0..=h - k), col: rng.random_range(0..=w - k), size: k };
            for y in region.row..region.row + k {
                for x in region.col..region.col + k {
                    for c in 0..3 {
                        pixels[[y, x, c]] = trigger.color[c];
                    }
                }
            }
            let id = format!("{}_{i:03}", trigger.name);
            truth.regions.insert(id.clone(), region);
            images.push(Image::new(id, pixels).with_label(class));
        }
    }
    Ok((images, truth))
}

/// Builds the corpus in memory, or on disk (manifest, PNGs and
/// `ground_truth.json`) when `dir` is given.
pub fn make_synthetic_corpus(
    spec: &PlantedSpec,
    n_per_class: usize,
    dir: Option<&Path>,
) -> Result<(Corpus, GroundTruth)> {
    let (images, truth) = synthetic_images(spec, n_per_class)?;
    let corpus = match dir {
        Some(dir) => {
            let manifest = Corpus::write_manifest(dir, &spec.class_names(), &images)?;
            truth.save(&dir.join("ground_truth.json"))?;
            Corpus::load(&manifest)?
        }
        None => Corpus::from_images(spec.class_names(), images)?,
    };
    Ok((corpus, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(image: &Image, spec: &PlantedSpec, unit: usize) -> f64 {
        let k = spec.trigger_size;
        let t = &spec.triggers[unit];
        let (h, w) = spec.image_size;
        let mut best = 0.0f64;
        for r in 0..=h - k {
            for c in 0..=w - k {
                let mut acc = 0.0;
                for y in r..r + k {
                    for x in c..c + k {
                        for ch in 0..3 {
                            acc += (2.0 * t.color[ch] - 1.0) * image.pixels[[y, x, ch]];
                        }
                    }
                }
                let lit = t.color.iter().sum::<f64>();
                let pre = 2.0 * (acc / (k * k) as f64 - (lit - 0.5));
                best = best.max(pre.max(0.0));
            }
        }
        best
    }

    #[test]
    fn planted_unit_fires_exactly_on_its_trigger() {
        let spec = PlantedSpec { noise_level: 0.3, seed: 4, ..Default::default() };
        let (model, _) = make_planted_model(&spec).unwrap();
        let (images, _) = synthetic_images(&spec, 6).unwrap();
        for u in 0..2 {
            let n = model.neuron("conv", u).unwrap();
            for img in &images {
                let a = model.neuron_activation(img, &n).unwrap().scalar;
                assert!((a - direct_conv(img, &spec, u)).abs() < 1e-9);
                assert_eq!(a > 0.0, img.label == Some(u), "{} unit {u}: {a}", img.id);
            }
        }
    }

    #[test]
    fn trigger_free_images_leave_planted_units_silent() {
        for seed in 0..8 {
            let spec = PlantedSpec { noise_level: 1.0, seed, ..Default::default() };
            let (model, _) = make_planted_model(&spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Image::new("n", Array3::from_shape_simple_fn((16, 16, 3), || rng.random::<f64>()));
            for u in 0..2 {
                let a = model.neuron_activation(&img, &model.neuron("conv", u).unwrap()).unwrap().scalar;
                assert!(a < 1e-9, "seed {seed} unit {u}: {a}");
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = PlantedSpec { seed: 11, ..Default::default() };
        let (a, _) = make_planted_model(&spec).unwrap();
        let (b, _) = make_planted_model(&spec).unwrap();
        assert_eq!(a.weights(), b.weights());
        let (c, _) = make_planted_model(&PlantedSpec { seed: 12, ..spec.clone() }).unwrap();
        assert_ne!(a.weights(), c.weights());
        assert_eq!(synthetic_images(&spec, 3).unwrap(), synthetic_images(&spec, 3).unwrap());
    }

    #[test]
    fn corpus_counts_and_regions() {
        let spec = PlantedSpec { noise_level: 0.5, ..Default::default() };
        let (images, truth) = synthetic_images(&spec, 5).unwrap();
        assert_eq!(images.len(), 10);
        for img in &images {
            let t = &spec.triggers[img.label.unwrap()];
            let r = truth.regions[&img.id];
            for y in r.row..r.row + r.size {
                for x in r.col..r.col + r.size {
                    assert_eq!(img.pixels.slice(ndarray::s![y, x, ..]).to_vec(), t.color.to_vec());
                }
            }
        }
    }

    #[test]
    fn noise_free_corpus_is_classified_perfectly() {
        let spec = PlantedSpec::random(3, 3, 0.0);
        let (model, _) = make_planted_model(&spec).unwrap();
        let (images, _) = synthetic_images(&spec, 4).unwrap();
        for img in &images {
            assert_eq!(model.predict_class(img).unwrap(), img.label.unwrap());
        }
    }

    #[test]
    fn disk_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PlantedSpec { noise_level: 0.7, ..Default::default() };
        let (corpus, truth) = make_synthetic_corpus(&spec, 2, Some(dir.path())).unwrap();
        let (mem, _) = synthetic_images(&spec, 2).unwrap();
        assert_eq!(corpus.load_all().unwrap(), mem);
        assert_eq!(GroundTruth::load(&dir.path().join("ground_truth.json")).unwrap(), truth);
    }

    #[test]
    fn invalid_specs() {
        let bad = PlantedSpec { trigger_size: 17, ..Default::default() };
        assert!(make_planted_model(&bad).is_err());
        let bad = PlantedSpec { n_units: 1, ..Default::default() };
        assert!(make_planted_model(&bad).is_err());
        assert!(synthetic_images(&PlantedSpec::default(), 0).is_err());
    }
}

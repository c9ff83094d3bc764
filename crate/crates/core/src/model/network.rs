//! A small dense inference runtime for convolutional and transformer
//! classifiers, stored as JSON weight files.
//!
//! Tensors are plain row-major `Vec<f64>`: conv weights are
//! `[out][in][k][k]`, dense weights are `[out][in]`.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Relu,
    Gelu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
            }
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Nonlinearity::Identity => x,
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub activation: Nonlinearity,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn output_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel || self.stride == 0 {
            return None;
        }
        Some(((hp - self.kernel) / self.stride + 1, (wp - self.kernel) / self.stride + 1))
    }

    /// Returns `(pre-activation, post-activation)` maps, `(out, H', W')`.
    fn forward(&self, input: &Array3<f64>) -> (Array3<f64>, Array3<f64>) {
        let (c_in, h, w) = input.dim();
        debug_assert_eq!(c_in, self.in_channels);
        let (oh, ow) = self.output_dims(h, w).expect("validated dims");
        let k = self.kernel;
        let input = input.as_standard_layout();
        let src = input.as_slice().expect("standard layout");
        let mut pre = Array3::<f64>::zeros((self.out_channels, oh, ow));
        let pad = self.padding as isize;
        for o in 0..self.out_channels {
            let filter = &self.weight[o * self.filter_len()..(o + 1) * self.filter_len()];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.bias[o];
                    for i in 0..c_in {
                        for ky in 0..k {
                            let y = (oy * self.stride + ky) as isize - pad;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let x = (ox * self.stride + kx) as isize - pad;
                                if x < 0 || x >= w as isize {
                                    continue;
                                }
                                acc += filter[(i * k + ky) * k + kx]
                                    * src[(i * h + y as usize) * w + x as usize];
                            }
                        }
                    }
                    pre[[o, oy, ox]] = acc;
                }
            }
        }
        let act = self.activation;
        let post = pre.mapv(|v| act.apply(v));
        (pre, post)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPool2d {
    pub name: String,
    pub size: usize,
    pub stride: usize,
}

impl MaxPool2d {
    fn output_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h < self.size || w < self.size || self.stride == 0 || self.size == 0 {
            return None;
        }
        Some(((h - self.size) / self.stride + 1, (w - self.size) / self.stride + 1))
    }

    fn forward(&self, input: &Array3<f64>) -> Array3<f64> {
        let (c, h, w) = input.dim();
        let (oh, ow) = self.output_dims(h, w).expect("validated dims");
        Array3::from_shape_fn((c, oh, ow), |(ch, oy, ox)| {
            let mut best = f64::NEG_INFINITY;
            for dy in 0..self.size {
                for dx in 0..self.size {
                    best = best.max(input[[ch, oy * self.stride + dy, ox * self.stride + dx]]);
                }
            }
            best
        })
    }
}

/// Splits the image into non-overlapping square patches and projects each to
/// a token; a learned class token is prepended at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEmbed {
    pub name: String,
    pub patch: usize,
    pub channels: usize,
    pub dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub class_token: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Vec<f64>>,
}

impl PatchEmbed {
    fn token_count(&self, h: usize, w: usize) -> usize {
        1 + (h / self.patch) * (w / self.patch)
    }

    fn forward(&self, input: &Array3<f64>) -> Array2<f64> {
        let (c, h, w) = input.dim();
        let p = self.patch;
        let (gh, gw) = (h / p, w / p);
        let flat = c * p * p;
        let mut tokens = Array2::<f64>::zeros((1 + gh * gw, self.dim));
        for d in 0..self.dim {
            tokens[[0, d]] = self.class_token[d];
        }
        let mut buf = vec![0.0; flat];
        for gy in 0..gh {
            for gx in 0..gw {
                for ch in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            buf[(ch * p + py) * p + px] = input[[ch, gy * p + py, gx * p + px]];
                        }
                    }
                }
                let t = 1 + gy * gw + gx;
                for d in 0..self.dim {
                    let row = &self.weight[d * flat..(d + 1) * flat];
                    tokens[[t, d]] =
                        self.bias[d] + row.iter().zip(&buf).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        if let Some(pos) = &self.position {
            for t in 0..tokens.nrows() {
                for d in 0..self.dim {
                    tokens[[t, d]] += pos[t * self.dim + d];
                }
            }
        }
        tokens
    }
}

/// Residual MLP block: `x + W_out act(W_in x + b_in) + b_out`, per token.
/// The hidden units are the block's neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpBlock {
    pub name: String,
    pub dim: usize,
    pub hidden: usize,
    #[serde(default = "gelu")]
    pub activation: Nonlinearity,
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

fn gelu() -> Nonlinearity {
    Nonlinearity::Gelu
}

impl MlpBlock {
    /// Returns `(pre-activation hidden, post-activation hidden, output)`.
    fn forward(&self, tokens: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let t = tokens.nrows();
        let mut pre = Array2::<f64>::zeros((t, self.hidden));
        for i in 0..t {
            let x = tokens.row(i);
            for j in 0..self.hidden {
                let row = &self.w_in[j * self.dim..(j + 1) * self.dim];
                pre[[i, j]] = self.b_in[j] + row.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let act = self.activation;
        let post = pre.mapv(|v| act.apply(v));
        let mut out = tokens.clone();
        for i in 0..t {
            for d in 0..self.dim {
                let row = &self.w_out[d * self.hidden..(d + 1) * self.hidden];
                out[[i, d]] += self.b_out[d]
                    + row.iter().zip(post.row(i).iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        (pre, post, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    PatchEmbed(PatchEmbed),
    MlpBlock(MlpBlock),
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv2d(l) => &l.name,
            Layer::MaxPool2d(l) => &l.name,
            Layer::PatchEmbed(l) => &l.name,
            Layer::MlpBlock(l) => &l.name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    #[default]
    Max,
    Mean,
    /// Transformer only: the class token (index 0).
    ClassToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Linear {
        classes: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Mlp {
        classes: usize,
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub name: String,
    #[serde(default)]
    pub pool: Pool,
    #[serde(flatten)]
    pub kind: HeadKind,
}

impl Head {
    pub fn classes(&self) -> usize {
        match &self.kind {
            HeadKind::Linear { classes, .. } | HeadKind::Mlp { classes, .. } => *classes,
        }
    }

    fn forward(&self, features: &[f64]) -> Vec<f64> {
        let dense = |w: &[f64], b: &[f64], x: &[f64]| -> Vec<f64> {
            b.iter()
                .enumerate()
                .map(|(o, bias)| {
                    bias + w[o * x.len()..(o + 1) * x.len()]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .collect()
        };
        match &self.kind {
            HeadKind::Linear { weight, bias, .. } => dense(weight, bias, features),
            HeadKind::Mlp { w1, b1, w2, b2, .. } => {
                let hidden: Vec<f64> = dense(w1, b1, features).into_iter().map(|v| v.max(0.0)).collect();
                dense(w2, b2, &hidden)
            }
        }
    }
}

/// Layer stack plus classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub layers: Vec<Layer>,
    pub head: Head,
}

/// Intermediate value flowing between layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    /// `(channels, height, width)`
    Map(Array3<f64>),
    /// `(tokens, dim)`
    Tokens(Array2<f64>),
}

/// Which value of a unit layer is observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActivationSite {
    #[default]
    Post,
    Pre,
}

fn shape_err(expected: impl Into<String>, actual: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        expected: expected.into(),
        actual: actual.into(),
    }
}

impl NetworkWeights {
    /// Checks tensor sizes against the input shape `(H, W, C)` and returns
    /// the feature dimension reaching the head.
    pub fn validate(&self, input: (usize, usize, usize)) -> Result<usize> {
        let (mut h, mut w, c) = input;
        let mut channels = c;
        let mut token_dim: Option<(usize, usize)> = None;
        let mut names = std::collections::HashSet::new();
        let bad = |msg: String| Error::InvalidModel(msg);
        for layer in &self.layers {
            if !names.insert(layer.name().to_string()) {
                return Err(bad(format!("duplicate layer name {:?}", layer.name())));
            }
            match layer {
                Layer::Conv2d(l) => {
                    if token_dim.is_some() {
                        return Err(bad(format!("conv layer {} after tokenization", l.name)));
                    }
                    if l.in_channels != channels {
                        return Err(bad(format!(
                            "{}: expects {} input channels, got {channels}",
                            l.name, l.in_channels
                        )));
                    }
                    if l.out_channels == 0
                        || l.weight.len() != l.out_channels * l.filter_len()
                        || l.bias.len() != l.out_channels
                    {
                        return Err(bad(format!("{}: weight/bias sizes inconsistent", l.name)));
                    }
                    (h, w) = l
                        .output_dims(h, w)
                        .ok_or_else(|| bad(format!("{}: kernel larger than input", l.name)))?;
                    channels = l.out_channels;
                }
                Layer::MaxPool2d(l) => {
                    if token_dim.is_some() {
                        return Err(bad(format!("pool layer {} after tokenization", l.name)));
                    }
                    (h, w) = l
                        .output_dims(h, w)
                        .ok_or_else(|| bad(format!("{}: window larger than input", l.name)))?;
                }
                Layer::PatchEmbed(l) => {
                    if token_dim.is_some() {
                        return Err(bad(format!("second patch embedding {}", l.name)));
                    }
                    if l.patch == 0 || h % l.patch != 0 || w % l.patch != 0 {
                        return Err(bad(format!("{}: patch size must divide {h}x{w}", l.name)));
                    }
                    if l.channels != channels
                        || l.weight.len() != l.dim * channels * l.patch * l.patch
                        || l.bias.len() != l.dim
                        || l.class_token.len() != l.dim
                    {
                        return Err(bad(format!("{}: weight sizes inconsistent", l.name)));
                    }
                    let t = l.token_count(h, w);
                    if let Some(pos) = &l.position {
                        if pos.len() != t * l.dim {
                            return Err(bad(format!("{}: position table size", l.name)));
                        }
                    }
                    token_dim = Some((t, l.dim));
                }
                Layer::MlpBlock(l) => {
                    let Some((_, d)) = token_dim else {
                        return Err(bad(format!("{}: mlp block before patch embedding", l.name)));
                    };
                    if l.dim != d
                        || l.hidden == 0
                        || l.w_in.len() != l.hidden * l.dim
                        || l.b_in.len() != l.hidden
                        || l.w_out.len() != l.dim * l.hidden
                        || l.b_out.len() != l.dim
                    {
                        return Err(bad(format!("{}: weight sizes inconsistent", l.name)));
                    }
                    if l.activation.apply(0.0) != 0.0 {
                        return Err(bad(format!(
                            "{}: nonlinearity {:?} is nonzero at 0; unit ablation requires act(0) = 0",
                            l.name, l.activation
                        )));
                    }
                }
            }
        }
        let features = match token_dim {
            Some((_, d)) => d,
            None => {
                if self.head.pool == Pool::ClassToken {
                    return Err(bad("class-token pooling requires a transformer".into()));
                }
                channels
            }
        };
        let classes = self.head.classes();
        if classes < 2 {
            return Err(bad("classifier head needs at least 2 classes".into()));
        }
        let ok = match &self.head.kind {
            HeadKind::Linear { weight, bias, .. } => {
                weight.len() == classes * features && bias.len() == classes
            }
            HeadKind::Mlp { hidden, w1, b1, w2, b2, .. } => {
                w1.len() == hidden * features
                    && b1.len() == *hidden
                    && w2.len() == classes * hidden
                    && b2.len() == classes
            }
        };
        if !ok {
            return Err(bad(format!("head {}: weight sizes inconsistent", self.head.name)));
        }
        Ok(features)
    }

    /// Runs the network on a preprocessed `(C, H, W)` input.
    ///
    /// When `capture` names a layer index, that layer's unit values are
    /// returned as well; with `stop_at_capture` the head is skipped and the
    /// returned logits are empty.
    pub fn forward(
        &self,
        input: Array3<f64>,
        capture: Option<(usize, ActivationSite)>,
        stop_at_capture: bool,
    ) -> (Vec<f64>, Option<Features>) {
        let mut state = Features::Map(input);
        let mut captured = None;
        for (idx, layer) in self.layers.iter().enumerate() {
            let want = capture.filter(|(i, _)| *i == idx).map(|(_, site)| site);
            state = match (layer, state) {
                (Layer::Conv2d(l), Features::Map(x)) => {
                    let (pre, post) = l.forward(&x);
                    match want {
                        Some(ActivationSite::Pre) => captured = Some(Features::Map(pre)),
                        Some(ActivationSite::Post) => captured = Some(Features::Map(post.clone())),
                        None => {}
                    }
                    Features::Map(post)
                }
                (Layer::MaxPool2d(l), Features::Map(x)) => Features::Map(l.forward(&x)),
                (Layer::PatchEmbed(l), Features::Map(x)) => Features::Tokens(l.forward(&x)),
                (Layer::MlpBlock(l), Features::Tokens(x)) => {
                    let (pre, post, out) = l.forward(&x);
                    match want {
                        Some(ActivationSite::Pre) => captured = Some(Features::Tokens(pre)),
                        Some(ActivationSite::Post) => captured = Some(Features::Tokens(post)),
                        None => {}
                    }
                    Features::Tokens(out)
                }
                _ => unreachable!("layer order validated at load"),
            };
            if stop_at_capture && captured.is_some() {
                return (Vec::new(), captured);
            }
        }
        let pooled: Vec<f64> = match (&state, self.head.pool) {
            (Features::Map(x), Pool::Max) => x
                .axis_iter(Axis(0))
                .map(|ch| ch.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            (Features::Map(x), _) => x
                .axis_iter(Axis(0))
                .map(|ch| ch.iter().sum::<f64>() / ch.len() as f64)
                .collect(),
            (Features::Tokens(t), Pool::Max) => t
                .axis_iter(Axis(1))
                .map(|col| col.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            (Features::Tokens(t), Pool::Mean) => t
                .axis_iter(Axis(1))
                .map(|col| col.iter().sum::<f64>() / col.len() as f64)
                .collect(),
            (Features::Tokens(t), Pool::ClassToken) => t.row(0).to_vec(),
        };
        (self.head.forward(&pooled), captured)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

pub(crate) fn check_shape(expected: (usize, usize, usize), actual: (usize, usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(shape_err(format!("{expected:?}"), format!("{actual:?}")));
    }
    Ok(())
}

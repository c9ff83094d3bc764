use std::time::Duration;

use base64::Engine;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    PretrainedVlm,
    Mock,
}

/// A vision-language model mapping images and texts into one space.
///
/// Implementations return raw vectors; [`embed_text`] and [`embed_image`]
/// validate inputs and normalize to unit length.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn kind(&self) -> EmbedderKind;
    fn raw_text(&self, text: &str) -> Result<Vec<f64>>;
    fn raw_image(&self, pixels: &Array3<f64>) -> Result<Vec<f64>>;
}

fn unit_norm(embedder: &dyn Embedder, v: Vec<f64>) -> Result<Vec<f64>> {
    if v.len() != embedder.dim() {
        return Err(Error::Embedder(format!(
            "{} returned {} values, expected {}",
            embedder.model_id(),
            v.len(),
            embedder.dim()
        )));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Embedder(format!("{} returned a zero or non-finite vector", embedder.model_id())));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

pub fn embed_text(embedder: &dyn Embedder, text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Err(Error::Embedder("cannot embed empty text".into()));
    }
    let raw = embedder.raw_text(text)?;
    unit_norm(embedder, raw)
}

pub fn embed_image(embedder: &dyn Embedder, pixels: &Array3<f64>) -> Result<Vec<f64>> {
    if pixels.is_empty() {
        return Err(Error::Embedder("cannot embed an empty image".into()));
    }
    if pixels.iter().any(|v| !v.is_finite()) {
        return Err(Error::Embedder("image has non-finite pixels".into()));
    }
    let raw = embedder.raw_image(pixels)?;
    unit_norm(embedder, raw)
}

/// Cosine of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// `φ(patch, text)`.
pub fn similarity(embedder: &dyn Embedder, pixels: &Array3<f64>, text: &str) -> Result<f64> {
    Ok(cosine(&embed_image(embedder, pixels)?, &embed_text(embedder, text)?))
}

pub const ENV_EMBEDDER_URL: &str = "NEURON_EXPLAIN_EMBEDDER_URL";
pub const ENV_EMBEDDER_MODEL: &str = "NEURON_EXPLAIN_EMBEDDER_MODEL";
pub const ENV_EMBEDDER_DIM: &str = "NEURON_EXPLAIN_EMBEDDER_DIM";

/// Client for an embedding service hosting a pretrained vision-language
/// model.
///
/// Requests are `POST <endpoint>` with `{"model", "texts": [..]}` or
/// `{"model", "images": [base64 PNG, ..]}`; the reply is
/// `{"embeddings": [[..], ..]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    timeout: Duration,
}

#[derive(Deserialize)]
struct EmbeddingReply {
    embeddings: Vec<Vec<f64>>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        HttpEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            dim,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENV_EMBEDDER_URL)
            .map_err(|_| Error::InvalidParameter(format!("{ENV_EMBEDDER_URL} is not set")))?;
        let model = std::env::var(ENV_EMBEDDER_MODEL).unwrap_or_else(|_| "ViT-B/32".into());
        let dim = match std::env::var(ENV_EMBEDDER_DIM) {
            Ok(v) => v
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{ENV_EMBEDDER_DIM} must be an integer")))?,
            Err(_) => 512,
        };
        Ok(Self::new(endpoint, model, dim))
    }

    fn request(&self, body: serde_json::Value) -> Result<Vec<f64>> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut resp = agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| Error::Embedder(format!("{}: {e}", self.endpoint)))?;
        let reply: EmbeddingReply = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Embedder(format!("{}: {e}", self.endpoint)))?;
        reply
            .embeddings
            .into_iter()
            .next()
            .ok_or_else(|| Error::Embedder("empty embeddings reply".into()))
    }
}

impl Embedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> EmbedderKind {
        EmbedderKind::PretrainedVlm
    }

    fn raw_text(&self, text: &str) -> Result<Vec<f64>> {
        self.request(serde_json::json!({ "model": self.model, "texts": [text] }))
    }

    fn raw_image(&self, pixels: &Array3<f64>) -> Result<Vec<f64>> {
        let png = crate::data::encode_png(pixels)?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(png);
        self.request(serde_json::json!({ "model": self.model, "images": [b64] }))
    }
}

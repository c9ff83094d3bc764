use ndarray::Array3;

use super::planted::{color_concept, PALETTE};
use crate::error::{Error, Result};
use crate::matcher::{Embedder, EmbedderKind};
use crate::vocab::normalize_key;

/// Response added on a dedicated axis so an image with no detector response
/// still has a direction, orthogonal to every text.
const NULL_RESPONSE: f64 = 1e-3;

/// Table-driven stand-in for a vision-language embedder.
///
/// Each table entry pairs a concept key with a linear detector over the
/// mean pixel, centered on gray: `r_i = <u_i, mean(x) − 0.5>` with `u_i`
/// unit length. Texts map to basis vectors; unknown texts share one extra
/// axis that no image ever touches.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    keys: Vec<String>,
    detectors: Vec<[f64; 3]>,
}

impl MockEmbedder {
    pub fn new(table: Vec<(String, [f64; 3])>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::InvalidParameter("mock embedder table is empty".into()));
        }
        let mut keys = Vec::with_capacity(table.len());
        let mut detectors = Vec::with_capacity(table.len());
        for (text, d) in table {
            let key = normalize_key(&text);
            if keys.contains(&key) {
                return Err(Error::InvalidParameter(format!("duplicate mock concept {key:?}")));
            }
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::InvalidParameter(format!("detector for {key:?} is degenerate")));
            }
            keys.push(key);
            detectors.push(d.map(|v| v / norm));
        }
        Ok(MockEmbedder { keys, detectors })
    }

    /// One `"<color> square"` detector per palette color plus `bright` and
    /// `dark`.
    pub fn palette() -> Self {
        let mut table: Vec<(String, [f64; 3])> = PALETTE
            .iter()
            .map(|(name, c)| (color_concept(name), c.map(|v| 2.0 * v - 1.0)))
            .collect();
        table.push(("bright".into(), [1.0, 1.0, 1.0]));
        table.push(("dark".into(), [-1.0, -1.0, -1.0]));
        Self::new(table).expect("static table")
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    fn unknown_axis(&self) -> usize {
        self.keys.len()
    }
}

pub fn mock_embedder(table: Vec<(String, [f64; 3])>) -> Result<MockEmbedder> {
    MockEmbedder::new(table)
}

impl Embedder for MockEmbedder {
    fn model_id(&self) -> &str {
        "mock-color"
    }

    fn dim(&self) -> usize {
        self.keys.len() + 2
    }

    fn kind(&self) -> EmbedderKind {
        EmbedderKind::Mock
    }

    fn raw_text(&self, text: &str) -> Result<Vec<f64>> {
        let key = normalize_key(text);
        let axis = self.keys.iter().position(|k| *k == key).unwrap_or(self.unknown_axis());
        let mut v = vec![0.0; self.dim()];
        v[axis] = 1.0;
        Ok(v)
    }

    fn raw_image(&self, pixels: &Array3<f64>) -> Result<Vec<f64>> {
        let (h, w, c) = pixels.dim();
        if c != 3 {
            return Err(Error::Embedder(format!("mock embedder needs RGB, got {c} channels")));
        }
        let n = (h * w) as f64;
        let mut centered = [0.0; 3];
        for (ch, slot) in centered.iter_mut().enumerate() {
            *slot = pixels.slice(ndarray::s![.., .., ch]).sum() / n - 0.5;
        }
        let mut v: Vec<f64> = self
            .detectors
            .iter()
            .map(|u| u.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect();
        v.push(0.0);
        v.push(NULL_RESPONSE);
        Ok(v)
    }
}

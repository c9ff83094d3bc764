use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::ActivationSite;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Conv,
    Transformer,
    Synthetic,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(Architecture::Conv),
            "transformer" => Ok(Architecture::Transformer),
            "synthetic" => Ok(Architecture::Synthetic),
            other => Err(Error::UnsupportedArchitecture(other.to_string())),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Conv => "conv",
            Architecture::Transformer => "transformer",
            Architecture::Synthetic => "synthetic",
        })
    }
}

/// How a unit's feature map is reduced to one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Max,
    Mean,
}

/// Input preprocessing applied before the first layer: optional bilinear
/// resize to the declared input shape, then `(x - mean[c]) / std[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Preprocessing {
    #[serde(default)]
    pub resize: bool,
    /// Per-channel; empty means 0.
    #[serde(default)]
    pub mean: Vec<f64>,
    /// Per-channel; empty means 1.
    #[serde(default)]
    pub std: Vec<f64>,
}

impl Preprocessing {
    pub fn identity() -> Self {
        Preprocessing::default()
    }
}

fn default_name() -> String {
    "model".into()
}

/// The JSON model-spec record. `weight_source` is a weights file path,
/// relative to the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub architecture: Architecture,
    pub weight_source: String,
    pub input_shape: [usize; 3],
    #[serde(default)]
    pub preprocessing: Preprocessing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_layer_name: Option<String>,
    /// Named aliases such as `last_conv` mapping to catalog layer names.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub layer_aliases: BTreeMap<String, String>,
    #[serde(default)]
    pub activation_site: ActivationSite,
    #[serde(default)]
    pub aggregator: Aggregator,
}

impl ModelSpec {
    /// Parses a spec, reporting an unknown architecture tag before any other
    /// schema problem.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("architecture").and_then(|v| v.as_str()) {
            Some(tag) => {
                tag.parse::<Architecture>()?;
            }
            None => return Err(Error::InvalidModel("model spec lacks an architecture tag".into())),
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        let [h, w, c] = self.input_shape;
        (h, w, c)
    }
}

use std::path::{Path, PathBuf};

use anyhow::Context;
use neuron_explain::ablation::EvalSubset;
use neuron_explain::matcher::{MatchParams, PatchRender};
use neuron_explain::patches::{Fill, PatchParams};
use neuron_explain::vocab::LlmMode;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderChoice {
    /// Table-driven color embedder from the testbed.
    #[default]
    Mock,
    /// Embedding service named by NEURON_EXPLAIN_EMBEDDER_URL.
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Selection {
    /// Layer name, alias or glob over layer names. Final layer if unset.
    pub layer: Option<String>,
    /// Unit indices. Every unit of the selected layers if unset.
    pub units: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchSettings {
    pub top_m: usize,
    pub embedder: EmbedderChoice,
    pub prompt_wrapper: Option<String>,
    pub render: PatchRender,
}

impl Default for MatchSettings {
    fn default() -> Self {
        let p = MatchParams::default();
        MatchSettings { top_m: p.top_m, embedder: EmbedderChoice::Mock, prompt_wrapper: None, render: p.render }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    /// Images per class; the whole corpus when `full` is set.
    pub per_class: usize,
    pub full: bool,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings { per_class: 50, full: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSettings {
    pub mode: LlmMode,
    pub fixtures: Option<PathBuf>,
    pub dataset_tag: String,
    pub include_class_names: bool,
    pub max_descriptors: usize,
    pub max_concurrency: usize,
}

impl Default for VocabSettings {
    fn default() -> Self {
        VocabSettings {
            mode: LlmMode::Fixture,
            fixtures: None,
            dataset_tag: String::new(),
            include_class_names: false,
            max_descriptors: 20,
            max_concurrency: 4,
        }
    }
}

/// Everything a run needs. Sources, lowest precedence first: defaults,
/// the config file, command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model_spec: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: PathBuf,
    pub cache: Option<PathBuf>,
    pub seed: u64,
    /// Leave wall-clock values out of written artifacts.
    pub canonical: bool,
    pub selection: Selection,
    pub patch: PatchParams,
    pub matching: MatchSettings,
    pub ablation: AblationSettings,
    pub vocab_build: VocabSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model_spec: None,
            corpus: None,
            vocab: None,
            out: PathBuf::from("out"),
            cache: None,
            seed: 0,
            canonical: false,
            selection: Selection::default(),
            patch: PatchParams::default(),
            matching: MatchSettings::default(),
            ablation: AblationSettings::default(),
            vocab_build: VocabSettings::default(),
        }
    }
}

/// Flag values; `None` leaves the file or default value alone.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model_spec: Option<PathBuf>,
    /// Corpus manifest (JSONL).
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Vocabulary file; the output path for build-vocab.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Layer name, alias or glob.
    #[arg(long, global = true)]
    pub layer: Option<String>,
    /// Unit list such as `0,2,5-7`.
    #[arg(long, global = true, value_parser = parse_units)]
    pub units: Option<UnitList>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub occluder_size: Option<usize>,
    #[arg(long, global = true)]
    pub stride: Option<usize>,
    #[arg(long, global = true)]
    pub percentile: Option<f64>,
    #[arg(long, global = true, value_parser = parse_fill)]
    pub fill: Option<Fill>,
    #[arg(long, global = true)]
    pub top_m: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub embedder: Option<EmbedderChoice>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory of recorded LLM replies, one `<class>.txt` per class.
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    #[arg(long, global = true)]
    pub canonical: bool,
    /// Evaluate ablations on the full corpus instead of a per-class sample.
    #[arg(long, global = true)]
    pub full_eval: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitList(pub Vec<usize>);

pub fn parse_units(s: &str) -> Result<UnitList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| format!("bad unit range {part:?}"))?;
                let b: usize = b.trim().parse().map_err(|_| format!("bad unit range {part:?}"))?;
                if a > b {
                    return Err(format!("empty unit range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad unit {part:?}"))?),
        }
    }
    if out.is_empty() {
        return Err("empty unit list".into());
    }
    Ok(UnitList(out))
}

fn parse_fill(s: &str) -> Result<Fill, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown fill {s:?} (gray, mean-pixel, zero)"))
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths inside it are taken relative to
    /// the file.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.model_spec);
        resolve(base, &mut cfg.corpus);
        resolve(base, &mut cfg.vocab);
        resolve(base, &mut cfg.cache);
        resolve(base, &mut cfg.vocab_build.fixtures);
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn from_args(args: &ConfigArgs) -> anyhow::Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(args);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, a: &ConfigArgs) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v.into();
                }
            };
        }
        set!(a.model_spec => self.model_spec);
        set!(a.corpus => self.corpus);
        set!(a.vocab => self.vocab);
        set!(a.layer => self.selection.layer);
        if let Some(u) = &a.units {
            self.selection.units = Some(u.0.clone());
        }
        set!(a.k => self.patch.k);
        set!(a.occluder_size => self.patch.occluder_size);
        set!(a.stride => self.patch.stride);
        set!(a.percentile => self.patch.percentile);
        set!(a.fill => self.patch.fill);
        set!(a.top_m => self.matching.top_m);
        set!(a.embedder => self.matching.embedder);
        set!(a.out => self.out);
        set!(a.cache => self.cache);
        set!(a.seed => self.seed);
        set!(a.fixtures => self.vocab_build.fixtures);
        if a.fixtures.is_some() {
            self.vocab_build.mode = LlmMode::Fixture;
        }
        self.canonical |= a.canonical;
        self.ablation.full |= a.full_eval;
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.patch.validate().map_err(|e| UsageError(e.to_string()))?;
        if self.matching.top_m == 0 {
            return Err(UsageError("top-m must be at least 1".into()).into());
        }
        if self.ablation.per_class == 0 && !self.ablation.full {
            return Err(UsageError("ablation per_class must be at least 1".into()).into());
        }
        Ok(())
    }

    pub fn match_params(&self, embedder_id: &str) -> MatchParams {
        MatchParams {
            top_m: self.matching.top_m,
            embedder_id: embedder_id.to_string(),
            prompt_wrapper: self.matching.prompt_wrapper.clone(),
            render: self.matching.render,
        }
    }

    pub fn eval_subset(&self) -> EvalSubset {
        if self.ablation.full {
            EvalSubset::Full
        } else {
            EvalSubset::Stratified { per_class: self.ablation.per_class, seed: self.seed }
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
        let p = value
            .as_deref()
            .ok_or_else(|| UsageError(format!("--{flag} is required")))?;
        if !p.exists() {
            return Err(UsageError(format!("--{flag}: {} does not exist", p.display())).into());
        }
        Ok(p)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("serializing config")
    }
}

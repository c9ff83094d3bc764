use std::path::{Path, PathBuf};
use std::time::Instant;

use neuron_explain::{fsutil, Cache};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHashes {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Wall time; omitted in canonical runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    pub cache_hits: usize,
    pub cache_misses: usize,
    /// Every cached lookup hit, nothing was recomputed.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Completion {
    Complete,
    Failed { failures: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub hashes: ArtifactHashes,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<PathBuf>,
    pub completion: Completion,
}

impl RunRecord {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunRecord {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
            hashes: ArtifactHashes::default(),
            stages: Vec::new(),
            outputs: Vec::new(),
            completion: Completion::Complete,
        }
    }

    /// Runs `f` as a named stage, recording wall time and the cache
    /// traffic it caused.
    pub fn stage<T>(&mut self, name: &str, cache: &Cache, f: impl FnOnce() -> T) -> T {
        let (h0, m0) = (cache.hits(), cache.misses());
        let start = Instant::now();
        let out = f();
        let seconds = (!self.config.canonical).then(|| start.elapsed().as_secs_f64());
        let (hits, misses) = (cache.hits() - h0, cache.misses() - m0);
        match self.stages.iter_mut().find(|s| s.stage == name) {
            Some(s) => {
                s.seconds = match (s.seconds, seconds) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                };
                s.cache_hits += hits;
                s.cache_misses += misses;
                s.skipped = s.skipped && misses == 0 && hits > 0;
            }
            None => self.stages.push(StageRecord {
                stage: name.into(),
                seconds,
                cache_hits: hits,
                cache_misses: misses,
                skipped: misses == 0 && hits > 0,
            }),
        }
        out
    }

    pub fn fail(&mut self, item: String) {
        log::error!("{item}");
        match &mut self.completion {
            Completion::Complete => self.completion = Completion::Failed { failures: vec![item] },
            Completion::Failed { failures } => failures.push(item),
        }
    }

    pub fn failures(&self) -> &[String] {
        match &self.completion {
            Completion::Complete => &[],
            Completion::Failed { failures } => failures,
        }
    }

    pub fn path_in(out: &Path, command: &str) -> PathBuf {
        out.join("runs").join(format!("{command}.json"))
    }

    /// Written once, atomically, at the end of the run.
    pub fn write(&self) -> neuron_explain::Result<PathBuf> {
        let path = Self::path_in(&self.config.out, &self.command);
        fsutil::write_json(&path, self)?;
        Ok(path)
    }
}

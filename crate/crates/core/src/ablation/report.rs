use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::accuracy::{category_accuracy_on, CategoryAccuracy, EvalSet};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::matcher::Explanation;
use crate::model::{LayerId, ModelHandle, NeuronKey, NeuronRef};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxDrop {
    pub class: usize,
    pub value: f64,
}

/// Accuracy change from ablating one unit. Drops are signed absolute
/// points, `baseline − ablated`; `None` for classes absent from the
/// evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub neuron: NeuronKey,
    pub baseline: CategoryAccuracy,
    pub ablated: CategoryAccuracy,
    pub drops: Vec<Option<f64>>,
    pub max_drop: MaxDrop,
}

impl AblationReport {
    pub fn from_accuracies(neuron: NeuronKey, baseline: CategoryAccuracy, ablated: CategoryAccuracy) -> Result<Self> {
        let drops: Vec<Option<f64>> = baseline
            .per_class
            .iter()
            .zip(&ablated.per_class)
            .map(|(b, a)| match (b, a) {
                (Some(b), Some(a)) => Some(b - a),
                _ => None,
            })
            .collect();
        let mut max_drop: Option<MaxDrop> = None;
        for (class, d) in drops.iter().enumerate() {
            if let Some(value) = *d {
                if max_drop.map_or(true, |m| value > m.value) {
                    max_drop = Some(MaxDrop { class, value });
                }
            }
        }
        let max_drop = max_drop.ok_or(Error::Unlabeled)?;
        Ok(AblationReport { neuron, baseline, ablated, drops, max_drop })
    }

    pub fn path_for(root: &Path, model: &str, neuron: &NeuronKey) -> std::path::PathBuf {
        root.join("ablation")
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

/// Ablates `neuron` against a precomputed baseline. The model is restored
/// before returning, also on error.
pub fn ablation_report_with_baseline(
    model: &mut ModelHandle,
    neuron: &NeuronRef,
    eval: &EvalSet,
    baseline: &CategoryAccuracy,
) -> Result<AblationReport> {
    let ablated = model.with_ablation(neuron, |m| category_accuracy_on(m, eval))?;
    AblationReport::from_accuracies(neuron.key(), baseline.clone(), ablated)
}

pub fn ablation_report(model: &mut ModelHandle, neuron: &NeuronRef, eval: &EvalSet) -> Result<AblationReport> {
    let baseline = category_accuracy_on(model, eval)?;
    ablation_report_with_baseline(model, neuron, eval, &baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub unit: usize,
    pub max_drop: f64,
    pub argmax_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDropRanking {
    pub layer: LayerId,
    pub entries: Vec<RankEntry>,
}

impl LayerDropRanking {
    /// Sorted by max-drop descending, unit index ascending on ties.
    pub fn from_reports(layer: LayerId, reports: &[AblationReport]) -> Self {
        let mut entries: Vec<RankEntry> = reports
            .iter()
            .map(|r| RankEntry { unit: r.neuron.unit, max_drop: r.max_drop.value, argmax_class: r.max_drop.class })
            .collect();
        entries.sort_by(|a, b| b.max_drop.total_cmp(&a.max_drop).then(a.unit.cmp(&b.unit)));
        LayerDropRanking { layer, entries }
    }

    pub fn truncated(&self, n: usize) -> Self {
        LayerDropRanking { layer: self.layer.clone(), entries: self.entries.iter().take(n).cloned().collect() }
    }

    pub fn position(&self, unit: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.unit == unit)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["unit", "max_drop", "argmax_class"])?;
        for e in &self.entries {
            w.write_record([e.unit.to_string(), e.max_drop.to_string(), e.argmax_class.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        fsutil::write_atomic(path, &bytes)
    }

    pub fn read_csv(path: &Path, layer: LayerId) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let entries = r.deserialize().collect::<std::result::Result<Vec<RankEntry>, _>>()?;
        Ok(LayerDropRanking { layer, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        fsutil::read_json(path)
    }
}

/// Per-unit reports for `units` (all units of the layer when `None`) with
/// one shared baseline. Units run in parallel, each worker on its own
/// clone of the model. Reports come back in unit order.
pub fn layer_ablation(
    model: &ModelHandle,
    layer: &LayerId,
    eval: &EvalSet,
    units: Option<&[usize]>,
) -> Result<Vec<AblationReport>> {
    let mut units: Vec<usize> = match units {
        Some(u) => u.to_vec(),
        None => (0..layer.unit_count).collect(),
    };
    units.sort_unstable();
    units.dedup();
    let neurons = units
        .iter()
        .map(|&u| model.neuron(&layer.name, u))
        .collect::<Result<Vec<_>>>()?;
    let baseline = category_accuracy_on(model, eval)?;
    neurons
        .par_iter()
        .map_init(|| model.clone(), |m, n| ablation_report_with_baseline(m, n, eval, &baseline))
        .collect()
}

pub fn layer_drop_ranking(
    model: &ModelHandle,
    layer: &LayerId,
    eval: &EvalSet,
    units: Option<&[usize]>,
) -> Result<LayerDropRanking> {
    Ok(LayerDropRanking::from_reports(layer.clone(), &layer_ablation(model, layer, eval, units)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitWeight {
    pub unit: usize,
    pub weight: f64,
}

/// Final-layer units with the largest head weight for `class`, ties by
/// unit index. `top_n` beyond the layer width is clamped.
pub fn category_units(model: &ModelHandle, class: usize, top_n: usize) -> Result<Vec<UnitWeight>> {
    if top_n == 0 {
        return Err(Error::InvalidParameter("top-n must be at least 1".into()));
    }
    let weights = model.classifier_head_weights(class)?;
    if top_n > weights.len() {
        log::warn!("top-n {top_n} exceeds the layer width {}; clamping", weights.len());
    }
    let mut units: Vec<UnitWeight> =
        weights.into_iter().enumerate().map(|(unit, weight)| UnitWeight { unit, weight }).collect();
    units.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.unit.cmp(&b.unit)));
    units.truncate(top_n);
    Ok(units)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedEntry {
    pub unit: usize,
    pub max_drop: f64,
    pub argmax_class: usize,
    /// Top-m concepts, `None` when the unit has no explanation file.
    pub concepts: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedReport {
    pub layer: String,
    pub entries: Vec<JoinedEntry>,
    pub missing: Vec<usize>,
}

/// Annotates ranking entries with the explanations found under
/// `root/explanations/<model>/<layer>/`.
pub fn importance_explanation_join(ranking: &LayerDropRanking, root: &Path, model: &str) -> Result<JoinedReport> {
    let mut entries = Vec::with_capacity(ranking.entries.len());
    let mut missing = Vec::new();
    for e in &ranking.entries {
        let key = NeuronKey { layer: ranking.layer.name.clone(), unit: e.unit };
        let path = Explanation::path_for(root, model, &key);
        let concepts = if path.exists() {
            let ex = Explanation::load(&path)?;
            Some(ex.top_texts().into_iter().map(String::from).collect())
        } else {
            log::warn!("no explanation for {}:{} at {}", key.layer, key.unit, path.display());
            missing.push(e.unit);
            None
        };
        entries.push(JoinedEntry { unit: e.unit, max_drop: e.max_drop, argmax_class: e.argmax_class, concepts });
    }
    Ok(JoinedReport { layer: ranking.layer.name.clone(), entries, missing })
}

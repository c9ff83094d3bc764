use std::path::{Path, PathBuf};

use anyhow::Context;
use neuron_explain::ablation::{
    category_units, drop_panels_svg, importance_explanation_join, layer_ablation, sorted_drop_svg, AblationReport,
    EvalSet, LayerDropRanking, UnitWeight,
};
use neuron_explain::matcher::{ConceptMatcher, Embedder, Explanation, HttpEmbedder};
use neuron_explain::patches::{extract_patches_in, PatchContext, PatchSet};
use neuron_explain::testbed::{make_planted_model, make_synthetic_corpus, MockEmbedder, PlantedSpec, BACKGROUND_CLASS};
use neuron_explain::vocab::{build_vocabulary, class_slug, BuildOptions, LlmClient, LlmMode, Vocabulary};
use neuron_explain::{fsutil, Cache, Corpus, LayerId, ModelHandle, NeuronRef};
use serde::Serialize;

use crate::config::{EmbedderChoice, RunConfig, Selection};
use crate::record::RunRecord;
use crate::report::write_report;
use crate::UsageError;

/// A finished command: its record, already written.
#[derive(Debug)]
pub struct Outcome {
    pub record: RunRecord,
    pub record_path: PathBuf,
}

impl Outcome {
    fn finish(record: RunRecord) -> anyhow::Result<Self> {
        let record_path = record.write()?;
        Ok(Outcome { record, record_path })
    }

    pub fn exit_code(&self) -> u8 {
        if self.record.failures().is_empty() {
            0
        } else {
            1
        }
    }
}

fn open_cache(cfg: &RunConfig) -> Cache {
    match &cfg.cache {
        Some(p) => Cache::new(p),
        None => Cache::disabled(),
    }
}

pub fn load_model(cfg: &RunConfig) -> anyhow::Result<ModelHandle> {
    let path = cfg.require(&cfg.model_spec, "model-spec")?;
    ModelHandle::load(path).with_context(|| format!("loading model {}", path.display()))
}

pub fn load_corpus(cfg: &RunConfig) -> anyhow::Result<Corpus> {
    let path = cfg.require(&cfg.corpus, "corpus")?;
    Corpus::load(path).with_context(|| format!("loading corpus {}", path.display()))
}

pub fn make_embedder(choice: EmbedderChoice) -> anyhow::Result<Box<dyn Embedder>> {
    Ok(match choice {
        EmbedderChoice::Mock => Box::new(MockEmbedder::palette()),
        EmbedderChoice::Http => Box::new(HttpEmbedder::from_env().map_err(|e| UsageError(e.to_string()))?),
    })
}

/// Neurons named by the selection, grouped by layer in catalog order.
pub fn select_neurons(model: &ModelHandle, sel: &Selection) -> anyhow::Result<Vec<NeuronRef>> {
    let layers: Vec<LayerId> = match &sel.layer {
        None => vec![model.final_layer().clone()],
        Some(name) => match model.layer(name) {
            Ok(l) => vec![l.clone()],
            Err(_) => {
                let pattern =
                    glob::Pattern::new(name).map_err(|e| UsageError(format!("bad layer pattern {name:?}: {e}")))?;
                model.layers().iter().filter(|l| pattern.matches(&l.name)).cloned().collect()
            }
        },
    };
    let mut neurons = Vec::new();
    for layer in &layers {
        match &sel.units {
            None => {
                for u in 0..layer.unit_count {
                    neurons.push(model.neuron(&layer.name, u)?);
                }
            }
            Some(units) => {
                for &u in units {
                    if u >= layer.unit_count {
                        return Err(UsageError(format!(
                            "unit {u} out of range for layer {} ({} units)",
                            layer.name, layer.unit_count
                        ))
                        .into());
                    }
                    neurons.push(model.neuron(&layer.name, u)?);
                }
            }
        }
    }
    if neurons.is_empty() {
        return Err(UsageError("no neurons selected".into()).into());
    }
    Ok(neurons)
}

fn group_by_layer(neurons: Vec<NeuronRef>) -> Vec<(LayerId, Vec<NeuronRef>)> {
    let mut groups: Vec<(LayerId, Vec<NeuronRef>)> = Vec::new();
    for n in neurons {
        match groups.iter_mut().find(|(l, _)| *l == n.layer) {
            Some((_, v)) => v.push(n),
            None => groups.push((n.layer.clone(), vec![n])),
        }
    }
    groups
}

pub fn build_vocab(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let corpus = load_corpus(cfg)?;
    let vs = &cfg.vocab_build;
    let mut client = match vs.mode {
        LlmMode::Fixture => {
            let dir = vs
                .fixtures
                .clone()
                .ok_or_else(|| UsageError("fixture mode needs --fixtures".into()))?;
            LlmClient::fixtures(dir)
        }
        LlmMode::Live | LlmMode::Record => {
            let mut c = LlmClient::from_env().map_err(|e| UsageError(e.to_string()))?;
            c.mode = vs.mode;
            c.fixture_dir = vs.fixtures.clone();
            c
        }
    };
    client.max_descriptors = vs.max_descriptors;
    let options = BuildOptions {
        dataset_tag: vs.dataset_tag.clone(),
        include_class_names: vs.include_class_names,
        max_concurrency: vs.max_concurrency,
        canonical: cfg.canonical,
    };
    let mut record = RunRecord::new("build-vocab", cfg);
    record.hashes.corpus = Some(corpus.content_id());
    let cache = Cache::disabled();
    let vocab = record.stage("vocabulary", &cache, || build_vocabulary(&client, corpus.class_names(), &options))?;
    let path = cfg.vocab.clone().unwrap_or_else(|| cfg.out.join("vocabulary.json"));
    vocab.save(&path)?;
    log::info!("{} concepts from {} classes -> {}", vocab.len(), corpus.class_count(), path.display());
    record.hashes.vocabulary = Some(vocab.content_hash());
    record.outputs.push(path);
    Outcome::finish(record)
}

pub fn explain(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let model = load_model(cfg)?;
    let neurons = select_neurons(&model, &cfg.selection)?;
    explain_neurons(cfg, &model, neurons, RunRecord::new("explain", cfg))
}

/// Patches and explanations for `neurons`. A failing neuron is recorded
/// and skipped.
pub fn explain_neurons(
    cfg: &RunConfig,
    model: &ModelHandle,
    neurons: Vec<NeuronRef>,
    mut record: RunRecord,
) -> anyhow::Result<Outcome> {
    let corpus = load_corpus(cfg)?;
    let vocab_path = cfg.require(&cfg.vocab, "vocab")?;
    let vocab = Vocabulary::load(vocab_path).with_context(|| format!("loading {}", vocab_path.display()))?;
    let embedder = make_embedder(cfg.matching.embedder)?;
    let matcher = ConceptMatcher::new(embedder.as_ref(), cfg.match_params(embedder.model_id()));
    let cache = open_cache(cfg);
    let model_name = model.spec().name.clone();
    record.hashes.model = Some(model.content_hash());
    record.hashes.corpus = Some(corpus.content_id());
    record.hashes.vocabulary = Some(vocab.content_hash());

    for (layer, group) in group_by_layer(neurons) {
        let ctx = record.stage("activations", &cache, || {
            PatchContext::prepare(model, &corpus, &layer, &cfg.patch, &cache)
        });
        let ctx = match ctx {
            Ok(c) => c,
            Err(e) => {
                for n in &group {
                    record.fail(format!("{n}: {e}"));
                }
                continue;
            }
        };
        for n in group {
            let patches = record.stage("patches", &cache, || {
                extract_patches_in(&ctx, model, &n, &corpus, &cfg.patch, &cache)
            });
            let result = patches.and_then(|ps| {
                ps.write(&PatchSet::dir_for(&cfg.out, &model_name, &ps.neuron))?;
                record.stage("matching", &cache, || matcher.explain(&ps, &vocab, cfg.matching.top_m))
            });
            match result {
                Ok(ex) => {
                    let path = Explanation::path_for(&cfg.out, &model_name, &ex.neuron);
                    ex.save(&path)?;
                    log::info!("{n}: {}", ex.top_texts().join(", "));
                    record.outputs.push(path);
                }
                Err(e) => record.fail(format!("{n}: {e}")),
            }
        }
    }
    record.outputs.push(write_report(&cfg.out)?);
    Outcome::finish(record)
}

pub fn ablation_dir(out: &Path, model: &str, layer: &str) -> PathBuf {
    out.join("ablation").join(fsutil::file_safe(model)).join(fsutil::file_safe(layer))
}

pub fn ablate(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let model = load_model(cfg)?;
    let corpus = load_corpus(cfg)?;
    let neurons = select_neurons(&model, &cfg.selection)?;
    let mut record = RunRecord::new("ablate", cfg);
    record.hashes.model = Some(model.content_hash());
    record.hashes.corpus = Some(corpus.content_id());
    let cache = Cache::disabled();
    let eval = EvalSet::prepare(&corpus, cfg.eval_subset())?;
    let model_name = model.spec().name.clone();

    for (layer, group) in group_by_layer(neurons) {
        let units: Vec<usize> = group.iter().map(|n| n.unit).collect();
        let reports = record.stage("ablation", &cache, || layer_ablation(&model, &layer, &eval, Some(&units)));
        let reports = match reports {
            Ok(r) => r,
            Err(e) => {
                record.fail(format!("layer {}: {e}", layer.name));
                continue;
            }
        };
        for r in &reports {
            let path = AblationReport::path_for(&cfg.out, &model_name, &r.neuron);
            r.save(&path)?;
            record.outputs.push(path);
        }
        let ranking = LayerDropRanking::from_reports(layer.clone(), &reports);
        let dir = ablation_dir(&cfg.out, &model_name, &layer.name);
        ranking.write_csv(&dir.join("ranking.csv"))?;
        ranking.save(&dir.join("ranking.json"))?;
        fsutil::write_atomic(&dir.join("sorted_drops.svg"), sorted_drop_svg(&ranking.truncated(256)).as_bytes())?;
        let joined = importance_explanation_join(&ranking, &cfg.out, &model_name)?;
        if joined.missing.len() < joined.entries.len() {
            fsutil::write_json(&dir.join("joined.json"), &joined)?;
            fsutil::write_atomic(&dir.join("panels.svg"), drop_panels_svg(&joined, &eval.class_names).as_bytes())?;
        }
        record.outputs.push(dir.join("ranking.csv"));
        for e in ranking.entries.iter().take(10) {
            log::info!(
                "{}:{} max drop {:.3} on {}",
                layer.name,
                e.unit,
                e.max_drop,
                eval.class_names.get(e.argmax_class).map(String::as_str).unwrap_or("?")
            );
        }
    }
    record.outputs.push(write_report(&cfg.out)?);
    Outcome::finish(record)
}

#[derive(Debug, Serialize)]
struct CategoryUnitsRecord<'a> {
    class: usize,
    class_name: Option<&'a str>,
    layer: &'a str,
    units: &'a [UnitWeight],
}

fn resolve_class(cfg: &RunConfig, class: &str, model: &ModelHandle) -> anyhow::Result<(usize, Option<String>)> {
    let names: Option<Vec<String>> = match &cfg.corpus {
        Some(_) => Some(load_corpus(cfg)?.class_names().to_vec()),
        None => None,
    };
    let index = match class.parse::<usize>() {
        Ok(i) => i,
        Err(_) => names
            .as_ref()
            .and_then(|n| n.iter().position(|c| c == class))
            .ok_or_else(|| UsageError(format!("unknown class {class:?}")))?,
    };
    if index >= model.class_count() {
        return Err(UsageError(format!("class {index} out of range ({} classes)", model.class_count())).into());
    }
    Ok((index, names.and_then(|n| n.get(index).cloned())))
}

pub fn category_units_cmd(
    cfg: &RunConfig,
    class: &str,
    top_n: usize,
    then_explain: bool,
) -> anyhow::Result<(Vec<UnitWeight>, Outcome)> {
    let model = load_model(cfg)?;
    let (index, name) = resolve_class(cfg, class, &model)?;
    let units = category_units(&model, index, top_n).map_err(|e| match e {
        neuron_explain::Error::InvalidParameter(m) => anyhow::Error::from(UsageError(m)),
        other => other.into(),
    })?;
    let layer = model.final_layer().clone();
    let model_name = model.spec().name.clone();
    let path = cfg
        .out
        .join("category_units")
        .join(fsutil::file_safe(&model_name))
        .join(format!("{index}.json"));
    fsutil::write_json(
        &path,
        &CategoryUnitsRecord { class: index, class_name: name.as_deref(), layer: &layer.name, units: &units },
    )?;
    let mut record = RunRecord::new("category-units", cfg);
    record.hashes.model = Some(model.content_hash());
    record.outputs.push(path);
    if then_explain {
        let neurons = units
            .iter()
            .map(|u| model.neuron(&layer.name, u.unit))
            .collect::<neuron_explain::Result<Vec<_>>>()?;
        let outcome = explain_neurons(cfg, &model, neurons, record)?;
        return Ok((units, outcome));
    }
    Ok((units, Outcome::finish(record)?))
}

pub fn report(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let mut record = RunRecord::new("report", cfg);
    record.outputs.push(write_report(&cfg.out)?);
    Outcome::finish(record)
}

#[derive(Debug, Clone)]
pub struct TestbedOptions {
    pub seed: u64,
    pub planted: usize,
    pub width: usize,
    pub n_per_class: usize,
    pub noise_level: f64,
}

fn fixture_reply(class: &str) -> String {
    if class == BACKGROUND_CLASS {
        return "Some features of a plain background:\n\n- dark\n- fine noise texture\n- no distinct object\n".into();
    }
    format!(
        "Here are some useful features for distinguishing a {class} in an image:\n\n\
         1. {class} square\n2. bright\n3. sharp corners\n4. small patch on a dark background\n"
    )
}

/// Writes a planted model, a synthetic corpus with ground truth, recorded
/// LLM replies and a `config.toml` tying them together. Returns the config
/// path.
pub fn write_testbed(dir: &Path, opts: &TestbedOptions) -> anyhow::Result<PathBuf> {
    let mut spec = PlantedSpec::random(opts.seed, opts.planted, opts.noise_level);
    spec.n_units = opts.width;
    let (model, _) = make_planted_model(&spec).map_err(|e| UsageError(e.to_string()))?;
    let spec_path = model.save(&dir.join("model"), "planted")?;
    make_synthetic_corpus(&spec, opts.n_per_class, Some(&dir.join("corpus")))?;
    for class in spec.class_names() {
        fsutil::write_atomic(
            &dir.join("fixtures").join(format!("{}.txt", class_slug(&class))),
            fixture_reply(&class).as_bytes(),
        )?;
    }
    let patch = spec.patch_params();
    let cfg = RunConfig {
        model_spec: Some(PathBuf::from("model").join(spec_path.file_name().expect("file name"))),
        corpus: Some(PathBuf::from("corpus/manifest.jsonl")),
        vocab: Some(PathBuf::from("vocabulary.json")),
        out: PathBuf::from("out"),
        cache: Some(PathBuf::from("cache")),
        seed: opts.seed,
        canonical: true,
        selection: Selection { layer: Some("last_conv".into()), units: None },
        patch: neuron_explain::patches::PatchParams { k: opts.n_per_class, ..patch },
        ablation: crate::config::AblationSettings { per_class: opts.n_per_class, full: false },
        vocab_build: crate::config::VocabSettings {
            fixtures: Some(PathBuf::from("fixtures")),
            dataset_tag: "planted-testbed".into(),
            ..Default::default()
        },
        ..Default::default()
    };
    let path = dir.join("config.toml");
    fsutil::write_atomic(&path, cfg.to_toml()?.as_bytes())?;
    Ok(path)
}

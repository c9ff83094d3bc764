//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails. Every criterion runs against the
//! planted-detector testbed except the real-model check, which needs
//! pretrained weights and is reported as skipped.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use neuron_explain::ablation::{
    ablation_report, category_accuracy_on, category_units, layer_drop_ranking, AblationReport, EvalSet,
};
use neuron_explain::matcher::{
    cosine, embed_image, embed_text, explain_neuron, rank_from_similarities, ConceptScore, Explanation,
};
use neuron_explain::patches::{
    discrepancy_scores, extract_patches, synthesize_receptive_field, ActivationMask, OcclusionGrid, Patch, PatchParams,
    PatchSet, PatchSetMeta,
};
use neuron_explain::testbed::{
    brute_force_discrepancy, make_planted_model, make_synthetic_corpus, mock_embedder, synthetic_images,
    MockEmbedder, PlantedSpec,
};
use neuron_explain::vocab::{build_prompt, normalize_key, parse_reply, Vocabulary};
use neuron_explain::{Cache, Corpus, Image, NeuronKey};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unwrap<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn discrepancy_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut nonzero = 0;
    for case in 0..10u64 {
        let spec = PlantedSpec::random(case, 2, rng.random_range(0.0..1.0));
        let (model, _) = unwrap(make_planted_model(&spec))?;
        let (images, _) = unwrap(synthetic_images(&spec, 2))?;
        // Even cases pair planted unit 0 with one of its own trigger images.
        let (image, unit) = if case % 2 == 0 {
            (&images[0], 0)
        } else {
            (&images[rng.random_range(0..images.len())], rng.random_range(0..spec.n_units))
        };
        let neuron = unwrap(model.neuron("conv", unit))?;
        let grid = unwrap(OcclusionGrid::new(16, 16, 4, 3))?;
        let fast = unwrap(discrepancy_scores(&model, &neuron, image, &grid))?;
        let slow = unwrap(brute_force_discrepancy(&model, &neuron, image, &grid))?;
        check(fast.scores.len() == slow.scores.len(), || "score counts differ".into())?;
        for (a, b) in fast.scores.iter().zip(&slow.scores) {
            worst = worst.max((a - b).abs());
        }
        nonzero += fast.scores.iter().filter(|&&s| s > 0.0).count();
    }
    check(worst <= 1e-6, || format!("max |diff| {worst:e} > 1e-6"))?;
    Ok(format!("max |diff| {worst:e} over 10 cases ({nonzero} nonzero scores)"))
}

fn receptive_field_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let spec = PlantedSpec::default();
    let (model, _) = unwrap(make_planted_model(&spec))?;
    let (images, _) = unwrap(synthetic_images(&spec, 1))?;
    let neuron = unwrap(model.neuron("conv", 0))?;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let size = rng.random_range(1..=8);
        let stride = rng.random_range(1..=size);
        let grid = unwrap(OcclusionGrid::new(16, 16, size, stride))?;
        let mut dmap = unwrap(discrepancy_scores(&model, &neuron, &images[0], &grid))?;
        dmap.scores = (0..grid.len()).map(|_| rng.random_range(0.0..3.0)).collect();
        let field = synthesize_receptive_field(&dmap);
        // Explicit 0/1 occluder masks, summed pixel by pixel.
        let mut acc = Array2::<f64>::zeros((16, 16));
        for (m, &(r, c)) in grid.positions.iter().enumerate() {
            let mask = Array2::from_shape_fn((16, 16), |(y, x)| {
                if y >= r && y < r + size && x >= c && x < c + size {
                    1.0
                } else {
                    0.0
                }
            });
            acc = acc + mask * dmap.scores[m];
        }
        acc /= grid.positions.len() as f64;
        for (a, b) in field.field.iter().zip(acc.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-9, || format!("max |diff| {worst:e} > 1e-9"))?;
    Ok(format!("max |diff| {worst:e} over 20 score vectors"))
}

fn localization() -> Outcome {
    let mut good = 0;
    let mut total = 0;
    for seed in 0..20u64 {
        let spec = PlantedSpec::random(seed, 2, 0.5);
        let (model, truth) = unwrap(make_planted_model(&spec))?;
        let (corpus, gt) = unwrap(make_synthetic_corpus(&spec, 10, None))?;
        let params = PatchParams { k: 10, ..spec.patch_params() };
        for unit in truth.units.iter().map(|u| u.unit) {
            let neuron = unwrap(model.neuron("conv", unit))?;
            let ps = unwrap(extract_patches(&model, &neuron, &corpus, &params, &Cache::disabled()))?;
            for p in &ps.patches {
                total += 1;
                if p.mask.iou_with_rect(gt.regions[&p.image_id].as_rect()) >= 0.5 {
                    good += 1;
                }
            }
        }
    }
    let rate = good as f64 / total as f64;
    check(rate >= 0.9, || format!("IoU >= 0.5 in {good}/{total} = {rate:.3} < 0.90"))?;
    Ok(format!("IoU >= 0.5 in {good}/{total} masks ({:.1}%)", 100.0 * rate))
}

fn twelve_concepts(emb: &MockEmbedder) -> Vec<String> {
    let mut texts = emb.keys().to_vec();
    texts.extend(["striped fur", "wooden texture", "open sky", "metal wheel"].map(String::from));
    texts
}

fn explanation_correctness() -> Outcome {
    let emb = MockEmbedder::palette();
    let texts = twelve_concepts(&emb);
    let vocab = unwrap(Vocabulary::from_texts(&texts))?;
    check(vocab.len() == 12, || format!("vocabulary has {} concepts", vocab.len()))?;
    let mut hits = 0;
    let mut trials = 0;
    let mut misses = Vec::new();
    for seed in 100..120u64 {
        let spec = PlantedSpec::random(seed, 2, 0.5);
        let (model, truth) = unwrap(make_planted_model(&spec))?;
        let (corpus, _) = unwrap(make_synthetic_corpus(&spec, 10, None))?;
        let params = PatchParams { k: 10, ..spec.patch_params() };
        for planted in &truth.units {
            check(texts.contains(&planted.concept), || format!("{} not in vocabulary", planted.concept))?;
            let neuron = unwrap(model.neuron("conv", planted.unit))?;
            let ps = unwrap(extract_patches(&model, &neuron, &corpus, &params, &Cache::disabled()))?;
            let ex = unwrap(explain_neuron(&emb, &ps, &vocab, 1))?;
            trials += 1;
            if ex.ranked[0].text == planted.concept {
                hits += 1;
            } else {
                misses.push(format!("seed {seed} unit {}: {}", planted.unit, ex.ranked[0].text));
            }
        }
    }
    let rate = hits as f64 / trials as f64;
    check(rate >= 0.95, || format!("top-1 {hits}/{trials}; misses: {}", misses.join("; ")))?;
    Ok(format!("planted concept ranked first in {hits}/{trials} trials"))
}

fn random_patch_set(rng: &mut ChaCha8Rng, n: usize) -> PatchSet {
    let patches = (0..n)
        .map(|i| Patch {
            image_id: format!("p{i}"),
            activation: rng.random(),
            pixels: Array3::from_shape_simple_fn((6, 6, 3), || rng.random()),
            mask: ActivationMask::all(6, 6),
        })
        .collect();
    PatchSet {
        neuron: NeuronKey { layer: "conv".into(), unit: 0 },
        k: n,
        params: PatchParams::default(),
        model_hash: "random".into(),
        patches,
    }
}

fn order(r: &[ConceptScore]) -> Vec<&str> {
    r.iter().map(|c| c.text.as_str()).collect()
}

fn score_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let n_concepts = rng.random_range(1..=10);
        let table: Vec<(String, [f64; 3])> = (0..n_concepts)
            .map(|i| (format!("c{i}"), [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
            .collect();
        let emb = unwrap(mock_embedder(table))?;
        let mut texts: Vec<String> = (0..n_concepts).map(|i| format!("c{i}")).collect();
        if rng.random_bool(0.5) {
            texts.push("unlisted".into());
        }
        let vocab = unwrap(Vocabulary::from_texts(&texts))?;
        let n_patches = rng.random_range(1..=8);
        let ps = random_patch_set(&mut rng, n_patches);
        let ex = unwrap(explain_neuron(&emb, &ps, &vocab, 1))?;
        check(ex.ranked.len() == texts.len(), || format!("trial {trial}: not exhaustive"))?;

        // (a) brute-force mean of per-patch cosine similarities.
        let text_vecs: Vec<Vec<f64>> = texts.iter().map(|t| embed_text(&emb, t).unwrap()).collect();
        let image_vecs: Vec<Vec<f64>> = ps.patches.iter().map(|p| embed_image(&emb, &p.pixels).unwrap()).collect();
        let mut phi = Array2::<f64>::zeros((image_vecs.len(), texts.len()));
        for (c, t) in text_vecs.iter().enumerate() {
            for (p, v) in image_vecs.iter().enumerate() {
                phi[[p, c]] = cosine(v, t);
            }
        }
        for cs in &ex.ranked {
            let c = texts.iter().position(|t| *t == cs.text).unwrap();
            let mut sum = 0.0;
            for p in 0..phi.nrows() {
                sum += phi[[p, c]];
            }
            worst = worst.max((cs.score - sum / phi.nrows() as f64).abs());
        }

        // (b) permuted patch order.
        let mut shuffled = ps.clone();
        shuffled.patches.shuffle(&mut rng);
        let ex2 = unwrap(explain_neuron(&emb, &shuffled, &vocab, 1))?;
        check(order(&ex.ranked) == order(&ex2.ranked), || format!("trial {trial}: order changed under permutation"))?;

        // (c) uniform positive affine map of every similarity.
        let a = rng.random_range(0.05..10.0);
        let b = rng.random_range(-5.0..5.0);
        let base = unwrap(rank_from_similarities(&texts, &phi))?;
        let mapped = unwrap(rank_from_similarities(&texts, &phi.mapv(|v| a * v + b)))?;
        check(order(&base) == order(&mapped), || format!("trial {trial}: order changed under {a}x+{b}"))?;
        check(order(&base) == order(&ex.ranked), || format!("trial {trial}: brute-force ranking differs"))?;
    }
    check(worst <= 1e-9, || format!("max |s - mean| {worst:e} > 1e-9"))?;
    Ok(format!("200 trials; max |s - brute-force mean| {worst:e}; order stable under permutation and affine maps"))
}

fn ablation_causality() -> Outcome {
    let mut min_planted = f64::INFINITY;
    let mut max_other = 0.0f64;
    for seed in 0..5u64 {
        let spec = PlantedSpec::random(seed, 2, 0.0);
        let (mut model, truth) = unwrap(make_planted_model(&spec))?;
        let (images, _) = unwrap(synthetic_images(&spec, 10))?;
        let eval = unwrap(EvalSet::from_images(spec.class_names(), images))?;
        let before: Vec<Vec<f64>> = eval.images.iter().map(|i| model.logits(i).unwrap()).collect();
        let weights_before = model.weights().clone();
        let base = unwrap(category_accuracy_on(&model, &eval))?;
        for unit in 0..spec.n_units {
            let neuron = unwrap(model.neuron("conv", unit))?;
            let report = unwrap(ablation_report(&mut model, &neuron, &eval))?;
            match truth.planted(unit) {
                Some(p) => {
                    let d = report.drops[p.class].ok_or("planted class not evaluated")?;
                    check(d >= 0.5, || format!("seed {seed} unit {unit}: planted drop {d}"))?;
                    min_planted = min_planted.min(d);
                }
                None => {
                    for (c, d) in report.drops.iter().enumerate() {
                        let d = d.unwrap_or(0.0);
                        check(d.abs() < 0.05, || format!("seed {seed} noise unit {unit} changed class {c} by {d}"))?;
                        max_other = max_other.max(d.abs());
                    }
                }
            }
            let after: Vec<Vec<f64>> = eval.images.iter().map(|i| model.logits(i).unwrap()).collect();
            check(after == before, || format!("seed {seed} unit {unit}: outputs not restored bit-exactly"))?;
        }
        check(model.weights() == &weights_before, || "weights not restored".into())?;
        check(base.per_class[..2] == [Some(1.0), Some(1.0)], || format!("baseline {:?}", base.per_class))?;
    }
    Ok(format!(
        "min planted-class drop {min_planted:.3}; max non-planted change {max_other:.3}; outputs restored bit-exactly"
    ))
}

fn ranking_and_category_units() -> Outcome {
    for seed in 0..10u64 {
        let planted = 2 + (seed % 2) as usize;
        let mut spec = PlantedSpec::random(seed, planted, 0.2);
        spec.n_units = planted + 2;
        let (model, _) = unwrap(make_planted_model(&spec))?;
        let (images, _) = unwrap(synthetic_images(&spec, 8))?;
        let eval = unwrap(EvalSet::from_images(spec.class_names(), images))?;
        let layer = unwrap(model.layer("last_conv"))?.clone();
        let ranking = unwrap(layer_drop_ranking(&model, &layer, &eval, None))?;
        check(ranking.entries.len() == spec.n_units, || "one entry per unit".into())?;
        let top: BTreeSet<usize> = ranking.entries[..planted].iter().map(|e| e.unit).collect();
        check(top == (0..planted).collect(), || format!("seed {seed}: top units {top:?}"))?;
        check(ranking.entries[planted - 1].max_drop > ranking.entries[planted].max_drop, || {
            format!("seed {seed}: planted and noise units tie")
        })?;
        for class in 0..planted {
            let units: Vec<usize> = unwrap(category_units(&model, class, 2))?.iter().map(|u| u.unit).collect();
            // Hand-set head: 0.9 on the class's own unit, 0.1 on the next planted unit.
            let expected = vec![class, (class + 1) % planted];
            check(units == expected, || format!("seed {seed} class {class}: {units:?} != {expected:?}"))?;
        }
    }
    Ok("planted units ranked strictly above noise units and head-weight units matched for 10 seeds".into())
}

fn vocabulary_pipeline() -> Outcome {
    let template = "What are useful features for distinguishing a guacamole in an image? \
                    Please give me a list of short phrases.";
    let prompt = unwrap(build_prompt("guacamole"))?;
    check(prompt == template, || format!("prompt mismatch: {prompt:?}"))?;

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replies");
    let classes = ["guacamole", "greenhouse", "golden retriever"];
    let dir = unwrap(tempfile::tempdir())?;
    let images: Vec<Image> = classes
        .iter()
        .enumerate()
        .map(|(i, _)| Image::new(format!("img{i}"), Array3::from_elem((4, 4, 3), 0.5)).with_label(i))
        .collect();
    let manifest = unwrap(Corpus::write_manifest(
        &dir.path().join("corpus"),
        &classes.map(String::from),
        &images,
    ))?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_neuron-explain"))
            .arg("--corpus")
            .arg(&manifest)
            .arg("--fixtures")
            .arg(&fixtures)
            .arg("--vocab")
            .arg(&out)
            .arg("--out")
            .arg(dir.path().join("out"))
            .arg("--canonical")
            .arg("build-vocab")
            .env("RUST_LOG", "error")
            .status()
            .map_err(|e| e.to_string())?;
        check(status.success(), || format!("build-vocab exited with {status}"))?;
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    let first = run("v1.json")?;
    let second = run("v2.json")?;
    check(first == second, || "vocabulary files differ between runs".into())?;

    let vocab = unwrap(Vocabulary::load(&dir.path().join("v1.json")))?;
    let mut parsed = Vec::new();
    for class in classes {
        let slug = class.replace(' ', "-");
        let raw = unwrap(std::fs::read_to_string(fixtures.join(format!("{slug}.txt"))))?;
        parsed.extend(parse_reply(&raw));
    }
    let oracle: BTreeSet<String> = parsed.iter().map(|t| normalize_key(t)).collect();
    let keys: Vec<String> = vocab.concepts.iter().map(|c| c.key()).collect();
    let key_set: BTreeSet<String> = keys.iter().cloned().collect();
    check(key_set.len() == keys.len(), || "duplicate concepts".into())?;
    check(key_set == oracle, || format!("merged {key_set:?} != oracle {oracle:?}"))?;
    Ok(format!(
        "prompt matches; 2 runs byte-identical ({} bytes); {} concepts from {} parsed items",
        first.len(),
        keys.len(),
        parsed.len()
    ))
}

fn serialization() -> Outcome {
    let dir = unwrap(tempfile::tempdir())?;
    let spec = PlantedSpec { noise_level: 0.4, seed: 9, ..Default::default() };
    let (mut model, _) = unwrap(make_planted_model(&spec))?;
    let (corpus, _) = unwrap(make_synthetic_corpus(&spec, 4, Some(&dir.path().join("corpus"))))?;
    let neuron = unwrap(model.neuron("conv", 0))?;
    let params = PatchParams { k: 4, ..spec.patch_params() };
    let ps = unwrap(extract_patches(&model, &neuron, &corpus, &params, &Cache::disabled()))?;

    let patch_dir = PatchSet::dir_for(dir.path(), "m", &ps.neuron);
    unwrap(ps.write(&patch_dir))?;
    let meta: PatchSetMeta = unwrap(PatchSet::read_meta(&patch_dir))?;
    check(meta == ps.meta(), || "PatchSet metadata differs".into())?;

    let emb = MockEmbedder::palette();
    let vocab = unwrap(Vocabulary::from_texts(&twelve_concepts(&emb)))?;
    let vpath = dir.path().join("vocab.json");
    unwrap(vocab.save(&vpath))?;
    check(unwrap(Vocabulary::load(&vpath))? == vocab, || "Vocabulary differs".into())?;

    let ex = unwrap(explain_neuron(&emb, &ps, &vocab, 3))?;
    let epath = Explanation::path_for(dir.path(), "m", &ex.neuron);
    unwrap(ex.save(&epath))?;
    check(unwrap(Explanation::load(&epath))? == ex, || "Explanation differs".into())?;

    let eval = unwrap(EvalSet::prepare(&corpus, neuron_explain::ablation::EvalSubset::Full))?;
    let report = unwrap(ablation_report(&mut model, &neuron, &eval))?;
    let rpath = AblationReport::path_for(dir.path(), "m", &report.neuron);
    unwrap(report.save(&rpath))?;
    check(unwrap(AblationReport::load(&rpath))? == report, || "AblationReport differs".into())?;
    Ok("Explanation, AblationReport, Vocabulary and PatchSet metadata round-trip with equality".into())
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "discrepancy-oracle", budget: Duration::from_secs(10), run: discrepancy_oracle },
        Criterion { name: "receptive-field-formula", budget: Duration::from_secs(5), run: receptive_field_formula },
        Criterion { name: "mask-localization", budget: Duration::from_secs(60), run: localization },
        Criterion { name: "explanation-correctness", budget: Duration::from_secs(60), run: explanation_correctness },
        Criterion { name: "concept-score-properties", budget: Duration::from_secs(10), run: score_properties },
        Criterion { name: "ablation-causality", budget: Duration::from_secs(30), run: ablation_causality },
        Criterion { name: "ranking-and-category-units", budget: Duration::from_secs(60), run: ranking_and_category_units },
        Criterion { name: "vocabulary-pipeline", budget: Duration::from_secs(5), run: vocabulary_pipeline },
        Criterion { name: "serialization-round-trip", budget: Duration::from_secs(5), run: serialization },
    ];
    println!("\nacceptance criteria");
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= c.budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {:.2}s, budget {}s", elapsed.as_secs_f64(), c.budget.as_secs()))
            }
        });
        match result {
            Ok(detail) => println!("PASS {:<28} {:>7.2}s  {detail}", c.name, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {:<28} {:>7.2}s  {why}", c.name, elapsed.as_secs_f64());
            }
        }
    }
    println!(
        "SKIP {:<28} {:>7}   needs a pretrained ResNet50, a vision-language embedding service and ImageNet images; not gated",
        "real-model-ablation", "-"
    );
    println!("{} passed, {failed} failed, 1 skipped\n", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

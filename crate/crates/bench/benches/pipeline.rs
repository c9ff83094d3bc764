use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use neuron_explain::matcher::{rank_from_similarities, ConceptMatcher, MatchParams};
use neuron_explain::patches::{
    binarize_mask, discrepancy_scores, extract_patches, synthesize_receptive_field, OcclusionGrid,
};
use neuron_explain::testbed::MockEmbedder;
use neuron_explain::vocab::Vocabulary;
use neuron_explain::{Cache, Corpus};
use neuron_explain_bench::fixture;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_activations");
    for side in [16, 32, 64] {
        let (model, images, _) = fixture(side, 8);
        let layer = model.layer("conv").unwrap().clone();
        group.bench_with_input(BenchmarkId::from_parameter(side), &side, |b, _| {
            b.iter(|| model.batch_activations(black_box(&images), &layer).unwrap())
        });
    }
    group.finish();
}

fn occlusion(c: &mut Criterion) {
    let mut group = c.benchmark_group("discrepancy_scores");
    for (side, size, stride) in [(16, 4, 3), (16, 3, 1), (32, 4, 2)] {
        let (model, images, _) = fixture(side, 1);
        let n = model.neuron("conv", 0).unwrap();
        let grid = OcclusionGrid::new(side, side, size, stride).unwrap();
        let id = format!("{side}px_occ{size}_s{stride}");
        group.bench_function(&id, |b| {
            b.iter(|| discrepancy_scores(&model, &n, black_box(&images[0]), &grid).unwrap())
        });
    }
    group.finish();
}

fn field_and_mask(c: &mut Criterion) {
    let (model, images, _) = fixture(32, 1);
    let n = model.neuron("conv", 0).unwrap();
    let grid = OcclusionGrid::new(32, 32, 3, 1).unwrap();
    let d = discrepancy_scores(&model, &n, &images[0], &grid).unwrap();
    c.bench_function("receptive_field_and_mask_32px", |b| {
        b.iter(|| {
            let f = synthesize_receptive_field(black_box(&d));
            binarize_mask(&f, 95.0).unwrap()
        })
    });
}

fn ranking(c: &mut Criterion) {
    let mut group = c.benchmark_group("rank_from_similarities");
    for concepts in [100, 1000, 5000] {
        let texts: Vec<String> = (0..concepts).map(|i| format!("concept {i}")).collect();
        let sims = Array2::from_shape_fn((10, concepts), |(p, c)| ((p * 31 + c * 17) % 97) as f64 / 97.0);
        group.bench_with_input(BenchmarkId::from_parameter(concepts), &concepts, |b, _| {
            b.iter(|| rank_from_similarities(black_box(&texts), &sims).unwrap())
        });
    }
    group.finish();
}

fn end_to_end(c: &mut Criterion) {
    let (model, images, spec) = fixture(16, 10);
    let corpus = Corpus::from_images(spec.class_names(), images).unwrap();
    let n = model.neuron("conv", 0).unwrap();
    let params = spec.patch_params();
    let embedder = MockEmbedder::palette();
    let vocab = Vocabulary::from_texts(embedder.keys()).unwrap();
    c.bench_function("extract_and_explain_16px_k10", |b| {
        b.iter(|| {
            let ps = extract_patches(&model, &n, &corpus, &params, &Cache::disabled()).unwrap();
            let matcher = ConceptMatcher::new(&embedder, MatchParams::default());
            matcher.explain(&ps, &vocab, 5).unwrap()
        })
    });
}

criterion_group!(benches, forward, occlusion, field_and_mask, ranking, end_to_end);
criterion_main!(benches);

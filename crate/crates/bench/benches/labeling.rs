use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use regioncal_bench::scored_forest;
use regioncal_core::calibration::{evaluate_loss, LossKind};
use regioncal_core::svm::score_all;
use regioncal_core::{
    generate_synthetic, label_image_fast, label_image_naive, GridSpec, SyntheticConfig,
};

fn labeling_by_regions(c: &mut Criterion) {
    let mut group = c.benchmark_group("label_image_fast/leaves");
    for leaves in [64, 128, 256, 512, 1024] {
        let (forest, scores, params) = scored_forest(leaves, 16, 1);
        group.throughput(Throughput::Elements((forest.len() * 16) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(leaves), &leaves, |b, _| {
            b.iter(|| label_image_fast(&forest, &scores, &params))
        });
    }
    group.finish();
}

fn labeling_by_classes(c: &mut Criterion) {
    let mut group = c.benchmark_group("label_image_fast/classes");
    for classes in [4, 8, 16, 32, 64] {
        let (forest, scores, params) = scored_forest(256, classes, 2);
        group.throughput(Throughput::Elements((forest.len() * classes) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(classes), &classes, |b, _| {
            b.iter(|| label_image_fast(&forest, &scores, &params))
        });
    }
    group.finish();
}

fn fast_versus_naive(c: &mut Criterion) {
    let mut group = c.benchmark_group("fast_vs_naive");
    let (forest, scores, params) = scored_forest(256, 16, 3);
    group.bench_function("fast", |b| {
        b.iter(|| label_image_fast(&forest, &scores, &params))
    });
    group.bench_function("naive", |b| {
        b.iter(|| label_image_naive(&forest, &scores, &params))
    });
    group.finish();
}

fn loss_evaluation(c: &mut Criterion) {
    let d = generate_synthetic(&SyntheticConfig::suppression()).expect("valid config");
    let trained =
        regioncal_core::pipeline::train(&d, &Default::default(), 1, false).expect("trains");
    let scores = score_all(&trained.models, &d).expect("scores");
    let params = GridSpec::default().initial_params(d.class_count);
    c.bench_function("evaluate_loss/suppression", |b| {
        b.iter(|| evaluate_loss(&d, &scores, &params, LossKind::FullySupervised))
    });
}

criterion_group!(
    benches,
    labeling_by_regions,
    labeling_by_classes,
    fast_versus_naive,
    loss_evaluation
);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, Criterion};
use miaod_core::activeloop::{max_step, train_label_set, ActiveConfig, TrainData};
use miaod_core::detector::{build_anchors, forward_many, DetectorModel};
use miaod_core::synthdata::{generate_dataset, ImageSample, SceneSpec};

fn setup() -> (ActiveConfig, Vec<ImageSample>, DetectorModel) {
    let spec = SceneSpec::default();
    let mut cfg = ActiveConfig::default();
    cfg.cycle.epochs.label_set = 1;
    cfg.cycle.epochs.max_step = 1;
    let data = generate_dataset(&spec, 32, 7).unwrap();
    let model = DetectorModel::new(&cfg.detector, spec.image_size, spec.num_classes(), 7).unwrap();
    (cfg, data.samples, model)
}

fn bench(c: &mut Criterion) {
    let (cfg, samples, model) = setup();
    let spec = SceneSpec::default();
    let grid = build_anchors(spec.image_size, cfg.detector.stride, &cfg.detector.anchor_sizes).unwrap();
    let batch: Vec<&ImageSample> = samples.iter().take(8).collect();
    c.bench_function("forward_8_images", |b| b.iter(|| forward_many(&model, &grid, &batch).unwrap()));

    let data = TrainData::new(&samples, grid, spec.num_classes());
    let labeled: Vec<usize> = (0..16).collect();
    let unlabeled: Vec<usize> = (16..32).collect();
    c.bench_function("label_set_epoch_16_images", |b| {
        b.iter(|| {
            let mut m = model.clone();
            train_label_set(&mut m, &data, &labeled, &cfg, true, &[1]).unwrap()
        })
    });
    c.bench_function("max_step_epoch_16_plus_16", |b| {
        b.iter(|| {
            let mut m = model.clone();
            max_step(&mut m, &data, &labeled, &unlabeled, &cfg, true, &[2]).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench
}
criterion_main!(benches);

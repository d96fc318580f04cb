use candle_core::{DType, Device, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use varigan::adversary::{DiscConfig, Discriminator};
use varigan::coarse::{CoarseConfig, CoarseGenerator};
use varigan::datakit::{dataset_scenes, render_scene, ViewLabel};
use varigan::fine::{FineConfig, FineGenerator};
use varigan::metrics::{ssim, SsimParams};
use varigan::nn::{Conv2d, Mode, ParamStore};

fn render(c: &mut Criterion) {
    let scene = dataset_scenes(1, 0).remove(0);
    let mut g = c.benchmark_group("render");
    for size in [64, 128] {
        g.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, &s| {
            b.iter(|| render_scene(&scene, ViewLabel::Side, s).unwrap())
        });
    }
    g.finish();
}

fn structural_similarity(c: &mut Criterion) {
    let scene = dataset_scenes(1, 1).remove(0);
    let a = render_scene(&scene, ViewLabel::Front, 128).unwrap();
    let b = render_scene(&scene, ViewLabel::Back, 128).unwrap();
    c.bench_function("ssim/global", |bench| {
        bench.iter(|| ssim(&a, &b, &SsimParams::default()).unwrap())
    });
    let windowed = SsimParams::default().windowed(11);
    c.bench_function("ssim/windowed", |bench| {
        bench.iter(|| ssim(&a, &b, &windowed).unwrap())
    });
}

fn conv(c: &mut Criterion) {
    let mut store = ParamStore::new(DType::F32, 0);
    let layer = Conv2d::new(&mut store, "c", 32, 64, 4, 2, 1, 1).unwrap();
    let x = Tensor::randn(0f32, 1., (8, 32, 32, 32), &Device::Cpu).unwrap();
    c.bench_function("conv/forward", |b| b.iter(|| layer.forward(&x).unwrap()));
    c.bench_function("conv/forward_backward", |b| {
        b.iter(|| {
            layer
                .forward(&x)
                .unwrap()
                .sqr()
                .unwrap()
                .sum_all()
                .unwrap()
                .backward()
                .unwrap()
        })
    });
}

fn generators(c: &mut Criterion) {
    let batch = 8;
    let dev = Device::Cpu;
    let mut store = ParamStore::new(DType::F32, 0);
    let coarse = CoarseGenerator::new(&mut store, "c.", &CoarseConfig::desk()).unwrap();
    let fine = FineGenerator::new(&mut store, "f.", &FineConfig::desk()).unwrap();
    let disc = Discriminator::new(&mut store, "d.", &DiscConfig::desk()).unwrap();
    let hr = Tensor::randn(0f32, 0.5, (batch, 3, 64, 64), &dev).unwrap();
    let lr = Tensor::randn(0f32, 0.5, (batch, 3, 32, 32), &dev).unwrap();
    c.bench_function("coarse/encode", |b| {
        b.iter(|| coarse.encode(&hr, Mode::Eval).unwrap())
    });
    c.bench_function("fine/forward", |b| {
        b.iter(|| fine.forward(&lr, &hr, None, Mode::Eval).unwrap())
    });
    c.bench_function("disc/forward", |b| {
        b.iter(|| disc.forward(&hr, &hr, Mode::Eval).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = render, structural_similarity, conv, generators
}
criterion_main!(benches);

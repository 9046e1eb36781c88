use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use reqnn::layers::{qbatchnorm_rows, qconv, qconv_backward, qmaxpool_elementwise, qrelu, ReluMode};
use reqnn::network::{preset, Network, Scale};
use reqnn_bench::{cloud, features, weight};

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("qconv");
    for channels in [16, 64, 128] {
        let f = features(vec![1024, channels]);
        let w = weight(channels, channels);
        group.bench_with_input(BenchmarkId::new("forward", channels), &channels, |b, _| {
            b.iter(|| qconv(black_box(&w), black_box(&f)).unwrap())
        });
        let g = features(vec![1024, channels]);
        group.bench_with_input(BenchmarkId::new("backward", channels), &channels, |b, _| {
            b.iter(|| qconv_backward(&w, &f, black_box(&g)).unwrap())
        });
    }
    group.finish();
}

fn pointwise(c: &mut Criterion) {
    let f = features(vec![1024, 64]);
    c.bench_function("qrelu constant", |b| {
        b.iter(|| qrelu(black_box(&f), ReluMode::Constant { c: 1.0 }).unwrap())
    });
    c.bench_function("qrelu batch_mean", |b| b.iter(|| qrelu(black_box(&f), ReluMode::BatchMean).unwrap()));
    c.bench_function("qbatchnorm rows", |b| b.iter(|| qbatchnorm_rows(black_box(&f), 1e-5).unwrap()));
    let groups = features(vec![64, 16, 64]);
    c.bench_function("qmaxpool elementwise 64x16x64", |b| {
        b.iter(|| qmaxpool_elementwise(black_box(&groups)).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for name in ["micro-pointnet-cls", "micro-pointnetpp-cls", "micro-edgeconv-cls", "micro-pointnet-ae"] {
        let spec = preset(name, Scale::Micro).unwrap();
        let input = cloud(spec.num_points);
        let net = Network::build(spec).unwrap();
        group.bench_function(name, |b| b.iter(|| net.forward(black_box(&input)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, conv, pointwise, forward);
criterion_main!(benches);

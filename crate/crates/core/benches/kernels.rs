//! Single worker against the default pool for the hot kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kbdd::autodiff::{ConvParams, Tape, Tensor};
use kbdd::models::{CldNet, CldNetConfig};
use kbdd::par::{current_workers, with_workers};

fn input(shape: &[usize]) -> Tensor<f32> {
    let mut s = 0x9e37_79b9u32;
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 17;
        s ^= s << 5;
        (s as f32 / u32::MAX as f32) - 0.5
    })
}

fn worker_counts() -> Vec<usize> {
    let mut v = vec![1];
    let n = current_workers().max(2);
    v.push(n);
    v
}

fn conv(c: &mut Criterion) {
    let x = input(&[1, 32, 96, 96]);
    let cases = [
        ("standard3x3", input(&[32, 32, 3, 3]), ConvParams::same(3, 1, 1)),
        ("pointwise", input(&[64, 32, 1, 1]), ConvParams::same(1, 1, 1)),
        ("depthwise_dilated", input(&[32, 1, 3, 3]), ConvParams::same(3, 4, 32)),
    ];
    let mut g = c.benchmark_group("conv2d");
    for (name, w, p) in &cases {
        for workers in worker_counts() {
            g.bench_with_input(BenchmarkId::new(*name, workers), &workers, |b, &n| {
                b.iter(|| {
                    with_workers(n, || {
                        let tape = Tape::inference();
                        let xv = tape.constant(x.clone());
                        let wv = tape.constant(w.clone());
                        tape.conv2d(&xv, &wv, None, *p).unwrap().value().len()
                    })
                })
            });
        }
    }
    g.finish();
}

fn forward(c: &mut Criterion) {
    let model = CldNet::new(CldNetConfig::default(), 0).unwrap();
    let x = input(&[1, 80, 96, 96]);
    let mut g = c.benchmark_group("cldnet_forward_96");
    g.sample_size(10);
    for workers in worker_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &n| {
            b.iter(|| with_workers(n, || model.predict(x.clone(), None).unwrap().logits.value().len()))
        });
    }
    g.finish();
}

criterion_group!(benches, conv, forward);
criterion_main!(benches);

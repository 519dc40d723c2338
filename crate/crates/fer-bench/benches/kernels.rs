//! Hot-path benchmarks: conv kernels, linear layers and full model passes.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use fer_core::model::{Mode, ModelConfig, ResEmoteNet};
use fer_core::ops;
use fer_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.iter().product())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = rand_tensor(&[4, 8, 32, 32], &mut rng);
    let weight = rand_tensor(&[16, 8, 3, 3], &mut rng);
    let bias = rand_tensor(&[16], &mut rng);
    let out = ops::conv2d_forward(&input, &weight, &bias, 1, 1).unwrap();
    let grad_out = rand_tensor(out.shape(), &mut rng);

    c.bench_function("conv2d_forward 4x8x32x32 -> 16ch", |b| {
        b.iter(|| {
            ops::conv2d_forward(
                black_box(&input),
                black_box(&weight),
                black_box(&bias),
                1,
                1,
            )
            .unwrap()
        })
    });
    c.bench_function("conv2d_backward 4x8x32x32 -> 16ch", |b| {
        b.iter(|| {
            ops::conv2d_backward(
                black_box(&input),
                black_box(&weight),
                1,
                1,
                black_box(&grad_out),
            )
            .unwrap()
        })
    });
}

fn bench_linear(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = rand_tensor(&[32, 256], &mut rng);
    let weight = rand_tensor(&[128, 256], &mut rng);
    let bias = rand_tensor(&[128], &mut rng);

    c.bench_function("linear_forward 32x256 -> 128", |b| {
        b.iter(|| {
            ops::linear_forward(black_box(&input), black_box(&weight), black_box(&bias)).unwrap()
        })
    });
}

fn bench_model(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = ResEmoteNet::build(ModelConfig::tiny(0)).unwrap();
    let batch = rand_tensor(&[8, 3, 16, 16], &mut rng);

    model.set_mode(Mode::Eval);
    c.bench_function("model_forward tiny eval 8x3x16x16", |b| {
        b.iter(|| model.forward(black_box(&batch)).unwrap())
    });

    model.set_mode(Mode::Train);
    let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..7)).collect();
    c.bench_function("model_train_step tiny 8x3x16x16", |b| {
        b.iter(|| {
            model.zero_grad();
            let logits = model.forward(black_box(&batch)).unwrap();
            let (_, probs) = ops::softmax_cross_entropy(&logits, &labels).unwrap();
            let grad = ops::softmax_cross_entropy_backward(&probs, &labels).unwrap();
            model.backward(&grad).unwrap()
        })
    });
}

criterion_group!(benches, bench_conv, bench_linear, bench_model);
criterion_main!(benches);

//! Parallel vs sequential batch evaluation on the crate's two hot shapes:
//! order-preserving maps (grid scans, batch forwards) and chunked gradient
//! folds (risk and loss gradients). Both paths share association order, so
//! the comparison is purely pool overhead versus available cores.
//!
//! `parallel` entries use whichever implementation this build's features
//! select (rayon by default); `sequential` entries pin the fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use lyacert::buffers::Transition;
use lyacert::lyapunov::LyapunovFunction;
use lyacert::nn::{Activation, DenseNet, Gradients, SquashedGaussianPolicy};
use lyacert::par;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_inputs(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect()
}

fn random_transitions(n: usize, seed: u64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |dim: usize, lim: f64| -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-lim..lim)).collect()
    };
    (0..n)
        .map(|_| Transition {
            s: draw(3, 2.0),
            a: draw(1, 2.0),
            r: 0.0,
            s_next: draw(3, 2.0),
            done: false,
        })
        .collect()
}

/// Batch scalar forward over observations — the level-set / value-scan shape.
fn bench_batch_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = DenseNet::new(
        &[3, 64, 64, 1],
        Activation::Tanh,
        Activation::Identity,
        &mut rng,
    );
    let mut group = c.benchmark_group("batch_forward");
    for n in [1024usize, 10201] {
        let inputs = random_inputs(n, 3, 2);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("parallel", n), &inputs, |b, inputs| {
            b.iter(|| par::map_collect(inputs, |x| net.forward_scalar(x)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &inputs, |b, inputs| {
            b.iter(|| par::map_collect_seq(inputs, |x| net.forward_scalar(x)))
        });
    }
    group.finish();
}

/// Chunked gradient accumulation — the inner loop of every batched loss.
fn bench_gradient_fold(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = DenseNet::new(
        &[4, 64, 64, 1],
        Activation::Tanh,
        Activation::Identity,
        &mut rng,
    );
    let fold = |mut acc: Gradients, x: &Vec<f64>| {
        let cache = net.forward_cached(x);
        net.backward_acc(&cache, &[1.0], &mut acc);
        acc
    };
    let merge = |mut a: Gradients, b: Gradients| {
        a.add(&b);
        a
    };
    let mut group = c.benchmark_group("gradient_fold");
    group.sample_size(30);
    for n in [256usize, 2048] {
        let inputs = random_inputs(n, 4, 4);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("parallel", n), &inputs, |b, inputs| {
            b.iter(|| par::chunked_fold(inputs, || Gradients::zeros_like(&net), fold, merge))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &inputs, |b, inputs| {
            b.iter(|| par::chunked_fold_seq(inputs, || Gradients::zeros_like(&net), fold, merge))
        });
    }
    group.finish();
}

/// The crate's real risk-gradient entry point on this build's selected path.
fn bench_training_risk_grad(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = DenseNet::new(
        &[4, 64, 64, 1],
        Activation::Tanh,
        Activation::Identity,
        &mut rng,
    );
    let lyapunov = LyapunovFunction::new_state_action(net, 0.01, 0.05, vec![1.0, 0.0, 0.0]);
    let trunk = DenseNet::new(
        &[3, 64, 64, 2],
        Activation::Relu,
        Activation::Identity,
        &mut rng,
    );
    let policy = SquashedGaussianPolicy::new(trunk, vec![2.0], vec![0.0]);
    let batch = random_transitions(2048, 6);
    let mut group = c.benchmark_group("lyapunov_risk");
    group.sample_size(30);
    group.throughput(Throughput::Elements(batch.len() as u64));
    group.bench_function("training_risk_grad/2048", |b| {
        b.iter(|| lyapunov.training_risk_grad(&batch, &policy))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_batch_forward,
    bench_gradient_fold,
    bench_training_risk_grad
);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rnrdp_core::denoiser::{forward_single, init_params, DenoiserConfig, PredictKind};
use rnrdp_core::numkit::Tensor;
use rnrdp_core::schedule::{build_schedule, BetaKind, LevelVector};

fn bench_forward(c: &mut Criterion) {
    let cfg = DenoiserConfig {
        f: 8,
        c_a: 2,
        c_state: 8,
        t_o: 2,
        c_emb: 32,
        hidden: 64,
        depth: 2,
        predict: PredictKind::Noise,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_params(&cfg, &mut rng).unwrap();
    let noisy = Tensor::randn(&[8, 2], &mut rng);
    let obs = Tensor::randn(&[2, 8], &mut rng);
    let levels = LevelVector::linear(8);
    c.bench_function("denoiser_forward_f8", |b| {
        b.iter(|| forward_single(&cfg, &params, &noisy, &levels, &obs).unwrap())
    });
}

fn bench_schedule(c: &mut Criterion) {
    c.bench_function("build_schedule_f32", |b| {
        b.iter(|| build_schedule(32, BetaKind::LinearBeta, 1e-4, 0.02).unwrap())
    });
}

criterion_group!(benches, bench_forward, bench_schedule);
criterion_main!(benches);

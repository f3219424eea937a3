//! Forward-gradient vs reverse-mode guidance cost across unroll depths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fwdguide_bench::bench_lab;
use fwdguide_core::diffusion::Denoiser;
use fwdguide_core::guidance::{guidance_update, GuessKind, GuidanceConfig, Objective, Strategy};
use fwdguide_core::{MemMeter, RngState};

fn bench_model_forward(c: &mut Criterion) {
    let (model, _) = bench_lab();
    let mut rng = RngState::new(3);
    let z = rng.gaussian(&[256, 2]).unwrap();
    c.bench_function("denoiser_forward_256", |b| {
        b.iter(|| model.predict(&z, 10).unwrap())
    });
}

fn bench_guidance_update(c: &mut Criterion) {
    let (model, schedule) = bench_lab();
    let objective = Objective::Circle { target: 0.3 };
    let meter = MemMeter::new();
    let mut group = c.benchmark_group("guidance_update_n64");
    group.sample_size(20);
    for depth in [5usize, 10, 20] {
        let mut rng = RngState::new(depth as u64);
        let z = rng.gaussian(&[64, 2]).unwrap();
        for (name, strategy, guess) in [
            ("direct", Strategy::Direct, GuessKind::Random),
            ("titan_random", Strategy::Titan, GuessKind::Random),
            ("titan_score", Strategy::Titan, GuessKind::Score),
            ("tweedie", Strategy::Tweedie, GuessKind::Random),
        ] {
            let cfg = GuidanceConfig { strategy, guess, ..Default::default() };
            group.bench_with_input(BenchmarkId::new(name, depth), &depth, |b, &d| {
                b.iter(|| {
                    let mut guess_rng = RngState::new(17);
                    guidance_update(&model, &z, d, &objective, &cfg, &mut guess_rng, &schedule, &meter)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_model_forward, bench_guidance_update);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stratlift::covariates::{LOW_RESPONSIVENESS, NO_RECENT_PURCHASE};
use stratlift::inference::{sample, SamplerConfig, TargetDensity};
use stratlift::models::{posterior, ModelKind};
use stratlift::presets;
use stratlift::simulation::{generate, GeneratorSpec, Truth};
use stratlift::ExperimentDataset;

fn dataset(n: usize, covariates: bool) -> ExperimentDataset {
    let truth = if covariates { presets::table_a3() } else { Truth::Strata(presets::table_a1()) };
    generate(&GeneratorSpec { truth, n, treat_frac: 0.5, seed: 7 }).unwrap().0
}

fn gradients(c: &mut Criterion) {
    let mut g = c.benchmark_group("logp_grad");
    for &n in &[10_000usize, 140_000] {
        let plain = dataset(n, false);
        let cov = dataset(n, true);
        let names = vec![NO_RECENT_PURCHASE.to_string(), LOW_RESPONSIVENESS.to_string()];
        let targets: Vec<(&str, Box<dyn TargetDensity>)> = vec![
            ("dim", posterior(ModelKind::Dim, &plain, &[]).unwrap()),
            ("zi", posterior(ModelKind::Zi, &plain, &[]).unwrap()),
            ("ps", posterior(ModelKind::Ps, &plain, &[]).unwrap()),
            ("ps-cov", posterior(ModelKind::PsCov, &cov, &names).unwrap()),
        ];
        for (label, t) in &targets {
            let x = t.initial_point();
            let mut grad = vec![0.0; t.dim()];
            g.bench_with_input(BenchmarkId::new(*label, n), &n, |b, _| {
                b.iter(|| black_box(t.logp_grad(black_box(&x), &mut grad)))
            });
        }
    }
    g.finish();
}

fn short_run(c: &mut Criterion) {
    let data = dataset(20_000, false);
    let target = posterior(ModelKind::Ps, &data, &[]).unwrap();
    let config = SamplerConfig { chains: 1, warmup_iters: 200, sampling_iters: 200, seed: 1, ..SamplerConfig::default() };
    let mut g = c.benchmark_group("sampler");
    g.sample_size(10);
    g.bench_function("ps_20k_1x200", |b| b.iter(|| sample(target.as_ref(), &config).unwrap()));
    g.finish();
}

criterion_group!(benches, gradients, short_run);
criterion_main!(benches);

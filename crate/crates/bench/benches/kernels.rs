use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gomix_core::generate::{generate_dataset, Preset};
use gomix_core::mcmc::{gibbs_sweep, initialize, ChainConfig};
use gomix_core::prob::{marginal_pattern_prob_exact, random_params};
use gomix_core::rng;
use gomix_core::vem::{e_step, VariationalState};
use gomix_core::ResponsePattern;

fn sweep(c: &mut Criterion) {
    let preset = Preset::Scenario1;
    let data = generate_dataset(&preset.params(), 1000, 1, None).unwrap().0;
    let config = ChainConfig { k: 3, seed: 2, ..Default::default() };
    let x = data.flat();
    let state = initialize(&data, &config).unwrap();
    c.bench_function("gibbs_sweep/N1000_J16_K3", |b| {
        b.iter_batched_ref(|| state.clone(), |s| black_box(gibbs_sweep(s, &x, &config)), BatchSize::LargeInput)
    });
}

fn estep(c: &mut Criterion) {
    let preset = Preset::Scenario1;
    let params = preset.params();
    let data = generate_dataset(&params, 5000, 1, None).unwrap().0;
    let state = VariationalState::new(&data, params.lambda().to_vec(), params.alpha()).unwrap();
    c.bench_function("e_step/N5000_J16_K3", |b| {
        b.iter_batched_ref(|| state.clone(), |s| black_box(e_step(s, 1e-8, 500)), BatchSize::LargeInput)
    });
}

fn exact_marginal(c: &mut Criterion) {
    let mut r = rng::stream(3, 0, 0, 0);
    let params = random_params(3, 6, &mut r);
    let pattern = ResponsePattern::new(vec![1, 0, 1, 1, 0, 1]).unwrap();
    c.bench_function("marginal_exact/J6_K3", |b| b.iter(|| marginal_pattern_prob_exact(black_box(&params), &pattern).unwrap()));
}

criterion_group!(benches, sweep, estep, exact_marginal);
criterion_main!(benches);

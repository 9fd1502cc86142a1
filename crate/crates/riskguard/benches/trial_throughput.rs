//! Criterion benchmarks over the data-parallel hot paths.
//!
//! Every benchmark id is prefixed with the active execution mode, so running
//! `cargo bench` (parallel, the default) and
//! `cargo bench --no-default-features` (sequential fallback) produces
//! directly comparable entries in the same report.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use riskguard::credal::{credal_coverage_and_inefficiency, DivergenceSpec, SimplexSampler};
use riskguard::harness::{run_experiment, CpCoverageParams, ExperimentKind, ExperimentSpec};
use riskguard::rcps::{wsr_ucb, WsrConfig};
use riskguard::synthworld::{gen_classification, ClassificationWorldConfig};

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

fn world_cfg(seed: u64) -> ClassificationWorldConfig {
    ClassificationWorldConfig {
        label_count: 10,
        feature_dim: 8,
        logit_scale: 1.0,
        edge_temperature: 0.7,
        edge_logit_noise: 0.5,
        seed,
    }
}

fn bench_trial_loop(c: &mut Criterion) {
    let spec = ExperimentSpec {
        master_seed: 7,
        trials: 200,
        experiment: ExperimentKind::CpCoverage(CpCoverageParams {
            world: world_cfg(3),
            alpha_label_mis: 0.1,
            cal_size: 100,
            test_size: 50,
        }),
    };
    c.bench_function(&format!("{}/cp_coverage_200_trials", mode()), |b| {
        b.iter(|| run_experiment(black_box(&spec)).unwrap())
    });
}

fn bench_world_generation(c: &mut Criterion) {
    let cfg = world_cfg(11);
    c.bench_function(&format!("{}/gen_classification_5000", mode()), |b| {
        b.iter(|| gen_classification(black_box(&cfg), 5000))
    });
}

fn bench_credal_scan(c: &mut Criterion) {
    let cfg = ClassificationWorldConfig {
        label_count: 3,
        feature_dim: 4,
        logit_scale: 1.0,
        edge_temperature: 0.8,
        edge_logit_noise: 0.4,
        seed: 43,
    };
    let pairs: Vec<_> = gen_classification(&cfg, 500)
        .into_iter()
        .map(|ex| (ex.cloud_dist, ex.edge_dist))
        .collect();
    let spec = DivergenceSpec::kl();
    let sampler = SimplexSampler::Grid { resolution: 60 };
    c.bench_function(&format!("{}/credal_coverage_500_tests", mode()), |b| {
        b.iter(|| credal_coverage_and_inefficiency(black_box(&pairs), &spec, 0.05, &sampler))
    });
}

fn bench_wsr_ucb(c: &mut Criterion) {
    // The capital process is strictly sequential in the payoff index; this
    // is the per-grid-point unit the RCPS scan runs many of.
    let payoffs: Vec<f64> = (0..800)
        .map(|j| if j % 7 == 0 { 1.0 } else { 0.0 })
        .collect();
    let cfg = WsrConfig::new(0.2).unwrap();
    c.bench_function(&format!("{}/wsr_ucb_800_payoffs", mode()), |b| {
        b.iter(|| wsr_ucb(black_box(&payoffs), 0.0, 1.0, &cfg).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_trial_loop, bench_world_generation, bench_credal_scan, bench_wsr_ucb
}
criterion_main!(benches);

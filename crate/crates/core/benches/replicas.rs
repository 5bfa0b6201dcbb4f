//! Replica throughput: the same batch of RM-ULMC chains mapped sequentially
//! and through the rayon pool.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use kinetic_core::kernels::{run_chain, ChainConfig, InitLaw, KernelKind, LastStep, PhaseState};
use kinetic_core::par;
use kinetic_core::potentials::Potential;
use kinetic_core::rng;

fn replicas(c: &mut Criterion) {
    let pot = Potential::make_gaussian(&[1.0, 4.6, 21.5, 100.0]).unwrap();
    let init = InitLaw::Point(PhaseState::zeros(4));
    let cfg = ChainConfig {
        gamma: 2.0,
        h: 0.05,
        n_steps: 100,
        last_step: LastStep::Ulmc,
        seed: 7,
        kernel: KernelKind::RmUlmc,
    };
    let chain = |r: usize| {
        let mut g = rng::stream(cfg.seed, "chain", r as u64);
        run_chain(&pot, &init, &cfg, cfg.n_steps, false, &mut g).unwrap().final_state
    };
    let mut group = c.benchmark_group("rm_ulmc_replicas");
    group.sample_size(10);
    for n in [64usize, 512] {
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
            b.iter(|| black_box(par::map_sequential(n, chain)))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
            b.iter(|| black_box(par::map_parallel(n, chain)))
        });
    }
    group.finish();
}

criterion_group!(benches, replicas);
criterion_main!(benches);

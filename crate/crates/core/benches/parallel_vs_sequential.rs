//! Thread-parallel vs single-threaded execution of the embarrassingly parallel
//! workloads: oracle quadrature, Monte Carlo mutual information and particle
//! filtering over a dataset.
//!
//! With the default `parallel` feature each workload runs on all cores and on
//! a one-thread pool. `cargo bench --no-default-features` builds the plain
//! sequential fallback (no rayon at all) for comparison.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bpd_core::bpd::{mutual_information, LatentPolicyModel, MiConfig, MiSource};
use bpd_core::experiments::{simulate_humans, SimulatedHuman};
use bpd_core::gridworld::{AppleGridworld, GridworldConfig};
use bpd_core::inference::ParticlePredictor;
use bpd_core::mdp::TabularMdp;
use bpd_core::oracle::{oracle_marginals, OracleConfig};
use bpd_core::par;
use bpd_core::predict::cross_entropy;
use bpd_core::rng;

fn thread_settings() -> Vec<(String, usize)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    if cfg!(feature = "parallel") {
        vec![("rayon-1".into(), 1), (format!("rayon-{all}"), all)]
    } else {
        vec![("sequential".into(), 1)]
    }
}

fn workloads(c: &mut Criterion) {
    let tiny = TabularMdp::random(2, 3, 0.8, &mut rng::stream(1, "bench.mdp", 0)).unwrap();
    let world = AppleGridworld::new(GridworldConfig::compact_ring()).unwrap();
    let mdp = world.mdp();
    let model = LatentPolicyModel::init(mdp.num_states(), mdp.num_actions(), 2, &mut rng::stream(2, "bench.model", 0));
    let humans = SimulatedHuman::population(0.75, 4, 3);
    let data: Vec<_> = humans
        .iter()
        .flat_map(|h| simulate_humans(&world, h, 5, 100, 4).unwrap())
        .collect();
    let mi_cfg = MiConfig {
        num_policies: 20_000,
        ..MiConfig::default()
    };

    let mut group = c.benchmark_group("parallel_vs_sequential");
    group.sample_size(10);
    for (label, threads) in thread_settings() {
        group.bench_with_input(BenchmarkId::new("oracle_quadrature", &label), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || oracle_marginals(&tiny, 2.0, 1.0, &OracleConfig::quadrature(60)).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("mutual_information", &label), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || mutual_information(MiSource::Latent(&model), mdp, &mi_cfg).unwrap()))
        });
        let pf = ParticlePredictor {
            model: &model,
            count: 512,
        };
        group.bench_with_input(BenchmarkId::new("particle_cross_entropy", &label), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || cross_entropy(&pf, &data, 0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, workloads);
criterion_main!(benches);

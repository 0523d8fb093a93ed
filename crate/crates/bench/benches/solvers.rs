use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use evodiff_bench::{initial_states, logsnr_grid, oracle, schedule};
use evodiff_core::solver::{Interp, ZetaPolicy};
use evodiff_core::{run, DataDistribution, EvoDiffConfig, SolverKind};
use std::hint::black_box;

fn kinds() -> Vec<(&'static str, SolverKind)> {
    vec![
        ("ddim", SolverKind::Ddim),
        ("heun", SolverKind::HeunEdm),
        ("dpm2s", SolverKind::DpmSolver2S { r1: 0.5 }),
        ("dpmpp2m", SolverKind::dpmpp2m()),
        (
            "remulti_l",
            SolverKind::remulti(Interp::ExplicitL, ZetaPolicy::VarianceRatio),
        ),
        ("evodiff", SolverKind::evodiff()),
        (
            "evodiff_fresh",
            SolverKind::EvoDiff {
                config: EvoDiffConfig {
                    reuse_probe: false,
                    ..EvoDiffConfig::default()
                },
            },
        ),
    ]
}

fn trajectories(c: &mut Criterion) {
    let dist = DataDistribution::four_mode();
    let s = schedule();
    let mut group = c.benchmark_group("trajectory_gmm_nfe10");
    for (name, kind) in kinds() {
        let grid = logsnr_grid(kind.steps_for_nfe(10));
        let xs = initial_states(2, &grid, 64, 1);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                for x in &xs {
                    let mut o = oracle(&dist, &kind);
                    black_box(run(&kind, &mut o, &grid, &s, x.view()).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn dimension_scaling(c: &mut Criterion) {
    let s = schedule();
    let kind = SolverKind::evodiff();
    let grid = logsnr_grid(10);
    let mut group = c.benchmark_group("evodiff_gaussian_dim");
    for dim in [2, 16, 128] {
        let dist = DataDistribution::anisotropic(dim).unwrap();
        let xs = initial_states(dim, &grid, 16, 2);
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| {
                for x in &xs {
                    let mut o = oracle(&dist, &kind);
                    black_box(run(&kind, &mut o, &grid, &s, x.view()).unwrap());
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, trajectories, dimension_scaling);
criterion_main!(benches);

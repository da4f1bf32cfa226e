use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use rbsde_core::expectation::Driver;
use rbsde_core::lattice::{build_lattice, LadlagProcess, LatticeModel, Mode, TimeGrid};
use rbsde_core::rbsde::{solve_rbsde, solve_rbsde_deterministic, SolverParams};
use rbsde_core::rng::SplitMix64;
use rbsde_core::stopping::{brute_force_value, StoppingRule};

fn lattice(depth: usize) -> LatticeModel {
    build_lattice(TimeGrid::new(1.0, depth).unwrap(), Mode::Diffusion).unwrap()
}

fn random_obstacle(lat: &LatticeModel, seed: u64) -> LadlagProcess {
    let n = lat.steps();
    let mut rng = SplitMix64::new(seed);
    let point: Vec<Vec<f64>> = (0..=n)
        .map(|k| (0..lat.nodes_at(k)).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let right: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..lat.nodes_at(k))
                .map(|i| {
                    let p = point[k][i];
                    if rng.next_bool(0.3) { rng.uniform(-1.0, p) } else { p }
                })
                .collect()
        })
        .collect();
    LadlagProcess::new(lat, point, right).unwrap()
}

fn bench_reflected_solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_rbsde");
    for depth in [6usize, 10, 14] {
        let lat = lattice(depth);
        let xi = random_obstacle(&lat, 7);
        let driver = Driver::abs_z(1.0, 0.0);
        let params = SolverParams::default();
        group.bench_with_input(BenchmarkId::from_parameter(depth), &depth, |b, _| {
            b.iter(|| solve_rbsde(black_box(&lat), &driver, &xi, &params).unwrap())
        });
    }
    group.finish();
}

fn bench_picard_linear(c: &mut Criterion) {
    let lat = lattice(10);
    let xi = random_obstacle(&lat, 11);
    let driver = Driver::linear(0.4, 0.1, 0.0);
    let params = SolverParams::default();
    c.bench_function("picard_linear_n10", |b| {
        b.iter(|| solve_rbsde(black_box(&lat), &driver, &xi, &params).unwrap())
    });
}

fn bench_brute_force_oracle(c: &mut Criterion) {
    let lat = lattice(4);
    let xi = random_obstacle(&lat, 3);
    let driver = Driver::linear(-1.0, 0.0, 0.0);
    let root_rule = StoppingRule::immediate(&lat);
    c.bench_function("brute_force_677_rules", |b| {
        b.iter(|| brute_force_value(black_box(&lat), &driver, &xi, &root_rule).unwrap())
    });
}

fn bench_deterministic_chain(c: &mut Criterion) {
    let grid = TimeGrid::new(1.0, 80).unwrap();
    let driver = Driver::linear(-1.0, 0.0, 0.0);
    let mut point = vec![-10.0; 81];
    point[80] = 1.0;
    let right = vec![-10.0; 80];
    c.bench_function("deterministic_chain_n80", |b| {
        b.iter(|| {
            solve_rbsde_deterministic(black_box(&grid), Mode::Diffusion, &driver, &point, &right)
                .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_reflected_solver,
    bench_picard_linear,
    bench_brute_force_oracle,
    bench_deterministic_chain
);
criterion_main!(benches);

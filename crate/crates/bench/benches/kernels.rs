use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use sqdiv_core::constructions::{cd_trace_montecarlo, sofic_f2_action};
use sqdiv_core::crossed_product::tower_nilpotency_instance;
use sqdiv_core::square_divisibility::{check_subequivalence, construct_at_feasibility_depth, GridRule};
use sqdiv_core::tiling::{greedy_tiling, ow_tile_params};
use sqdiv_core::{ratio, Alphabet, ClopenSet, IntSet, OdometerSystem, Word, WordSet};

fn residues(cells: usize, rs: &[usize]) -> ClopenSet {
    ClopenSet::from_cells(cells, (0..cells).filter(|x| rs.contains(&(x % 4))))
}

fn window() -> WordSet {
    [-1, 0, 1].into_iter().map(|k| Word::generator(0, k)).collect()
}

fn matching(c: &mut Criterion) {
    let mut group = c.benchmark_group("check_subequivalence");
    for depth in [8usize, 12, 16] {
        let sys = OdometerSystem::dyadic(depth).unwrap();
        let action = sys.action();
        let (a, b) = (residues(sys.cells(), &[0]), residues(sys.cells(), &[2, 3]));
        let f: WordSet = (-3..=3).map(|k| Word::generator(0, k)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(sys.cells()), &depth, |bench, _| {
            bench.iter(|| check_subequivalence(black_box(&a), &b, &f, &action).unwrap())
        });
    }
    group.finish();
}

fn sd_construct(c: &mut Criterion) {
    let sys = OdometerSystem::dyadic(2).unwrap();
    let (o1, o2) = (residues(4, &[0, 2]), residues(4, &[1, 3]));
    let e = window();
    c.bench_function("construct_at_feasibility_depth/theta", |bench| {
        bench.iter(|| construct_at_feasibility_depth(&sys, &o1, &o2, &e, GridRule::FromTheta, 16).unwrap())
    });
}

fn crossed_product(c: &mut Criterion) {
    let inst = tower_nilpotency_instance(3, 12).unwrap();
    let a = inst.random_a(3, 0);
    let b = inst.random_a(3, 1);
    c.bench_function("crossed_product/mul", |bench| bench.iter(|| inst.cp.mul(black_box(&a), &b)));
    let mut group = c.benchmark_group("crossed_product");
    group.sample_size(10);
    group.bench_function("rotate_to_nilpotent", |bench| bench.iter(|| inst.run(black_box(&a)).unwrap()));
    group.finish();
}

fn actions(c: &mut Criterion) {
    let e = Alphabet::free2().parse_list("a, b, a b, a b a^-1 b^-1").unwrap();
    c.bench_function("sofic_f2_action/120", |bench| bench.iter(|| sofic_f2_action(&e, &ratio(1, 4), 120).unwrap()));
    let shift: Vec<u32> = (0..500u32).map(|x| (x + 1) % 500).collect();
    let perms = vec![shift.clone(), shift];
    c.bench_function("cd_trace_montecarlo/500x1000", |bench| {
        bench.iter(|| cd_trace_montecarlo(black_box(&perms), 1000, 3).unwrap())
    });
}

fn tiling(c: &mut Criterion) {
    let e = IntSet::interval(-1, 1);
    let eps = ratio(1, 3);
    let params = ow_tile_params(&e, &eps).unwrap();
    let k = IntSet::from_runs([(0, 2_000_000), (2_100_000, 5_000_000)]);
    c.bench_function("greedy_tiling", |bench| {
        bench.iter(|| greedy_tiling(black_box(&k), &params.tiles, &eps, &e).unwrap())
    });
}

criterion_group!(benches, matching, sd_construct, crossed_product, actions, tiling);
criterion_main!(benches);

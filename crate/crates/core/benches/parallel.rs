//! Sequential vs parallel execution of the per-parameter loops.
//!
//! Without the `parallel` feature both variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pmonge::cost::{Family, ParametricCost};
use pmonge::cover::ParameterSpace;
use pmonge::harness::optimality_audit;
use pmonge::kantorovich::{cell_cost_matrix, continuous_plan_path, PathOptions};
use pmonge::monge::{assemble, AssembleOptions, Pipeline};
use pmonge::{Execution, GridDensity};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn tent(n: usize) -> GridDensity {
    GridDensity::from_density_fn(n, |x| 2.0 - 4.0 * (x - 0.5).abs()).unwrap()
}

fn cost_matrix(c: &mut Criterion) {
    let cost = ParametricCost::new(Family::Power { p0: 1.0, p1: 1.0 });
    let mut g = c.benchmark_group("cost_matrix_256");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cell_cost_matrix(&cost, &[0.5], 256, 256, 8, exec).unwrap())
        });
    }
    g.finish();
}

fn plan_path(c: &mut Criterion) {
    let cost = ParametricCost::new(Family::Power { p0: 1.0, p1: 1.0 });
    let n = 64;
    let ts: Vec<Vec<f64>> = (0..9).map(|k| vec![k as f64 / 8.0]).collect();
    let mus = vec![GridDensity::uniform(n); ts.len()];
    let nus = vec![tent(n); ts.len()];
    let mut g = c.benchmark_group("plan_path_64x9");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = PathOptions { warm_start: false, exec, ..PathOptions::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| continuous_plan_path(&cost, &ts, &mus, &nus, 0.01, &opts).unwrap())
        });
    }
    g.finish();
}

fn assembly_and_audit(c: &mut Criterion) {
    let cost = ParametricCost::new(Family::Power { p0: 1.0, p1: 1.0 });
    let n = 64;
    let space = ParameterSpace::uniform(0.0, 1.0, 9).unwrap();
    let mus = vec![GridDensity::uniform(n); space.len()];
    let nus = vec![tent(n); space.len()];
    let mut g = c.benchmark_group("assemble_audit_64x9");
    g.sample_size(10);
    for (name, exec) in MODES {
        let mut opts = AssembleOptions::default();
        opts.path.exec = exec;
        opts.path.warm_start = false;
        g.bench_function(BenchmarkId::new("assemble", name), |b| {
            b.iter(|| assemble(Pipeline::Fixed, mus.clone(), nus.clone(), &cost, &space, 0.05, &opts).unwrap())
        });
        let family = assemble(Pipeline::Fixed, mus.clone(), nus.clone(), &cost, &space, 0.05, &opts).unwrap();
        g.bench_function(BenchmarkId::new("audit", name), |b| b.iter(|| optimality_audit(&family, 8, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, cost_matrix, plan_path, assembly_and_audit);
criterion_main!(benches);

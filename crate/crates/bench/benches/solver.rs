use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use monovi::{
    linear_bracket_helper, lower_bracket_helper, solve_extremal, solve_vi, Bracket, Decomposition,
    Direction, DiscreteProblem, Mesh, MonotoneGraph, NodalField, OperatorSpec, PiecewiseMonotone,
    PiecewiseSpec, Side, Tolerances, ViTolerances,
};

fn problem(mesh: Mesh, pexp: f64, h: PiecewiseSpec) -> DiscreteProblem {
    let d = Decomposition::from_specs(&PiecewiseSpec::constant(1.0), &h, Side::Right).unwrap();
    DiscreteProblem::new(Arc::new(mesh), OperatorSpec::p_laplacian(pexp).unwrap(), d)
}

fn resolvent(c: &mut Criterion) {
    let spec = PiecewiseSpec::linear(1.0)
        .with_jump(-0.5, 1.0)
        .with_jump(0.2, 5.0)
        .with_jump(0.7, 2.0);
    let graph = MonotoneGraph::new(PiecewiseMonotone::new(spec).unwrap());
    let ys: Vec<f64> = (0..1000).map(|k| -2.0 + 4e-3 * k as f64).collect();
    c.bench_function("resolvent/1000 points", |b| {
        b.iter(|| ys.iter().map(|&y| graph.resolvent(0.3, y).unwrap()).sum::<f64>())
    });
}

fn apply_a(c: &mut Criterion) {
    let mut group = c.benchmark_group("apply_a");
    for (name, mesh) in [
        ("1d n=1000", Mesh::interval(0.0, 1.0, 1000).unwrap()),
        ("2d 64x64", Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 64, 64).unwrap()),
    ] {
        for pexp in [2.0, 3.0] {
            let p = problem(mesh.clone(), pexp, PiecewiseSpec::default());
            let u = NodalField::from_fn(p.mesh(), |x| (x[0] * (1.0 - x[0])).sin() + x[1]);
            group.bench_with_input(BenchmarkId::new(name, pexp), &u, |b, u| {
                b.iter(|| p.apply_a(black_box(u)).unwrap())
            });
        }
    }
    group.finish();
}

fn inner_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_vi");
    for pexp in [2.0, 3.0] {
        let p = problem(
            Mesh::interval(0.0, 1.0, 200).unwrap(),
            pexp,
            PiecewiseSpec::heaviside(0.02, 2.0),
        );
        let z = NodalField::zeros(p.mesh().num_nodes());
        let tol = ViTolerances::for_dim(1);
        group.bench_with_input(BenchmarkId::new("1d n=200 heaviside", pexp), &z, |b, z| {
            b.iter(|| solve_vi(&p, z, z, &tol).unwrap())
        });
    }
    group.finish();
}

fn extremal(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_extremal");
    group.sample_size(20);
    for (name, mesh, tol) in [
        ("1d n=200", Mesh::interval(0.0, 1.0, 200).unwrap(), Tolerances::for_dim(1)),
        ("2d 32x32", Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 32, 32).unwrap(), Tolerances::for_dim(2)),
    ] {
        let p = problem(mesh, 2.0, PiecewiseSpec::heaviside(0.05, 0.5));
        let mut bracket = Bracket::new(
            lower_bracket_helper(&p, 0.0).unwrap(),
            linear_bracket_helper(&p, 1.0).unwrap(),
        )
        .unwrap();
        assert!(bracket.verify(&p, 1e-9).unwrap().passed);
        group.bench_function(name, |b| {
            b.iter(|| solve_extremal(&p, &bracket, Direction::FromUpper, &tol).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, resolvent, apply_a, inner_solve, extremal);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;
use vkflex::calculus::{fd_hessian, half_gram};
use vkflex::conformal::ConformalSolver;
use vkflex::mollify::Mollifier;
use vkflex::norms::holder;
use vkflex::stage::{run_stage, StageParams};
use vkflex::{Field, Grid2, Rect, Shape};

fn problem(n: usize) -> (Grid2, Field, Field, Field) {
    let g = Grid2::new(Rect::new(0.0, 0.3, 0.0, 0.3), 0.06, n).unwrap();
    let v = Field::from_fn(&g, Shape::vector(2), |x, y, o| {
        o[0] = 0.3 * (3.0 * x + 1.0).sin() * (2.0 * y).cos();
        o[1] = 0.3 * (x - 2.0 * y).cos();
    });
    let w = Field::zeros(&g, Shape::vector(2));
    let d = Field::sym_fn(&g, |x, y| {
        let p = 0.1 * (1.0 + 0.2 * (x + y).sin());
        [p, 0.01 * (x - y).cos(), p]
    });
    let a = half_gram(&v).unwrap().add(&d).unwrap();
    (g, v, w, a)
}

fn bench(c: &mut Criterion) {
    let (g, v, w, a) = problem(256);
    let d = a.sub(&half_gram(&v).unwrap()).unwrap();
    let moll = Mollifier::new(8.0 * g.h(), g.h()).unwrap();
    let solver = ConformalSolver::new(&g).unwrap();
    let h = g.h();
    let stage = StageParams {
        r0: 2.0,
        ..StageParams::new(12.0 * h, 0.25 / h)
    };
    let pools = [
        ("sequential", ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", ThreadPoolBuilder::new().build().unwrap()),
    ];
    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (name, pool) in &pools {
        group.bench_function(BenchmarkId::new("mollify", name), |b| {
            b.iter(|| pool.install(|| moll.apply(&v).unwrap()))
        });
        group.bench_function(BenchmarkId::new("hessian", name), |b| {
            b.iter(|| pool.install(|| fd_hessian(&v).unwrap()))
        });
        group.bench_function(BenchmarkId::new("holder", name), |b| {
            b.iter(|| pool.install(|| holder(&v, 0.5).unwrap()))
        });
        group.bench_function(BenchmarkId::new("decompose", name), |b| {
            b.iter(|| pool.install(|| solver.decompose(&d).unwrap()))
        });
        group.bench_function(BenchmarkId::new("stage", name), |b| {
            b.iter(|| pool.install(|| run_stage(&v, &w, &a, &stage).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use homollg::cell::{solve_all, PeriodicCoefficientSet};
use homollg::fem::assembly::assemble_stiffness;
use homollg::fem::{solve_linear, BoundaryKind, StructuredMesh};
use homollg::llg::{bubble_field, step, Model, ModelSpec, Scale, Scheme, StepOptions, Terms};

fn assembly(c: &mut Criterion) {
    let coeffs = PeriodicCoefficientSet::cosine_product(2);
    let mesh = StructuredMesh::new(2, 128, BoundaryKind::Periodic).unwrap();
    c.bench_function("stiffness 128x128", |b| {
        b.iter(|| assemble_stiffness(black_box(&mesh), |y| coeffs.a(y)).unwrap())
    });
}

fn cell_solve(c: &mut Criterion) {
    let coeffs = PeriodicCoefficientSet::cosine_product(2);
    let mesh = StructuredMesh::new(2, 64, BoundaryKind::Periodic).unwrap();
    let k = assemble_stiffness(&mesh, |y| coeffs.a(y)).unwrap();
    let n = mesh.n_dofs();
    let b: Vec<f64> = (0..n).map(|i| ((i % 7) as f64 - 3.0) / n as f64).collect();
    let mean = b.iter().sum::<f64>() / n as f64;
    let b: Vec<f64> = b.iter().map(|x| x - mean).collect();
    c.bench_function("cg zero-mean 64x64", |bench| {
        bench.iter(|| solve_linear(&k, black_box(&b), 1e-10, true).unwrap())
    });
    c.bench_function("cell problems 64x64", |bench| {
        bench.iter(|| solve_all(black_box(&coeffs), 64, false).unwrap())
    });
}

fn llg_step(c: &mut Criterion) {
    let coeffs = PeriodicCoefficientSet::cosine_product(2);
    let (_, homog) = solve_all(&coeffs, 64, false).unwrap();
    let mesh = Arc::new(StructuredMesh::new(2, 64, BoundaryKind::Periodic).unwrap());
    let spec = ModelSpec {
        scale: Scale::Multiscale { n_periods: 4 },
        terms: Terms::exchange_only(),
        alpha: 1.0,
        dim: 2,
        coeffs,
        homog: Some(homog),
    };
    let model = Model::new(spec, mesh.clone()).unwrap();
    let m = bubble_field(mesh);
    let opts = StepOptions::default();
    let mut group = c.benchmark_group("llg step 64x64 dt 1e-5");
    group.sample_size(10);
    for scheme in [Scheme::Original, Scheme::Improved] {
        group.bench_function(scheme.to_string(), |b| {
            b.iter(|| step(&model, black_box(&m), 1e-5, scheme, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, assembly, cell_solve, llg_step);
criterion_main!(benches);

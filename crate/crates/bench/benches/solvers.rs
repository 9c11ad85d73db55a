use criterion::{criterion_group, criterion_main, Criterion};
use platehom::cell::{CellGeometry, PhaseAssignment, Primitive};
use platehom::fine::{solve_linear_fine, FineGeometry, FineSolverOptions};
use platehom::homogenize::{homogenize_cell, Normalization};
use platehom::linalg::CgOptions;
use platehom::plate::{assemble_plate_system, solve_plate, LoadSpec, PlateMesh, Side};
use platehom::HookeTensor;

fn laminate() -> (CellGeometry, PhaseAssignment) {
    let geom = CellGeometry {
        background: 0,
        primitives: vec![(Primitive::Layer { y3_min: 0.0, y3_max: 1.0 }, 1)],
        void_phase: None,
    };
    let phases = PhaseAssignment::new(vec![
        Some(HookeTensor::isotropic(1.0, 1.0).unwrap()),
        Some(HookeTensor::isotropic(4.0, 3.0).unwrap()),
    ]);
    (geom, phases)
}

fn cell_solve(c: &mut Criterion) {
    let (geom, phases) = laminate();
    c.bench_function("cell_laminate_8x8x8", |b| {
        b.iter(|| homogenize_cell(&geom, &phases, [8, 8, 8], 1, CgOptions::default(), Normalization::Cell).unwrap())
    });
}

fn plate_solve(c: &mut Criterion) {
    let (geom, phases) = laminate();
    let cell = homogenize_cell(&geom, &phases, [2, 2, 4], 2, CgOptions::default(), Normalization::Cell).unwrap();
    let mesh = PlateMesh::new([1.0, 1.0], [32, 32], vec![Side::X0]).unwrap();
    let load = LoadSpec::uniform([0.5, 0.0, 1.0]);
    c.bench_function("plate_32x32", |b| {
        b.iter(|| solve_plate(&assemble_plate_system(&mesh, &cell.tensor, &load, Default::default()).unwrap()).unwrap())
    });
}

fn fine_solve(c: &mut Criterion) {
    let phases = PhaseAssignment::new(vec![Some(HookeTensor::isotropic(1.0, 1.0).unwrap())]);
    let geom =
        FineGeometry::new(&CellGeometry::homogeneous(0), &phases, [2, 2, 2], 2, 0.125, [1.0, 1.0], vec![Side::X0]).unwrap();
    let load = LoadSpec::uniform([0.5, 0.0, 1.0]);
    let mut group = c.benchmark_group("fine");
    group.sample_size(10);
    group.bench_function("homogeneous_eps_1_8", |b| {
        b.iter(|| solve_linear_fine(&geom, &load, 1, FineSolverOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, cell_solve, plate_solve, fine_solve);
criterion_main!(benches);

use nalgebra::Matrix3;
use platehom::cell::{build_cell_mesh, CellGeometry, PhaseAssignment, Primitive};
use platehom::corrector::{assemble_cell_stiffness, corrector_rhs, solve_correctors, CorrectorMode};
use platehom::homogenize::{homogenize_cell, plane_stress_condensation, two_scale_energy_min, Normalization};
use platehom::linalg::{dot, CgOptions};
use platehom::{HookeTensor, PlateStrainPair};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn iso(l: f64, m: f64) -> HookeTensor {
    HookeTensor::isotropic(l, m).unwrap()
}

fn random_pair(rng: &mut ChaCha8Rng) -> PlateStrainPair {
    PlateStrainPair::from_array(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
}

/// Layers `(y3_min, y3_max, hooke)` covering (−1, 1).
fn layered(layers: &[(f64, f64, HookeTensor)]) -> (CellGeometry, PhaseAssignment) {
    let geom = CellGeometry {
        background: 0,
        primitives: layers
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, (a, b, _))| (Primitive::Layer { y3_min: *a, y3_max: *b }, i))
            .collect(),
        void_phase: None,
    };
    (geom, PhaseAssignment::new(layers.iter().map(|l| Some(l.2.clone())).collect()))
}

/// Lamination integrals of the plane-stress law `S(y3)` for the strain
/// `m − y3 κ`: `A = ½∫S`, `B = −½∫y3 S`, `C = ½∫y3² S`.
fn lamination_oracle(layers: &[(f64, f64, HookeTensor)]) -> [Matrix3<f64>; 3] {
    let mut out = [Matrix3::zeros(); 3];
    for (a, b, h) in layers {
        let s = plane_stress_condensation(h);
        for (k, m) in out.iter_mut().enumerate() {
            let p = k as i32 + 1;
            let sign = if k == 1 { -1.0 } else { 1.0 };
            *m += s * (sign * 0.5 * (b.powi(p) - a.powi(p)) / p as f64);
        }
    }
    out
}

#[test]
fn galerkin_replay_on_8x8x8_cell() {
    let (geom, phases) = layered(&[(-1.0, 0.0, iso(1.0, 1.0)), (0.0, 1.0, iso(3.0, 2.0))]);
    let mesh = build_cell_mesh(&geom, [8, 8, 8], 1).unwrap();
    let stiffness = assemble_cell_stiffness(&mesh, &phases).unwrap();
    let set = solve_correctors(&stiffness, &mesh, &phases, CgOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for mode in CorrectorMode::ALL {
        let chi = set.field(mode);
        let rhs = corrector_rhs(&mesh, &phases, &stiffness.dofmap, mode);
        let kchi = stiffness.matrix.apply(chi);
        let chi_norm = stiffness.matrix.inner(chi, chi).sqrt();
        for _ in 0..100 {
            let v: Vec<f64> = (0..chi.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = dot(&kchi, &v) - dot(&rhs, &v);
            let scale = stiffness.matrix.inner(&v, &v).sqrt() * chi_norm.max(1.0);
            assert!(r.abs() <= 1e-9 * scale, "{mode:?}: residual {r:e}");
        }
    }
}

#[test]
fn laminate_matches_lamination_integrals() {
    let layers = [(-1.0, -0.5, iso(2.0, 1.0)), (-0.5, 0.5, iso(0.5, 0.3)), (0.5, 1.0, iso(4.0, 5.0))];
    let (geom, phases) = layered(&layers);
    let cell = homogenize_cell(&geom, &phases, [2, 2, 4], 2, CgOptions::default(), Normalization::Cell).unwrap();
    let [a, b, c] = lamination_oracle(&layers);
    let t = &cell.tensor;
    let rel = |x: &Matrix3<f64>, y: &Matrix3<f64>| (x - y).abs().max() / y.abs().max();
    assert!(rel(&t.a, &a) < 1e-9, "A {} vs {}", t.a, a);
    assert!(rel(&t.c, &c) < 1e-9, "C {} vs {}", t.c, c);
    // the stacking is not mirror-symmetric, so B is nonzero
    assert!(b.abs().max() > 1e-3);
    assert!((t.b - b).abs().max() < 1e-9 * a.abs().max(), "B {} vs {}", t.b, b);
}

#[test]
fn mirror_symmetric_sandwich_has_no_coupling() {
    let skin = iso(3.0, 2.0);
    let layers = [(-1.0, -0.5, skin.clone()), (-0.5, 0.5, iso(0.4, 0.2)), (0.5, 1.0, skin)];
    let (geom, phases) = layered(&layers);
    let cell = homogenize_cell(&geom, &phases, [2, 2, 4], 2, CgOptions::default(), Normalization::Cell).unwrap();
    assert!(cell.tensor.b.abs().max() < 1e-10 * cell.tensor.a.abs().max(), "B = {}", cell.tensor.b);
}

#[test]
fn two_scale_minimum_matches_quadratic_form_for_random_pairs() {
    let (geom, phases) = layered(&[(-1.0, 0.0, iso(1.0, 1.0)), (0.0, 1.0, iso(2.0, 4.0))]);
    let cell = homogenize_cell(&geom, &phases, [8, 8, 8], 1, CgOptions::default(), Normalization::Cell).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let p = random_pair(&mut rng);
        let m = two_scale_energy_min(&p, &cell.mesh, &cell.phases, &cell.stiffness, CgOptions::default(), Normalization::Cell)
            .unwrap();
        let q = cell.tensor.quadratic_form(&p);
        assert!((m.energy - q).abs() <= 1e-8 * q, "{} vs {q}", m.energy);
    }
}

#[test]
fn perforation_lowers_the_quadratic_form() {
    let phases = PhaseAssignment::new(vec![Some(iso(1.0, 1.0)), None]);
    let solid = CellGeometry::homogeneous(0);
    let holed = CellGeometry {
        background: 0,
        primitives: vec![(Primitive::Cylinder { center: [0.5, 0.5], radius: 0.3, y3_range: [-1.0, 1.0] }, 1)],
        void_phase: Some(1),
    };
    let a = homogenize_cell(&solid, &phases, [8, 8, 2], 1, CgOptions::default(), Normalization::Cell).unwrap();
    let b = homogenize_cell(&holed, &phases, [8, 8, 2], 1, CgOptions::default(), Normalization::Cell).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let p = random_pair(&mut rng);
        assert!(b.tensor.quadratic_form(&p) < a.tensor.quadratic_form(&p));
    }
    // the perforated tensor is still coercive
    assert!(b.tensor.min_eigenvalue() > 0.0);
    // normalizing by the material volume scales by |𝒴|/|𝒴*|
    let m = homogenize_cell(&holed, &phases, [8, 8, 2], 1, CgOptions::default(), Normalization::Material).unwrap();
    let ratio = 2.0 / b.mesh.material_volume();
    assert!(((m.tensor.a - b.tensor.a * ratio).abs().max()) < 1e-12 * m.tensor.a.abs().max());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Homogeneous cells reproduce plane-stress condensation, `C = A/3` and `B = 0`.
    #[test]
    fn homogeneous_cell_closed_form(lambda in 0.0f64..4.0, mu in 0.2f64..4.0) {
        let phases = PhaseAssignment::new(vec![Some(iso(lambda, mu))]);
        let cell = homogenize_cell(&CellGeometry::homogeneous(0), &phases, [2, 2, 2], 2, CgOptions::default(), Normalization::Cell)
            .unwrap();
        let aps = plane_stress_condensation(&iso(lambda, mu));
        let scale = aps.abs().max();
        prop_assert!((cell.tensor.a - aps).abs().max() <= 1e-10 * scale);
        prop_assert!((cell.tensor.c - aps / 3.0).abs().max() <= 1e-10 * scale);
        prop_assert!(cell.tensor.b.abs().max() <= 1e-10 * scale);
    }

    /// Scaling every phase scales the tensor.
    #[test]
    fn tensor_is_linear_in_material_scale(s in 0.1f64..10.0) {
        let (geom, phases) = layered(&[(-1.0, 0.0, iso(1.0, 1.0)), (0.0, 1.0, iso(2.0, 0.5))]);
        let a = homogenize_cell(&geom, &phases, [2, 2, 2], 1, CgOptions::default(), Normalization::Cell).unwrap();
        let b = homogenize_cell(&geom, &phases.scaled(s), [2, 2, 2], 1, CgOptions::default(), Normalization::Cell).unwrap();
        prop_assert!((b.tensor.block() - a.tensor.block() * s).abs().max() <= 1e-10 * s * a.tensor.block().abs().max());
    }
}

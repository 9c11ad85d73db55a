use nalgebra::{DMatrix, DVector};
use platehom::cell::{CellGeometry, PhaseAssignment};
use platehom::elastic::Energy;
use platehom::fine::{
    energy_expansion, linearization_study, nonlinear_energy, scaled_nonlinear_energy, solve_linear_fine,
    FineGeometry, FineSolverOptions,
};
use platehom::plate::{LoadSpec, Side};
use platehom::HookeTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn geometry(eps: f64) -> FineGeometry {
    let phases = PhaseAssignment::new(vec![Some(HookeTensor::isotropic(1.0, 1.0).unwrap())]);
    FineGeometry::new(&CellGeometry::homogeneous(0), &phases, [2, 2, 2], 1, eps, [1.0, 1.0], vec![Side::X0]).unwrap()
}

fn load() -> LoadSpec {
    LoadSpec::uniform([0.5, 0.0, 1.0])
}

#[test]
fn direct_energy_is_a_quartic_in_h_matching_the_expansion() {
    let g = geometry(0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let u: Vec<f64> = (0..3 * g.n_nodes()).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let hs: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
    // least-squares fit of J(id + h u)/h² = c₀ + c₁ h + c₂ h² through five samples
    let vander = DMatrix::from_fn(hs.len(), 3, |i, j| hs[i].powi(j as i32));
    let rhs = DVector::from_iterator(
        hs.len(),
        hs.iter().map(|&h| {
            let d: Vec<f64> = u.iter().map(|v| h * v).collect();
            nonlinear_energy(&g, &d, &load(), h, 1).value().unwrap() / (h * h)
        }),
    );
    let c = vander.clone().svd(true, true).solve(&rhs, 1e-14).unwrap();
    let exp = energy_expansion(&g, &u, &load(), 1);
    let scale = exp.quadratic.abs() + exp.load.abs();
    assert!((c[0] - (exp.quadratic - exp.load)).abs() < 1e-9 * scale, "{} vs {}", c[0], exp.quadratic - exp.load);
    assert!((c[1] - exp.cubic).abs() < 1e-9 * scale, "{} vs {}", c[1], exp.cubic);
    assert!((c[2] - exp.quartic).abs() < 1e-9 * scale, "{} vs {}", c[2], exp.quartic);
    for &h in &hs {
        let scaled = scaled_nonlinear_energy(&g, &u, &load(), h, 1).value().unwrap();
        assert!((scaled - exp.eval(h)).abs() < 1e-12 * scale);
    }
}

#[test]
fn doubling_the_load_scales_the_remainder_between_cubic_and_quartic() {
    let g = geometry(0.25);
    let opts = FineSolverOptions::default();
    let hs = [1e-3, 1e-2];
    let one = solve_linear_fine(&g, &load(), 1, opts).unwrap();
    let two = solve_linear_fine(&g, &load().scaled(2.0), 1, opts).unwrap();
    let r1 = linearization_study(&g, &one, &load(), &hs);
    let r2 = linearization_study(&g, &two, &load().scaled(2.0), &hs);
    for (a, b) in r1.rows.iter().zip(&r2.rows) {
        let ratio = b.remainder.unwrap() / a.remainder.unwrap();
        assert!((8.0 - 1e-6..=16.0 + 1e-6).contains(&ratio), "h = {}: ratio {ratio}", a.h);
    }
}

#[test]
fn zero_displacement_has_zero_remainder() {
    let g = geometry(0.5);
    let zero = vec![0.0; 3 * g.n_nodes()];
    for h in [1e-3, 0.1, 1.0] {
        assert_eq!(scaled_nonlinear_energy(&g, &zero, &load(), h, 1), Energy::Finite(0.0));
    }
}

#[test]
fn minimum_energy_is_half_the_negative_work_and_scales_boundedly() {
    let opts = FineSolverOptions::default();
    let mut rescaled = Vec::new();
    for eps in [0.5, 0.25] {
        let g = geometry(eps);
        let sol = solve_linear_fine(&g, &load(), 1, opts).unwrap();
        assert!(sol.rel_residual < 1e-10);
        assert!((sol.m_eps + 0.5 * sol.load_term).abs() <= 1e-10 * sol.m_eps.abs());
        let exp = energy_expansion(&g, &sol.u, &load(), 1);
        assert!((exp.quadratic - exp.load - sol.m_eps).abs() <= 1e-12 * sol.m_eps.abs());
        rescaled.push(sol.rescaled());
    }
    assert!(rescaled.iter().all(|r| *r < 0.0));
    // same order of magnitude across the ladder
    assert!(rescaled[0] / rescaled[1] < 4.0 && rescaled[1] / rescaled[0] < 4.0, "{rescaled:?}");
}

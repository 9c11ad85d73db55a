//! Membrane and bending cell problems on the periodic reference cell.
//!
//! For each in-plane index pair the corrector `χ` is the zero-mean periodic
//! field with
//!
//! ```text
//! ∫_𝒴* a (L + e_y(χ)) : e_y(w) dy = 0   for all periodic w,
//! ```
//!
//! where the load matrix is `L = M^{αβ}` (membrane) or `L = −y₃ M^{αβ}` (bending).

use rayon::prelude::*;

use crate::cell::{periodic_dof_map, CellError, CellMesh, DofMap, PhaseAssignment};
use crate::elastic::{basis_matrix, HookeTensor, Mat3, SymMat3};
use crate::fem::{displacement_gradient, strain_operator, HexElement};
use crate::linalg::{pcg, CgOptions, CgStats, CsrBuilder, CsrMatrix, Deflation, SolveError};

#[derive(Debug, Clone, thiserror::Error)]
pub enum CorrectorError {
    #[error("cell phases: {0}")]
    Phase(#[from] CellError),
    #[error("{mode:?} corrector: {source}")]
    Solve { mode: CorrectorMode, source: SolveError },
}

/// In-plane index pair of a basis matrix `M^{αβ}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    C11,
    C22,
    C12,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::C11, Component::C22, Component::C12];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn indices(self) -> (usize, usize) {
        match self {
            Component::C11 => (1, 1),
            Component::C22 => (2, 2),
            Component::C12 => (1, 2),
        }
    }

    pub fn basis(self) -> SymMat3 {
        let (n, p) = self.indices();
        basis_matrix(n, p)
    }

    /// Multiplicity of `M^{αβ}` in `Σ_{n,p} e_np M^{np}` written with the
    /// tensor components `(e11, e22, e12)`.
    pub fn multiplicity(self) -> f64 {
        if self == Component::C12 {
            2.0
        } else {
            1.0
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Component::C11 => "11",
            Component::C22 => "22",
            Component::C12 => "12",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CorrectorMode {
    Membrane(Component),
    Bending(Component),
}

impl CorrectorMode {
    /// `χ^m_11, χ^m_22, χ^m_12, χ^b_11, χ^b_22, χ^b_12`.
    pub const ALL: [CorrectorMode; 6] = [
        CorrectorMode::Membrane(Component::C11),
        CorrectorMode::Membrane(Component::C22),
        CorrectorMode::Membrane(Component::C12),
        CorrectorMode::Bending(Component::C11),
        CorrectorMode::Bending(Component::C22),
        CorrectorMode::Bending(Component::C12),
    ];

    pub fn index(self) -> usize {
        match self {
            CorrectorMode::Membrane(c) => c.index(),
            CorrectorMode::Bending(c) => 3 + c.index(),
        }
    }

    pub fn component(self) -> Component {
        match self {
            CorrectorMode::Membrane(c) | CorrectorMode::Bending(c) => c,
        }
    }

    /// Load matrix `M^{αβ}` or `−y₃ M^{αβ}`.
    pub fn load_matrix(self, y3: f64) -> SymMat3 {
        match self {
            CorrectorMode::Membrane(c) => c.basis(),
            CorrectorMode::Bending(c) => (-y3) * c.basis(),
        }
    }

    pub fn label(self) -> String {
        match self {
            CorrectorMode::Membrane(c) => format!("chi_m_{}", c.label()),
            CorrectorMode::Bending(c) => format!("chi_b_{}", c.label()),
        }
    }
}

/// Periodic cell stiffness `∫_𝒴* 2 a e(φ_i) : e(φ_j)` and its dof numbering.
#[derive(Clone, Debug)]
pub struct CellStiffness {
    pub matrix: CsrMatrix,
    pub dofmap: DofMap,
}

/// Element stiffness per phase id; all cell elements share one box size.
fn phase_stiffness(mesh: &CellMesh, phases: &PhaseAssignment) -> Vec<Option<Vec<f64>>> {
    let el = mesh.reference_element();
    let used: Vec<bool> = (0..phases.tensors.len())
        .map(|p| mesh.element_phase.iter().zip(&mesh.material).any(|(q, m)| *m && *q == p))
        .collect();
    phases
        .tensors
        .par_iter()
        .zip(used)
        .map(|(t, u)| if u { t.as_ref().map(|h| el.stiffness(h)) } else { None })
        .collect()
}

pub fn assemble_cell_stiffness(mesh: &CellMesh, phases: &PhaseAssignment) -> Result<CellStiffness, CorrectorError> {
    phases.validate(mesh)?;
    let dofmap = periodic_dof_map(mesh);
    let local = phase_stiffness(mesh, phases);
    let elements: Vec<(usize, Vec<Option<usize>>)> = (0..mesh.n_elements())
        .filter(|&e| mesh.material[e])
        .map(|e| (e, dofmap.element_dofs(mesh, mesh.element_coords(e))))
        .collect();
    let mut builder = CsrBuilder::from_elements(dofmap.n_dofs(), elements.iter().map(|(_, d)| d.as_slice()));
    for (e, dofs) in &elements {
        let ke = local[mesh.element_phase[*e]].as_ref().expect("validated phase");
        builder.add_element(dofs, ke);
    }
    Ok(CellStiffness { matrix: builder.finish(), dofmap })
}

/// `rhs_i = −∫_𝒴* 2 a L(y₃) : e(φ_i)` for a macroscopic strain profile `L(y₃)`.
pub fn macro_strain_rhs(
    mesh: &CellMesh,
    phases: &PhaseAssignment,
    dofmap: &DofMap,
    load: impl Fn(f64) -> SymMat3,
) -> Vec<f64> {
    let el = mesh.reference_element();
    let quad: Vec<_> = el.quadrature().into_iter().map(|(xi, w)| (xi, w, strain_operator(&el.eval(xi).grads))).collect();
    let mut rhs = vec![0.0; dofmap.n_dofs()];
    for e in 0..mesh.n_elements() {
        if !mesh.material[e] {
            continue;
        }
        let hooke = phases.tensor(mesh.element_phase[e]).expect("material phase");
        let ec = mesh.element_coords(e);
        let origin = mesh.element_origin(ec);
        let h = el.size();
        let dofs = dofmap.element_dofs(mesh, ec);
        for (xi, w, b) in &quad {
            let y3 = origin[2] + xi[2] * h[2];
            let stress = hooke.apply_voigt(&load(y3).to_voigt_strain());
            for (i, dof) in dofs.iter().enumerate() {
                if let Some(d) = dof {
                    let s: f64 = (0..6).map(|t| b[i][t] * stress[t]).sum();
                    rhs[*d] -= 2.0 * w * s;
                }
            }
        }
    }
    rhs
}

pub fn corrector_rhs(mesh: &CellMesh, phases: &PhaseAssignment, dofmap: &DofMap, mode: CorrectorMode) -> Vec<f64> {
    macro_strain_rhs(mesh, phases, dofmap, |y3| mode.load_matrix(y3))
}

/// Solves `K x = rhs` on the zero-mean periodic space.
pub fn solve_periodic(stiffness: &CellStiffness, rhs: &[f64], opts: CgOptions) -> Result<(Vec<f64>, CgStats), SolveError> {
    let deflation = Deflation::translations(stiffness.dofmap.n_dofs(), 3);
    let (mut x, stats) = pcg(&stiffness.matrix, rhs, Some(&deflation), opts)?;
    stiffness.dofmap.project_zero_mean(&mut x);
    Ok((x, stats))
}

/// The six correctors as dof vectors over the periodic numbering.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectorSet {
    /// Indexed by [`CorrectorMode::index`].
    pub fields: Vec<Vec<f64>>,
    pub stats: Vec<CgStats>,
}

impl CorrectorSet {
    pub fn field(&self, mode: CorrectorMode) -> &[f64] {
        &self.fields[mode.index()]
    }
}

pub fn solve_correctors(
    stiffness: &CellStiffness,
    mesh: &CellMesh,
    phases: &PhaseAssignment,
    opts: CgOptions,
) -> Result<CorrectorSet, CorrectorError> {
    let solved: Vec<(Vec<f64>, CgStats)> = CorrectorMode::ALL
        .par_iter()
        .map(|&mode| {
            let rhs = corrector_rhs(mesh, phases, &stiffness.dofmap, mode);
            solve_periodic(stiffness, &rhs, opts).map_err(|source| CorrectorError::Solve { mode, source })
        })
        .collect::<Result<_, _>>()?;
    let (fields, stats) = solved.into_iter().unzip();
    Ok(CorrectorSet { fields, stats })
}

/// Nodal values of a dof field on one element (zeros on inactive nodes).
pub fn gather(mesh: &CellMesh, dofmap: &DofMap, field: &[f64], e: [usize; 3]) -> Vec<f64> {
    dofmap.element_dofs(mesh, e).iter().map(|d| d.map(|i| field[i]).unwrap_or(0.0)).collect()
}

/// `∇_y u` of a cell dof field at a local point of an element.
pub fn cell_gradient(mesh: &CellMesh, dofmap: &DofMap, el: &HexElement, field: &[f64], e: [usize; 3], xi: [f64; 3]) -> Mat3 {
    displacement_gradient(&el.eval(xi).grads, &gather(mesh, dofmap, field, e))
}

/// Polarized cell energy `∫_𝒴* a(E₁ + e(u₁)) : (E₂ + e(u₂))` for macro strain
/// profiles `E(y₃)` and periodic fields `u` (absent fields count as zero).
pub fn cell_energy_pair(
    mesh: &CellMesh,
    phases: &PhaseAssignment,
    dofmap: &DofMap,
    first: (&dyn Fn(f64) -> SymMat3, Option<&[f64]>),
    second: (&dyn Fn(f64) -> SymMat3, Option<&[f64]>),
) -> f64 {
    let el = mesh.reference_element();
    let quad: Vec<_> = el.quadrature().into_iter().map(|(xi, w)| (xi, w, el.eval(xi).grads)).collect();
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        if !mesh.material[e] {
            continue;
        }
        let hooke: &HookeTensor = phases.tensor(mesh.element_phase[e]).expect("material phase");
        let ec = mesh.element_coords(e);
        let origin = mesh.element_origin(ec);
        let u1 = first.1.map(|f| gather(mesh, dofmap, f, ec));
        let u2 = second.1.map(|f| gather(mesh, dofmap, f, ec));
        for (xi, w, grads) in &quad {
            let y3 = origin[2] + xi[2] * el.size()[2];
            let mut s1 = (first.0)(y3);
            if let Some(u) = &u1 {
                s1 += crate::fem::strain_from_nodal(grads, u);
            }
            let mut s2 = (second.0)(y3);
            if let Some(u) = &u2 {
                s2 += crate::fem::strain_from_nodal(grads, u);
            }
            total += w * hooke.bilinear_form(&s1, &s2);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{build_cell_mesh, CellGeometry, Primitive};
    use crate::linalg::dot;

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

    #[test]
    fn stiffness_symmetric_with_translation_kernel() {
        let (geom, phases) = laminate();
        let mesh = build_cell_mesh(&geom, [3, 3, 4], 1).unwrap();
        let k = assemble_cell_stiffness(&mesh, &phases).unwrap();
        assert!(k.matrix.max_asymmetry() < 1e-14);
        for c in 0..3 {
            let v: Vec<f64> = (0..k.dofmap.n_dofs()).map(|i| if i % 3 == c { 1.0 } else { 0.0 }).collect();
            let r = k.matrix.apply(&v);
            assert!(r.iter().all(|x| x.abs() < 1e-12));
        }
        // exactly three zero eigenvalues
        let ev = k.matrix.dense_eigenvalues();
        assert!(ev[..3].iter().all(|x| x.abs() < 1e-10), "{:?}", &ev[..4]);
        assert!(ev[3] > 1e-4, "fourth eigenvalue {}", ev[3]);
    }

    #[test]
    fn affine_field_energy_matches_closed_form() {
        // u1 = s y3 gives 2 e13 = s
        let (geom, phases) = laminate();
        let mesh = build_cell_mesh(&geom, [2, 2, 4], 1).unwrap();
        let k = assemble_cell_stiffness(&mesh, &phases).unwrap();
        let s = 0.3;
        let mut u = vec![0.0; k.dofmap.n_dofs()];
        for m in 0..mesh.n_masters() {
            let md = mesh.master_dims();
            let z = m / (md[0] * md[1]);
            let y3 = mesh.node_position([0, 0, z])[2];
            u[k.dofmap.dof(m, 0).unwrap()] = s * y3;
        }
        // closed form: strain e13 = s/2, Q = μ · 2 (s/2)² per unit volume; energy uᵀKu = 2 ∫ Q
        let expected = 2.0 * (1.0 * 0.5 * s * s * 1.0 + 3.0 * 0.5 * s * s * 1.0);
        assert!((k.matrix.inner(&u, &u) - expected).abs() < 1e-12);
    }

    #[test]
    fn membrane_rhs_has_zero_resultant() {
        let mesh = build_cell_mesh(&CellGeometry::homogeneous(0), [3, 3, 3], 1).unwrap();
        let phases = PhaseAssignment::new(vec![Some(HookeTensor::isotropic(1.0, 0.7).unwrap())]);
        let dm = periodic_dof_map(&mesh);
        for mode in CorrectorMode::ALL {
            let rhs = corrector_rhs(&mesh, &phases, &dm, mode);
            for c in 0..3 {
                let s: f64 = rhs.iter().skip(c).step_by(3).sum();
                assert!(s.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn bending_rhs_is_odd_under_reflection() {
        let mesh = build_cell_mesh(&CellGeometry::homogeneous(0), [2, 2, 4], 1).unwrap();
        let phases = PhaseAssignment::new(vec![Some(HookeTensor::isotropic(1.0, 0.7).unwrap())]);
        let dm = periodic_dof_map(&mesh);
        let rhs = corrector_rhs(&mesh, &phases, &dm, CorrectorMode::Bending(Component::C11));
        let md = mesh.master_dims();
        for m in 0..mesh.n_masters() {
            let (ij, z) = (m % (md[0] * md[1]), m / (md[0] * md[1]));
            let mirror = ij + md[0] * md[1] * (md[2] - 1 - z);
            // in-plane components odd, transverse component even under y3 -> -y3
            for c in 0..2 {
                let (a, b) = (rhs[dm.dof(m, c).unwrap()], rhs[dm.dof(mirror, c).unwrap()]);
                assert!((a + b).abs() < 1e-14);
            }
            let (a, b) = (rhs[dm.dof(m, 2).unwrap()], rhs[dm.dof(mirror, 2).unwrap()]);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn correctors_zero_mean_and_galerkin_orthogonal() {
        let (geom, phases) = laminate();
        let mesh = build_cell_mesh(&geom, [3, 3, 4], 1).unwrap();
        let k = assemble_cell_stiffness(&mesh, &phases).unwrap();
        let set = solve_correctors(&k, &mesh, &phases, CgOptions::default()).unwrap();
        for mode in CorrectorMode::ALL {
            let chi = set.field(mode);
            assert!(k.dofmap.max_mean(chi) < 1e-12);
            let rhs = corrector_rhs(&mesh, &phases, &k.dofmap, mode);
            let res: Vec<f64> = k.matrix.apply(chi).iter().zip(&rhs).map(|(a, b)| a - b).collect();
            let w: Vec<f64> = (0..res.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let energy = k.matrix.inner(&w, &w).sqrt();
            assert!(dot(&w, &res).abs() <= 1e-9 * energy);
        }
    }

    #[test]
    fn correctors_invariant_under_material_scaling() {
        let (geom, phases) = laminate();
        let mesh = build_cell_mesh(&geom, [2, 2, 4], 1).unwrap();
        let k1 = assemble_cell_stiffness(&mesh, &phases).unwrap();
        let s1 = solve_correctors(&k1, &mesh, &phases, CgOptions::default()).unwrap();
        let scaled = phases.scaled(7.5);
        let k2 = assemble_cell_stiffness(&mesh, &scaled).unwrap();
        let s2 = solve_correctors(&k2, &mesh, &scaled, CgOptions::default()).unwrap();
        for (a, b) in s1.fields.iter().zip(&s2.fields) {
            let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9 * scale));
        }
    }

    #[test]
    fn perforated_cell_omits_void_nodes() {
        let geom = CellGeometry {
            background: 0,
            primitives: vec![(Primitive::Cylinder { center: [0.5, 0.5], radius: 0.3, y3_range: [-1.0, 1.0] }, 1)],
            void_phase: Some(1),
        };
        let phases = PhaseAssignment::new(vec![Some(HookeTensor::isotropic(1.0, 1.0).unwrap()), None]);
        let mesh = build_cell_mesh(&geom, [6, 6, 2], 1).unwrap();
        let k = assemble_cell_stiffness(&mesh, &phases).unwrap();
        assert!(k.dofmap.n_active < mesh.n_masters());
        // the cell centre column is void-only
        let centre = mesh.master_of([3, 3, 0]);
        assert!(k.dofmap.active[centre].is_none());
        assert_eq!(k.matrix.n(), k.dofmap.n_dofs());
    }
}

//! Homogenized plate tensors from cell correctors.
//!
//! A plate strain pair `p = (e11, e22, e12; κ11, κ22, κ12)` induces the cell
//! strain `E(p)(y₃) + e_y(û)` with `û = Σ c_k p_k χ_k`, where `c_k = 2` for the
//! shear slots (the pair `12` appears twice in `Σ_{n,p}`). The plate tensor is
//! the Gram matrix of the six unit responses, so `pᵀ T p` is the normalized
//! minimal cell energy.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};
use rayon::prelude::*;

use crate::cell::{CellGeometry, CellMesh, DofMap, PhaseAssignment, CELL_VOLUME};
use crate::corrector::{
    assemble_cell_stiffness, cell_energy_pair, gather, macro_strain_rhs, solve_correctors, solve_periodic,
    CellStiffness, Component, CorrectorError, CorrectorMode, CorrectorSet,
};
use crate::elastic::{HookeTensor, SymMat3};
use crate::fem::{strain_from_nodal, HexElement};
use crate::linalg::{CgOptions, CgStats, SolveError};

#[derive(Debug, Clone, thiserror::Error)]
pub enum HomogenizeError {
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
    #[error("two-scale minimization: {0}")]
    Solve(#[from] SolveError),
    #[error("plate tensor is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
}

/// Membrane strain `(e11, e22, e12)` and curvature `(∂11𝒰₃, ∂22𝒰₃, ∂12𝒰₃)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlateStrainPair {
    pub membrane: [f64; 3],
    pub curvature: [f64; 3],
}

impl PlateStrainPair {
    pub fn new(membrane: [f64; 3], curvature: [f64; 3]) -> Self {
        PlateStrainPair { membrane, curvature }
    }

    /// Unit pair for slot `k` of `(m11, m22, m12, κ11, κ22, κ12)`.
    pub fn unit(k: usize) -> Self {
        let mut v = [0.0; 6];
        v[k] = 1.0;
        Self::from_array(v)
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        PlateStrainPair { membrane: [v[0], v[1], v[2]], curvature: [v[3], v[4], v[5]] }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (m, k) = (self.membrane, self.curvature);
        [m[0], m[1], m[2], k[0], k[1], k[2]]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_array(self.to_array().map(|x| s * x))
    }
}

/// Which cell measure divides the cell integrals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `|𝒴| = 2`, void included.
    #[default]
    Cell,
    /// `|𝒴*|`, material part only.
    Material,
}

impl Normalization {
    pub fn volume(self, mesh: &CellMesh) -> f64 {
        match self {
            Normalization::Cell => CELL_VOLUME,
            Normalization::Material => mesh.material_volume(),
        }
    }
}

/// `E^Lin` at thickness coordinate `y₃`: in-plane block `e_αβ − y₃ ∂_αβ𝒰₃`.
pub fn elin_matrix(pair: &PlateStrainPair, y3: f64) -> SymMat3 {
    let (m, k) = (pair.membrane, pair.curvature);
    SymMat3::new(m[0] - y3 * k[0], m[1] - y3 * k[1], 0.0, 0.0, 0.0, m[2] - y3 * k[2])
}

/// Corrector mode answering slot `k` of a strain pair.
pub fn slot_mode(k: usize) -> CorrectorMode {
    let c = Component::ALL[k % 3];
    if k < 3 {
        CorrectorMode::Membrane(c)
    } else {
        CorrectorMode::Bending(c)
    }
}

/// Coefficients of the six correctors in `û` for a strain pair.
pub fn corrector_weights(pair: &PlateStrainPair) -> [f64; 6] {
    let v = pair.to_array();
    std::array::from_fn(|k| slot_mode(k).component().multiplicity() * v[k])
}

/// Block tensor `[[A, B], [Bᵀ, C]]` acting on strain pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateTensor {
    pub a: Matrix3<f64>,
    pub b: Matrix3<f64>,
    pub c: Matrix3<f64>,
}

impl PlateTensor {
    pub fn from_block(t: &Matrix6<f64>) -> Self {
        PlateTensor {
            a: t.fixed_view::<3, 3>(0, 0).into_owned(),
            b: t.fixed_view::<3, 3>(0, 3).into_owned(),
            c: t.fixed_view::<3, 3>(3, 3).into_owned(),
        }
    }

    pub fn block(&self) -> Matrix6<f64> {
        let mut t = Matrix6::zeros();
        t.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.a);
        t.fixed_view_mut::<3, 3>(0, 3).copy_from(&self.b);
        t.fixed_view_mut::<3, 3>(3, 0).copy_from(&self.b.transpose());
        t.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.c);
        t
    }

    pub fn quadratic_form(&self, pair: &PlateStrainPair) -> f64 {
        let v = Vector6::from(pair.to_array());
        v.dot(&(self.block() * v))
    }

    pub fn bilinear_form(&self, p: &PlateStrainPair, q: &PlateStrainPair) -> f64 {
        let v = Vector6::from(p.to_array());
        let w = Vector6::from(q.to_array());
        v.dot(&(self.block() * w))
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let t = self.block();
        let sym = 0.5 * (t + t.transpose());
        let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_asymmetry(&self) -> f64 {
        let t = self.block();
        (t - t.transpose()).abs().max()
    }

    /// Labelled entries in row-major order, for reports.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let names = ["11", "22", "12"];
        let mut out = Vec::with_capacity(27);
        for (tag, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c)] {
            for i in 0..3 {
                for j in 0..3 {
                    out.push((format!("{tag}_{}_{}", names[i], names[j]), m[(i, j)]));
                }
            }
        }
        out
    }
}

/// Cell strain `E^Lin(p) + e_y(û)` at a local point of an element.
pub fn cell_strain(
    mesh: &CellMesh,
    dofmap: &DofMap,
    correctors: &CorrectorSet,
    el: &HexElement,
    pair: &PlateStrainPair,
    e: [usize; 3],
    xi: [f64; 3],
) -> SymMat3 {
    let y3 = mesh.element_origin(e)[2] + xi[2] * el.size()[2];
    let grads = el.eval(xi).grads;
    let weights = corrector_weights(pair);
    let mut s = elin_matrix(pair, y3);
    for (k, w) in weights.iter().enumerate() {
        if *w != 0.0 {
            let nodal = gather(mesh, dofmap, correctors.field(slot_mode(k)), e);
            s += *w * strain_from_nodal(&grads, &nodal);
        }
    }
    s
}

/// Per-element integrals of `a(G_k, G_l)` for the six unit responses.
fn response_gram(
    mesh: &CellMesh,
    phases: &PhaseAssignment,
    dofmap: &DofMap,
    correctors: &CorrectorSet,
    strain: impl Fn(usize, f64, &SymMat3) -> SymMat3 + Sync,
    test: impl Fn(usize, f64, &SymMat3) -> SymMat3 + Sync,
) -> Matrix6<f64> {
    let el = mesh.reference_element();
    let quad: Vec<_> = el.quadrature().into_iter().map(|(xi, w)| (xi, w, el.eval(xi).grads)).collect();
    let per_element: Vec<Matrix6<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let mut m = Matrix6::zeros();
            if !mesh.material[e] {
                return m;
            }
            let hooke = phases.tensor(mesh.element_phase[e]).expect("material phase");
            let ec = mesh.element_coords(e);
            let origin = mesh.element_origin(ec);
            let nodal: Vec<Vec<f64>> =
                (0..6).map(|k| gather(mesh, dofmap, correctors.field(slot_mode(k)), ec)).collect();
            for (xi, w, grads) in &quad {
                let y3 = origin[2] + xi[2] * el.size()[2];
                let micro: Vec<SymMat3> = nodal.iter().map(|u| strain_from_nodal(grads, u)).collect();
                let g: Vec<SymMat3> = (0..6).map(|k| strain(k, y3, &micro[k])).collect();
                let t: Vec<SymMat3> = (0..6).map(|k| test(k, y3, &micro[k])).collect();
                for k in 0..6 {
                    for l in 0..6 {
                        m[(k, l)] += w * hooke.bilinear_form(&g[k], &t[l]);
                    }
                }
            }
            m
        })
        .collect();
    per_element.iter().fold(Matrix6::zeros(), |acc, m| acc + m)
}

/// Plate tensor `T_kl = (1/|·|) ∫ a(G_k, G_l)`, `G_k = E^Lin(unit_k) + c_k e_y(χ_k)`.
pub fn assemble_plate_tensor(
    mesh: &CellMesh,
    phases: &PhaseAssignment,
    dofmap: &DofMap,
    correctors: &CorrectorSet,
    normalization: Normalization,
) -> Result<PlateTensor, HomogenizeError> {
    let response = |k: usize, y3: f64, micro: &SymMat3| {
        let c = slot_mode(k).component().multiplicity();
        elin_matrix(&PlateStrainPair::unit(k), y3) + c * *micro
    };
    let gram = response_gram(mesh, phases, dofmap, correctors, response, response);
    let t = gram / normalization.volume(mesh);
    // the Gram matrix is symmetric up to round-off; store the symmetric part
    let tensor = PlateTensor::from_block(&(0.5 * (t + t.transpose())));
    let min_eigenvalue = tensor.min_eigenvalue();
    if !(min_eigenvalue > 0.0) {
        return Err(HomogenizeError::NotPositiveDefinite { min_eigenvalue });
    }
    Ok(tensor)
}

/// Coefficients transcribed verbatim in the `M^{np}` basis:
///
/// ```text
/// a_{np,n'p'} = ⟨a (M^{np} + e(χ^m_{np})) : M^{n'p'}⟩
/// b_{np,n'p'} = ⟨a (y₃M^{np} + e(χ^b_{np})) : M^{n'p'}⟩
/// c_{np,n'p'} = ⟨a (y₃M^{np} + e(χ^b_{np})) : y₃M^{n'p'}⟩
/// ```
///
/// Kept for comparison only; the plate tensor uses the energy form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiteralCoefficients {
    pub a: Matrix3<f64>,
    pub b: Matrix3<f64>,
    pub c: Matrix3<f64>,
}

pub fn literal_coefficients(
    mesh: &CellMesh,
    phases: &PhaseAssignment,
    dofmap: &DofMap,
    correctors: &CorrectorSet,
    normalization: Normalization,
) -> LiteralCoefficients {
    let basis = |k: usize| Component::ALL[k % 3].basis();
    let strain = move |k: usize, y3: f64, micro: &SymMat3| {
        if k < 3 {
            basis(k) + *micro
        } else {
            y3 * basis(k) + *micro
        }
    };
    let test = move |k: usize, y3: f64, _: &SymMat3| if k < 3 { basis(k) } else { y3 * basis(k) };
    let g = response_gram(mesh, phases, dofmap, correctors, strain, test) / normalization.volume(mesh);
    LiteralCoefficients {
        a: g.fixed_view::<3, 3>(0, 0).into_owned(),
        b: g.fixed_view::<3, 3>(3, 0).into_owned(),
        c: g.fixed_view::<3, 3>(3, 3).into_owned(),
    }
}

/// Result of the direct inner minimization over `û` for one strain pair.
#[derive(Clone, Debug)]
pub struct TwoScaleMin {
    pub energy: f64,
    pub field: Vec<f64>,
    pub stats: CgStats,
}

/// `min_û (1/|·|) ∫ Q(E^Lin(p) + e_y(û))` by one periodic solve.
pub fn two_scale_energy_min(
    pair: &PlateStrainPair,
    mesh: &CellMesh,
    phases: &PhaseAssignment,
    stiffness: &CellStiffness,
    opts: CgOptions,
    normalization: Normalization,
) -> Result<TwoScaleMin, HomogenizeError> {
    let load = |y3: f64| elin_matrix(pair, y3);
    let rhs = macro_strain_rhs(mesh, phases, &stiffness.dofmap, load);
    let (field, stats) = if rhs.iter().all(|x| *x == 0.0) {
        (vec![0.0; rhs.len()], CgStats { iterations: 0, rel_residual: 0.0 })
    } else {
        solve_periodic(stiffness, &rhs, opts)?
    };
    let energy = cell_energy_pair(mesh, phases, &stiffness.dofmap, (&load, Some(&field)), (&load, Some(&field)))
        / normalization.volume(mesh);
    Ok(TwoScaleMin { energy, field, stats })
}

/// Plane-stress condensation of a Hooke tensor: the quadratic form on
/// in-plane strains `(s11, s22, s12)` obtained by minimizing `Q` over the
/// out-of-plane components. Returned in tensor-component coordinates.
pub fn plane_stress_condensation(hooke: &HookeTensor) -> Matrix3<f64> {
    let v = hooke.voigt();
    let ip = [0usize, 1, 5];
    let op = [2usize, 3, 4];
    let pick = |r: &[usize; 3], c: &[usize; 3]| Matrix3::from_fn(|i, j| v[(r[i], c[j])]);
    let vpp = pick(&ip, &ip);
    let vpo = pick(&ip, &op);
    let voo = pick(&op, &op);
    let schur = vpp - vpo * voo.try_inverse().expect("coercive tensor has invertible out-of-plane block") * vpo.transpose();
    let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, 2.0));
    d * schur * d
}

/// In-plane block of `a` averaged over the cell without relaxation, in tensor
/// coordinates: an upper bound for the membrane tensor.
pub fn voigt_membrane_bound(mesh: &CellMesh, phases: &PhaseAssignment, normalization: Normalization) -> Matrix3<f64> {
    let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, 2.0));
    let ip = [0usize, 1, 5];
    let vol = mesh.element_size().iter().product::<f64>();
    let mut sum = Matrix3::zeros();
    for e in 0..mesh.n_elements() {
        if mesh.material[e] {
            let v = phases.tensor(mesh.element_phase[e]).expect("material phase").voigt();
            sum += vol * Matrix3::from_fn(|i, j| v[(ip[i], ip[j])]);
        }
    }
    d * sum * d / normalization.volume(mesh)
}

/// Everything produced by a cell run.
#[derive(Clone, Debug)]
pub struct HomogenizedCell {
    pub mesh: CellMesh,
    pub phases: PhaseAssignment,
    pub stiffness: CellStiffness,
    pub correctors: CorrectorSet,
    pub tensor: PlateTensor,
    pub normalization: Normalization,
}

impl HomogenizedCell {
    pub fn dofmap(&self) -> &DofMap {
        &self.stiffness.dofmap
    }
}

/// Mesh, correctors and plate tensor for a cell description.
pub fn homogenize_cell(
    geom: &CellGeometry,
    phases: &PhaseAssignment,
    resolution: [usize; 3],
    order: usize,
    opts: CgOptions,
    normalization: Normalization,
) -> Result<HomogenizedCell, HomogenizeError> {
    let mesh = crate::cell::build_cell_mesh(geom, resolution, order).map_err(CorrectorError::from)?;
    let stiffness = assemble_cell_stiffness(&mesh, phases)?;
    let correctors = solve_correctors(&stiffness, &mesh, phases, opts)?;
    finish_cell(mesh, phases.clone(), stiffness, correctors, normalization)
}

/// Plate tensor for already solved correctors.
pub fn finish_cell(
    mesh: CellMesh,
    phases: PhaseAssignment,
    stiffness: CellStiffness,
    correctors: CorrectorSet,
    normalization: Normalization,
) -> Result<HomogenizedCell, HomogenizeError> {
    let tensor = assemble_plate_tensor(&mesh, &phases, &stiffness.dofmap, &correctors, normalization)?;
    Ok(HomogenizedCell { mesh, phases, stiffness, correctors, tensor, normalization })
}

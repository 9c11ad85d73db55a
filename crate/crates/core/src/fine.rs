//! Direct 3D solves on the thin periodic plate `Ω_ε = ω × (−ε, ε)`.
//!
//! The mesh resolves every periodicity cell with the element order and
//! per-cell resolution of a cell mesh, and copies its phase ids, so the
//! restriction of the fine space to one cell is the cell space itself.
//! Forces are `f_ε = ε^{a+1} f_α e_α + ε^{a+2} f₃ e₃`; the nonlinear energy
//! carries the extra factor `h`.

use rayon::prelude::*;

use crate::cell::{build_cell_mesh, locate, CellError, CellGeometry, CellMesh, PhaseAssignment};
use crate::corrector::gather;
use crate::elastic::{green_strain_of_perturbation, lin_strain, rigidity_distance, Energy, Mat3, SymMat3};
use crate::fem::{displacement_gradient, HexElement};
use crate::homogenize::{corrector_weights, slot_mode, HomogenizedCell, PlateStrainPair};
use crate::linalg::{cholesky_solve, dot, norm, pcg, CgOptions, CsrBuilder, CsrMatrix, SolveError};
use crate::plate::{LoadSpec, PlateSolution, Side};

#[derive(Debug, Clone, thiserror::Error)]
pub enum FineError {
    #[error("plate side {length} is not a whole number of periods of size {eps}")]
    Incommensurate { length: f64, eps: f64 },
    #[error("ε must lie in (0, 1], got {0}")]
    Eps(f64),
    #[error("clamped boundary is empty")]
    NoClamp,
    #[error("cell: {0}")]
    Cell(#[from] CellError),
    #[error("phase {phase} has no elasticity tensor")]
    MissingTensor { phase: usize },
    #[error("fine solve with {n_dofs} dofs: {source}")]
    Solve { n_dofs: usize, source: SolveError },
}

/// Force exponent and ladders of a verification study.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentParams {
    pub a: i32,
    pub eps_ladder: Vec<f64>,
    pub h_ladder: Vec<f64>,
}

impl ExperimentParams {
    /// Pairs `(ε, h)` violating `h ε^{a−1} ≤ 1`.
    pub fn violations(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &e in &self.eps_ladder {
            for &h in &self.h_ladder {
                if h * e.powi(self.a - 1) > 1.0 {
                    out.push((e, h));
                }
            }
        }
        out
    }
}

/// Fine periodic plate mesh.
#[derive(Clone, Debug)]
pub struct FineGeometry {
    pub eps: f64,
    pub lengths: [f64; 2],
    pub periods: [usize; 2],
    pub clamped: Vec<Side>,
    pub cell: CellMesh,
    pub phases: PhaseAssignment,
}

/// Solver controls for fine problems.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FineSolverOptions {
    pub cg: CgOptions,
    /// systems with fewer dofs are factorized directly
    pub direct_threshold: usize,
}

impl Default for FineSolverOptions {
    fn default() -> Self {
        FineSolverOptions { cg: CgOptions::default(), direct_threshold: 100_000 }
    }
}

impl FineGeometry {
    pub fn new(
        geom: &CellGeometry,
        phases: &PhaseAssignment,
        per_cell: [usize; 3],
        order: usize,
        eps: f64,
        lengths: [f64; 2],
        clamped: Vec<Side>,
    ) -> Result<Self, FineError> {
        let cell = build_cell_mesh(geom, per_cell, order)?;
        Self::from_cell_mesh(cell, phases, eps, lengths, clamped)
    }

    pub fn from_cell_mesh(
        cell: CellMesh,
        phases: &PhaseAssignment,
        eps: f64,
        lengths: [f64; 2],
        clamped: Vec<Side>,
    ) -> Result<Self, FineError> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(FineError::Eps(eps));
        }
        if clamped.is_empty() {
            return Err(FineError::NoClamp);
        }
        let mut periods = [0; 2];
        for d in 0..2 {
            let r = lengths[d] / eps;
            if (r - r.round()).abs() > 1e-9 * r.max(1.0) || r.round() < 1.0 {
                return Err(FineError::Incommensurate { length: lengths[d], eps });
            }
            periods[d] = r.round() as usize;
        }
        phases.validate(&cell)?;
        Ok(FineGeometry { eps, lengths, periods, clamped, cell, phases: phases.clone() })
    }

    pub fn order(&self) -> usize {
        self.cell.order
    }

    pub fn elements(&self) -> [usize; 3] {
        let r = self.cell.resolution;
        [self.periods[0] * r[0], self.periods[1] * r[1], r[2]]
    }

    pub fn n_elements(&self) -> usize {
        self.elements().iter().product()
    }

    pub fn element_coords(&self, index: usize) -> [usize; 3] {
        let n = self.elements();
        [index % n[0], (index / n[0]) % n[1], index / (n[0] * n[1])]
    }

    pub fn element_size(&self) -> [f64; 3] {
        self.cell.element_size().map(|h| h * self.eps)
    }

    pub fn element_origin(&self, e: [usize; 3]) -> [f64; 3] {
        let h = self.element_size();
        [e[0] as f64 * h[0], e[1] as f64 * h[1], -self.eps + e[2] as f64 * h[2]]
    }

    pub fn reference_element(&self) -> HexElement {
        HexElement::new(self.order(), self.element_size())
    }

    /// Cell element replicated by fine element `e`.
    pub fn cell_element(&self, e: [usize; 3]) -> [usize; 3] {
        let r = self.cell.resolution;
        [e[0] % r[0], e[1] % r[1], e[2]]
    }

    /// Macro cell `(k₁, k₂)` containing fine element `e`.
    pub fn macro_cell(&self, e: [usize; 3]) -> [usize; 2] {
        let r = self.cell.resolution;
        [e[0] / r[0], e[1] / r[1]]
    }

    pub fn is_material(&self, e: [usize; 3]) -> bool {
        self.cell.material[self.cell.element_index(self.cell_element(e))]
    }

    pub fn phase(&self, e: [usize; 3]) -> usize {
        self.cell.element_phase[self.cell.element_index(self.cell_element(e))]
    }

    pub fn node_dims(&self) -> [usize; 3] {
        self.elements().map(|n| self.order() * n + 1)
    }

    pub fn n_nodes(&self) -> usize {
        self.node_dims().iter().product()
    }

    pub fn node_index(&self, n: [usize; 3]) -> usize {
        let d = self.node_dims();
        n[0] + d[0] * (n[1] + d[1] * n[2])
    }

    pub fn node_coords(&self, index: usize) -> [usize; 3] {
        let d = self.node_dims();
        [index % d[0], (index / d[0]) % d[1], index / (d[0] * d[1])]
    }

    pub fn node_position(&self, n: [usize; 3]) -> [f64; 3] {
        let h = self.element_size();
        let p = self.order() as f64;
        [n[0] as f64 * h[0] / p, n[1] as f64 * h[1] / p, -self.eps + n[2] as f64 * h[2] / p]
    }

    pub fn element_nodes(&self, e: [usize; 3]) -> Vec<usize> {
        let p = self.order();
        let mut out = Vec::with_capacity((p + 1).pow(3));
        for c in 0..=p {
            for b in 0..=p {
                for a in 0..=p {
                    out.push(self.node_index([p * e[0] + a, p * e[1] + b, p * e[2] + c]));
                }
            }
        }
        out
    }

    pub fn material_elements(&self) -> Vec<[usize; 3]> {
        (0..self.n_elements()).map(|i| self.element_coords(i)).filter(|e| self.is_material(*e)).collect()
    }

    fn node_clamped(&self, n: [usize; 3]) -> bool {
        let d = self.node_dims();
        self.clamped.iter().any(|s| match s {
            Side::X0 => n[0] == 0,
            Side::X1 => n[0] + 1 == d[0],
            Side::Y0 => n[1] == 0,
            Side::Y1 => n[1] + 1 == d[1],
        })
    }

    /// Dof numbering: three per node touching material and not clamped.
    pub fn dof_map(&self) -> Vec<Option<usize>> {
        let mut touched = vec![false; self.n_nodes()];
        for e in self.material_elements() {
            for n in self.element_nodes(e) {
                touched[n] = true;
            }
        }
        let mut next = 0;
        let mut map = vec![None; 3 * self.n_nodes()];
        for (i, t) in touched.iter().enumerate() {
            if *t && !self.node_clamped(self.node_coords(i)) {
                for c in 0..3 {
                    map[3 * i + c] = Some(next);
                    next += 1;
                }
            }
        }
        map
    }

    /// Body force density `f_ε(x′)` for exponent `a`.
    pub fn force(&self, load: &LoadSpec, a: i32, x: [f64; 2]) -> [f64; 3] {
        let f = load.eval(x);
        let s = self.eps.powi(a + 1);
        [s * f[0], s * f[1], s * self.eps * f[2]]
    }

    /// `ε^{2a+3}`, the energy scale of the limit.
    pub fn energy_scale(&self, a: i32) -> f64 {
        self.eps.powi(2 * a + 3)
    }

    /// Nodal values of element `e` (`3·node + comp`).
    pub fn gather(&self, field: &[f64], e: [usize; 3]) -> Vec<f64> {
        self.element_nodes(e).iter().flat_map(|n| [field[3 * n], field[3 * n + 1], field[3 * n + 2]]).collect()
    }
}

/// Gauss data shared by all fine elements.
struct FineQuadrature {
    points: Vec<([f64; 3], f64, Vec<f64>, Vec<[f64; 3]>)>,
}

impl FineQuadrature {
    fn new(el: &HexElement) -> Self {
        let points = el
            .quadrature()
            .into_iter()
            .map(|(xi, w)| {
                let sh = el.eval(xi);
                (xi, w, sh.values, sh.grads)
            })
            .collect();
        FineQuadrature { points }
    }
}

/// Sums per-element contributions in element order.
fn element_sum<T: Send>(geom: &FineGeometry, f: impl Fn([usize; 3]) -> T + Sync + Send, add: impl Fn(&mut f64, T)) -> f64 {
    let parts: Vec<T> = geom.material_elements().into_par_iter().map(f).collect();
    let mut total = 0.0;
    for p in parts {
        add(&mut total, p);
    }
    total
}

/// Load vector over the full nodal numbering: `∫ f_ε · φ`.
pub fn load_vector(geom: &FineGeometry, load: &LoadSpec, a: i32) -> Vec<f64> {
    let el = geom.reference_element();
    let quad = FineQuadrature::new(&el);
    let h = el.size();
    let elements = geom.material_elements();
    let parts: Vec<Vec<f64>> = elements
        .par_iter()
        .map(|&e| {
            let o = geom.element_origin(e);
            let mut fe = vec![0.0; 3 * el.n_nodes()];
            for (xi, w, values, _) in &quad.points {
                let f = geom.force(load, a, [o[0] + xi[0] * h[0], o[1] + xi[1] * h[1]]);
                for (n, v) in values.iter().enumerate() {
                    for c in 0..3 {
                        fe[3 * n + c] += w * f[c] * v;
                    }
                }
            }
            fe
        })
        .collect();
    let mut out = vec![0.0; 3 * geom.n_nodes()];
    for (e, fe) in elements.iter().zip(parts) {
        for (k, n) in geom.element_nodes(*e).iter().enumerate() {
            for c in 0..3 {
                out[3 * n + c] += fe[3 * k + c];
            }
        }
    }
    out
}

/// Stiffness `∫ 2 a(x/ε) e(φ_i) : e(φ_j)` over the free dofs.
pub fn assemble_fine_stiffness(geom: &FineGeometry, dofs: &[Option<usize>]) -> CsrMatrix {
    let el = geom.reference_element();
    let local: Vec<Option<Vec<f64>>> = geom.phases.tensors.iter().map(|t| t.as_ref().map(|h| el.stiffness(h))).collect();
    let elements = geom.material_elements();
    let element_dofs: Vec<Vec<Option<usize>>> = elements
        .par_iter()
        .map(|e| geom.element_nodes(*e).iter().flat_map(|n| (0..3).map(move |c| dofs[3 * n + c])).collect())
        .collect();
    let n_free = dofs.iter().flatten().count();
    let mut builder = CsrBuilder::from_elements(n_free, element_dofs.iter().map(|d| d.as_slice()));
    for (e, d) in elements.iter().zip(&element_dofs) {
        builder.add_element(d, local[geom.phase(*e)].as_ref().expect("validated phase"));
    }
    builder.finish()
}

/// Linear fine solution and its energies.
#[derive(Clone, Debug)]
pub struct FineSolution {
    pub eps: f64,
    pub a: i32,
    /// displacement at every node (`3·node + comp`), zero on Γ_ε
    pub u: Vec<f64>,
    /// `∫ f_ε · u_ε`
    pub load_term: f64,
    /// `m_ε = J^Lin_ε(u_ε)`
    pub m_eps: f64,
    pub rel_residual: f64,
    pub n_dofs: usize,
}

impl FineSolution {
    /// `m_ε / ε^{2a+3}`.
    pub fn rescaled(&self) -> f64 {
        self.m_eps / self.eps.powi(2 * self.a + 3)
    }
}

pub fn solve_linear_fine(
    geom: &FineGeometry,
    load: &LoadSpec,
    a: i32,
    opts: FineSolverOptions,
) -> Result<FineSolution, FineError> {
    let dofs = geom.dof_map();
    let n_free = dofs.iter().flatten().count();
    let full_load = load_vector(geom, load, a);
    let mut rhs = vec![0.0; n_free];
    for (k, d) in dofs.iter().enumerate() {
        if let Some(i) = d {
            rhs[*i] = full_load[k];
        }
    }
    let (x, rel_residual) = if rhs.iter().all(|v| *v == 0.0) {
        (vec![0.0; n_free], 0.0)
    } else {
        let k = assemble_fine_stiffness(geom, &dofs);
        let x = if n_free < opts.direct_threshold {
            cholesky_solve(&k, &rhs).map_err(|source| FineError::Solve { n_dofs: n_free, source })?
        } else {
            pcg(&k, &rhs, None, opts.cg).map_err(|source| FineError::Solve { n_dofs: n_free, source })?.0
        };
        let kx = k.apply(&x);
        let r: Vec<f64> = kx.iter().zip(&rhs).map(|(p, q)| p - q).collect();
        (x, norm(&r) / norm(&rhs))
    };
    let u: Vec<f64> = dofs.iter().map(|d| d.map(|i| x[i]).unwrap_or(0.0)).collect();
    let load_term = dot(&rhs, &x);
    let m_eps = linear_energy(geom, &u, load, a);
    Ok(FineSolution { eps: geom.eps, a, u, load_term, m_eps, rel_residual, n_dofs: n_free })
}

/// `J^Lin_ε(u) = ∫ Q(e(u)) − ∫ f_ε · u` by quadrature.
pub fn linear_energy(geom: &FineGeometry, u: &[f64], load: &LoadSpec, a: i32) -> f64 {
    let exp = energy_expansion(geom, u, load, a);
    exp.quadratic - exp.load
}

/// `‖e(u)‖_{L²(Ω_ε)}`.
pub fn strain_norm(geom: &FineGeometry, u: &[f64]) -> f64 {
    let el = geom.reference_element();
    let quad = FineQuadrature::new(&el);
    element_sum(
        geom,
        |e| {
            let nodal = geom.gather(u, e);
            quad.points.iter().map(|(_, w, _, g)| w * lin_strain(&displacement_gradient(g, &nodal)).norm_sq()).sum::<f64>()
        },
        |t, v| *t += v,
    )
    .sqrt()
}

/// Component-wise `‖u_i‖_{L²(Ω_ε)}`.
pub fn displacement_norms(geom: &FineGeometry, u: &[f64]) -> [f64; 3] {
    let el = geom.reference_element();
    let quad = FineQuadrature::new(&el);
    let parts: Vec<[f64; 3]> = geom
        .material_elements()
        .into_par_iter()
        .map(|e| {
            let nodal = geom.gather(u, e);
            let mut s = [0.0; 3];
            for (_, w, values, _) in &quad.points {
                for c in 0..3 {
                    let v: f64 = values.iter().enumerate().map(|(n, phi)| phi * nodal[3 * n + c]).sum();
                    s[c] += w * v * v;
                }
            }
            s
        })
        .collect();
    let mut tot = [0.0; 3];
    for p in parts {
        for c in 0..3 {
            tot[c] += p[c];
        }
    }
    tot.map(f64::sqrt)
}

/// `J_{ε,h}(v) = ∫ Ŵ(∇v) − ∫ f_{ε,h}·(v − id)` for `v = id + d`, with
/// `f_{ε,h} = h f_ε`.
pub fn nonlinear_energy(geom: &FineGeometry, d: &[f64], load: &LoadSpec, h: f64, a: i32) -> Energy {
    let el = geom.reference_element();
    let quad = FineQuadrature::new(&el);
    let parts: Vec<Energy> = geom
        .material_elements()
        .into_par_iter()
        .map(|e| {
            let hooke = geom.phases.tensor(geom.phase(e)).expect("validated phase");
            let nodal = geom.gather(d, e);
            let mut s = 0.0;
            for (_, w, _, g) in &quad.points {
                match crate::elastic::nonlinear_density(hooke, &(Mat3::identity() + displacement_gradient(g, &nodal))) {
                    Energy::Finite(v) => s += w * v,
                    Energy::Infinite => return Energy::Infinite,
                }
            }
            Energy::Finite(s)
        })
        .collect();
    let stored = parts.into_iter().fold(Energy::Finite(0.0), |acc, p| acc + p);
    let f = load_vector(geom, load, a);
    stored + Energy::Finite(-h * dot(&f, d))
}

/// `J_{ε,h}(id + h u) / h²`, evaluated without cancellation.
pub fn scaled_nonlinear_energy(geom: &FineGeometry, u: &[f64], load: &LoadSpec, h: f64, a: i32) -> Energy {
    let el = geom.reference_element();
    let quad = FineQuadrature::new(&el);
    let parts: Vec<Energy> = geom
        .material_elements()
        .into_par_iter()
        .map(|e| {
            let hooke = geom.phases.tensor(geom.phase(e)).expect("validated phase");
            let nodal = geom.gather(u, e);
            let mut s = 0.0;
            for (_, w, _, g) in &quad.points {
                let grad = displacement_gradient(g, &nodal);
                if (Mat3::identity() + h * grad).determinant() <= 0.0 {
                    return Energy::Infinite;
                }
                // E(I + hG)/h = sym G + (h/2) GᵀG
                let e_over_h = (1.0 / h) * green_strain_of_perturbation(&grad, h);
                s += w * hooke.quadratic_form(&e_over_h);
            }
            Energy::Finite(s)
        })
        .collect();
    let stored = parts.into_iter().fold(Energy::Finite(0.0), |acc, p| acc + p);
    let f = load_vector(geom, load, a);
    stored + Energy::Finite(-dot(&f, u))
}

/// Exact expansion `J_{ε,h}(id + h u)/h² = quadratic − load + h·cubic + h²·quartic`
/// (valid while `det(I + h∇u) > 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyExpansion {
    pub quadratic: f64,
    pub cubic: f64,
    pub quartic: f64,
    pub load: f64,
}

impl EnergyExpansion {
    pub fn eval(&self, h: f64) -> f64 {
        self.quadratic - self.load + h * self.cubic + h * h * self.quartic
    }
}

pub fn energy_expansion(geom: &FineGeometry, u: &[f64], load: &LoadSpec, a: i32) -> EnergyExpansion {
    let el = geom.reference_element();
    let quad = FineQuadrature::new(&el);
    let parts: Vec<[f64; 3]> = geom
        .material_elements()
        .into_par_iter()
        .map(|e| {
            let hooke = geom.phases.tensor(geom.phase(e)).expect("validated phase");
            let nodal = geom.gather(u, e);
            let mut s = [0.0; 3];
            for (_, w, _, g) in &quad.points {
                let grad = displacement_gradient(g, &nodal);
                let lin = lin_strain(&grad);
                let quad_part = SymMat3::from_mat3(&(0.5 * grad.transpose() * grad));
                s[0] += w * hooke.quadratic_form(&lin);
                s[1] += w * 2.0 * hooke.bilinear_form(&lin, &quad_part);
                s[2] += w * hooke.quadratic_form(&quad_part);
            }
            s
        })
        .collect();
    let mut t = [0.0; 3];
    for p in parts {
        for k in 0..3 {
            t[k] += p[k];
        }
    }
    let f = load_vector(geom, load, a);
    EnergyExpansion { quadratic: t[0], cubic: t[1], quartic: t[2], load: dot(&f, u) }
}

/// `‖dist(∇v, SO(3))‖_{L²(Ω_ε)}` for `v = id + d`.
pub fn rigidity_defect(geom: &FineGeometry, d: &[f64]) -> f64 {
    let el = geom.reference_element();
    let quad = FineQuadrature::new(&el);
    element_sum(
        geom,
        |e| {
            let nodal = geom.gather(d, e);
            quad.points
                .iter()
                .map(|(_, w, _, g)| w * rigidity_distance(&(Mat3::identity() + displacement_gradient(g, &nodal))).powi(2))
                .sum::<f64>()
        },
        |t, v| *t += v,
    )
    .sqrt()
}

/// One row of a linearization study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearizationRow {
    pub h: f64,
    /// `J_{ε,h}(id + h u_ε)/h²`
    pub scaled_energy: Energy,
    /// `r(h)`; `None` when the trial deformation is inadmissible
    pub remainder: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearizationReport {
    pub eps: f64,
    pub j_lin: f64,
    pub rows: Vec<LinearizationRow>,
    /// least-squares slope of `log |r|` against `log h` over admissible rows
    pub slope: Option<f64>,
}

pub fn linearization_study(
    geom: &FineGeometry,
    sol: &FineSolution,
    load: &LoadSpec,
    h_ladder: &[f64],
) -> LinearizationReport {
    let j_lin = linear_energy(geom, &sol.u, load, sol.a);
    let rows: Vec<LinearizationRow> = h_ladder
        .iter()
        .map(|&h| {
            let scaled_energy = scaled_nonlinear_energy(geom, &sol.u, load, h, sol.a);
            let remainder = scaled_energy.value().map(|v| v - j_lin);
            LinearizationRow { h, scaled_energy, remainder }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.remainder.filter(|v| *v != 0.0).map(|v| (r.h.ln(), v.abs().ln())))
        .collect();
    LinearizationReport { eps: geom.eps, j_lin, rows, slope: log_slope(&pts) }
}

/// Least-squares slope of a point cloud; `None` for fewer than two points.
pub fn log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Recovery displacement built from a plate solution and cell correctors:
///
/// ```text
/// U_α = ε^{a−1} ε² (𝒰_α − (x₃/ε) ∂_α𝒰₃ + ε ρ û_α)
/// U₃  = ε^{a−1} ε  (𝒰₃ + ε² ρ û₃)
/// ```
///
/// with `û = Σ c_k p_k(x′) χ_k({x′/ε}, x₃/ε)`, the strain pair `p` mollified by
/// a box kernel of half-width `n_smoothing` plate cells, and the cut-off
/// `ρ = min(dist(x′, γ)/ε, 1)`.
pub struct DisplacementAnsatz<'a> {
    pub plate: &'a PlateSolution,
    pub cell: &'a HomogenizedCell,
    pub a: i32,
    pub n_smoothing: usize,
}

impl DisplacementAnsatz<'_> {
    /// Nodal displacement on the fine mesh.
    pub fn build(&self, geom: &FineGeometry) -> Vec<f64> {
        let eps = geom.eps;
        let dims = geom.node_dims();
        let amp = eps.powi(self.a - 1);
        let h = geom.element_size();
        let p = geom.order() as f64;
        let dx = [h[0] / p, h[1] / p];
        // plate data on the in-plane node grid
        let plane: Vec<(crate::plate::PlateFields, [f64; 2])> = (0..dims[0] * dims[1])
            .into_par_iter()
            .map(|k| {
                let x = [(k % dims[0]) as f64 * dx[0], (k / dims[0]) as f64 * dx[1]];
                (self.plate.eval(x), x)
            })
            .collect();
        let pairs: Vec<[f64; 6]> = plane.iter().map(|(f, _)| f.pair.to_array()).collect();
        let hp = self.plate.mesh.spacing();
        let half = [
            (self.n_smoothing as f64 * hp[0] / dx[0]).round() as usize,
            (self.n_smoothing as f64 * hp[1] / dx[1]).round() as usize,
        ];
        let smooth = box_filter(&pairs, [dims[0], dims[1]], half);
        let cache = CorrectorSampler::new(self.cell, geom);
        let mut out = vec![0.0; 3 * geom.n_nodes()];
        for k in 0..geom.n_nodes() {
            let n = geom.node_coords(k);
            let col = n[0] + dims[0] * n[1];
            let (fields, x) = &plane[col];
            let x3 = geom.node_position(n)[2];
            let rho = (self.plate.mesh.clamp_distance(*x) / eps).min(1.0);
            let weights = corrector_weights(&PlateStrainPair::from_array(smooth[col]));
            let chi = cache.value(n);
            let mut uhat = [0.0; 3];
            for (m, w) in weights.iter().enumerate() {
                for c in 0..3 {
                    uhat[c] += w * chi[m][c];
                }
            }
            let u = fields.u;
            let g = fields.grad_w;
            out[3 * k] = amp * eps * eps * (u[0] - x3 / eps * g[0] + eps * rho * uhat[0]);
            out[3 * k + 1] = amp * eps * eps * (u[1] - x3 / eps * g[1] + eps * rho * uhat[1]);
            out[3 * k + 2] = amp * eps * (u[2] + eps * eps * rho * uhat[2]);
        }
        out
    }
}

/// Corrector values at the fine node positions of one period.
struct CorrectorSampler {
    period: [usize; 2],
    dims: [usize; 3],
    values: Vec<[[f64; 3]; 6]>,
}

impl CorrectorSampler {
    fn new(cell: &HomogenizedCell, geom: &FineGeometry) -> Self {
        let p = geom.order();
        let r = geom.cell.resolution;
        let period = [p * r[0], p * r[1]];
        let dims = [period[0] + 1, period[1] + 1, p * r[2] + 1];
        let mesh = &cell.mesh;
        let el = mesh.reference_element();
        let dofmap = cell.dofmap();
        let values = (0..dims[0] * dims[1] * dims[2])
            .into_par_iter()
            .map(|k| {
                let n = [k % dims[0], (k / dims[0]) % dims[1], k / (dims[0] * dims[1])];
                let y = [
                    n[0] as f64 / period[0] as f64,
                    n[1] as f64 / period[1] as f64,
                    -1.0 + 2.0 * n[2] as f64 / (dims[2] - 1) as f64,
                ];
                let (e, xi) = locate(mesh, y);
                let phi = el.eval(xi).values;
                let mut out = [[0.0; 3]; 6];
                for (m, o) in out.iter_mut().enumerate() {
                    let nodal = gather(mesh, dofmap, cell.correctors.field(slot_mode(m)), e);
                    for (a, v) in phi.iter().enumerate() {
                        for c in 0..3 {
                            o[c] += v * nodal[3 * a + c];
                        }
                    }
                }
                out
            })
            .collect();
        CorrectorSampler { period, dims, values }
    }

    fn value(&self, n: [usize; 3]) -> &[[f64; 3]; 6] {
        let i = n[0] % self.period[0];
        let j = n[1] % self.period[1];
        &self.values[i + self.dims[0] * (j + self.dims[1] * n[2])]
    }
}

/// Separable moving average with the window truncated at the grid boundary.
fn box_filter(data: &[[f64; 6]], dims: [usize; 2], half: [usize; 2]) -> Vec<[f64; 6]> {
    if half == [0, 0] {
        return data.to_vec();
    }
    let pass = |src: &[[f64; 6]], axis: usize| -> Vec<[f64; 6]> {
        let (len, stride, lines, line_stride) =
            if axis == 0 { (dims[0], 1, dims[1], dims[0]) } else { (dims[1], dims[0], dims[0], 1) };
        let mut out = vec![[0.0; 6]; src.len()];
        for l in 0..lines {
            let base = l * line_stride;
            let mut prefix = vec![[0.0; 6]; len + 1];
            for i in 0..len {
                for c in 0..6 {
                    prefix[i + 1][c] = prefix[i][c] + src[base + i * stride][c];
                }
            }
            for i in 0..len {
                let lo = i.saturating_sub(half[axis]);
                let hi = (i + half[axis] + 1).min(len);
                for c in 0..6 {
                    out[base + i * stride][c] = (prefix[hi][c] - prefix[lo][c]) / (hi - lo) as f64;
                }
            }
        }
        out
    };
    pass(&pass(data, 0), 1)
}

/// `J_{ε,h}(id + h U)/(h² ε^{2a+3})` for the recovery displacement `U`.
pub fn recovery_energy(
    geom: &FineGeometry,
    ansatz: &DisplacementAnsatz<'_>,
    load: &LoadSpec,
    h: f64,
) -> Energy {
    let u = ansatz.build(geom);
    match scaled_nonlinear_energy(geom, &u, load, h, ansatz.a) {
        Energy::Finite(v) => Energy::Finite(v / geom.energy_scale(ansatz.a)),
        Energy::Infinite => Energy::Infinite,
    }
}

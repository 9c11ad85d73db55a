//! Periodic unfolding of fine fields, the Kirchhoff–Love split, and two-scale
//! error measurement.
//!
//! `Π_ε(ψ)(x′, y) = ψ(ε[x′/ε] + ε y)` maps a fine field to a field on
//! (macro cell) × 𝒴. Because every fine cell is meshed exactly like the cell
//! grid, unfolding is a re-indexing of nodal values.

use rayon::prelude::*;

use crate::cell::{locate, CellMesh};
use crate::elastic::{lin_strain, Mat3, SymMat3};
use crate::fem::{displacement_gradient, gauss_01, HexElement};
use crate::fine::{displacement_norms, strain_norm, FineGeometry, FineSolution};
use crate::homogenize::{corrector_weights, elin_matrix, slot_mode, HomogenizedCell};
use crate::plate::PlateSolution;

/// Version of the fixed test-field dictionary used for weak moments.
pub const DICTIONARY_VERSION: u32 = 1;

#[derive(Debug, Clone, thiserror::Error)]
pub enum UnfoldError {
    #[error("cell grid {cell:?} (order {cell_order}) does not match the fine per-cell grid {fine:?} (order {fine_order})")]
    Incommensurate { cell: [usize; 3], cell_order: usize, fine: [usize; 3], fine_order: usize },
    #[error("field has {got} values, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("unsupported test-field dictionary version {0}")]
    Dictionary(u32),
}

/// Unfolded nodal field: for each macro cell, values on the cell node grid.
#[derive(Clone, Debug)]
pub struct UnfoldedField {
    pub eps: f64,
    pub periods: [usize; 2],
    /// cell mesh the values live on (unglued node grid)
    pub cell: CellMesh,
    pub ncomp: usize,
    /// `values[((k * n_nodes) + node) * ncomp + comp]`, `k = k₁ + periods₀ k₂`
    pub values: Vec<f64>,
    /// macro cells cut by ∂ω, where the unfolded field is set to zero
    pub cut: Vec<bool>,
}

fn check_grid(geom: &FineGeometry, cell: &CellMesh) -> Result<(), UnfoldError> {
    if cell.resolution != geom.cell.resolution || cell.order != geom.order() {
        return Err(UnfoldError::Incommensurate {
            cell: cell.resolution,
            cell_order: cell.order,
            fine: geom.cell.resolution,
            fine_order: geom.order(),
        });
    }
    Ok(())
}

/// `Π_ε` of a nodal field with `ncomp` components per fine node.
pub fn unfold(geom: &FineGeometry, field: &[f64], ncomp: usize, cell: &CellMesh) -> Result<UnfoldedField, UnfoldError> {
    check_grid(geom, cell)?;
    if field.len() != ncomp * geom.n_nodes() {
        return Err(UnfoldError::Length { got: field.len(), expected: ncomp * geom.n_nodes() });
    }
    let nd = cell.node_dims();
    let n_nodes = cell.n_raw_nodes();
    let p = geom.order();
    let r = cell.resolution;
    let n_cells = geom.periods[0] * geom.periods[1];
    let mut values = vec![0.0; n_cells * n_nodes * ncomp];
    for k2 in 0..geom.periods[1] {
        for k1 in 0..geom.periods[0] {
            let k = k1 + geom.periods[0] * k2;
            for c in 0..nd[2] {
                for b in 0..nd[1] {
                    for a in 0..nd[0] {
                        let fine = geom.node_index([p * r[0] * k1 + a, p * r[1] * k2 + b, c]);
                        let local = cell.raw_node_index([a, b, c]);
                        for comp in 0..ncomp {
                            values[(k * n_nodes + local) * ncomp + comp] = field[fine * ncomp + comp];
                        }
                    }
                }
            }
        }
    }
    Ok(UnfoldedField { eps: geom.eps, periods: geom.periods, cell: cell.clone(), ncomp, values, cut: vec![false; n_cells] })
}

impl UnfoldedField {
    pub fn n_cells(&self) -> usize {
        self.periods[0] * self.periods[1]
    }

    /// Nodal values of cell element `e` in macro cell `k` (`ncomp·node + comp`).
    pub fn element_values(&self, k: usize, e: [usize; 3]) -> Vec<f64> {
        let n_nodes = self.cell.n_raw_nodes();
        self.cell
            .element_raw_nodes(e)
            .iter()
            .flat_map(|n| {
                let base = (k * n_nodes + self.cell.raw_node_index(*n)) * self.ncomp;
                self.values[base..base + self.ncomp].to_vec()
            })
            .collect()
    }

    fn macro_area(&self) -> f64 {
        self.eps * self.eps
    }

    /// `∫_{ω×𝒴} Π_ε(ψ)_comp dx′ dy`.
    pub fn integral(&self, comp: usize) -> f64 {
        self.reduce(|vals, sh| sh.iter().zip(vals.chunks(self.ncomp)).map(|(v, x)| v * x[comp]).sum())
    }

    /// `‖Π_ε(ψ)‖²_{L²(ω×𝒴)}` over all components.
    pub fn norm_sq(&self) -> f64 {
        self.reduce(|vals, sh| {
            (0..self.ncomp)
                .map(|c| {
                    let v: f64 = sh.iter().zip(vals.chunks(self.ncomp)).map(|(s, x)| s * x[c]).sum();
                    v * v
                })
                .sum()
        })
    }

    /// Sums `w · g(nodal values, shape values)` over cell Gauss points of all macro cells.
    fn reduce(&self, g: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> f64 {
        let el = self.cell.reference_element();
        let quad: Vec<(f64, Vec<f64>)> = el.quadrature().into_iter().map(|(xi, w)| (w, el.eval(xi).values)).collect();
        let per_cell: Vec<f64> = (0..self.n_cells())
            .into_par_iter()
            .map(|k| {
                if self.cut[k] {
                    return 0.0;
                }
                let mut s = 0.0;
                for idx in 0..self.cell.n_elements() {
                    if !self.cell.material[idx] {
                        continue;
                    }
                    let vals = self.element_values(k, self.cell.element_coords(idx));
                    for (w, sh) in &quad {
                        s += w * g(&vals, sh);
                    }
                }
                s
            })
            .collect();
        self.macro_area() * per_cell.iter().sum::<f64>()
    }
}

/// `∫_{Ω_ε} ψ_comp dx` by fine quadrature.
pub fn fine_integral(geom: &FineGeometry, field: &[f64], ncomp: usize, comp: usize) -> f64 {
    fine_reduce(geom, field, ncomp, |vals, sh| sh.iter().zip(vals.chunks(ncomp)).map(|(v, x)| v * x[comp]).sum())
}

/// `‖ψ‖²_{L²(Ω_ε)}` over all components.
pub fn fine_norm_sq(geom: &FineGeometry, field: &[f64], ncomp: usize) -> f64 {
    fine_reduce(geom, field, ncomp, |vals, sh| {
        (0..ncomp)
            .map(|c| {
                let v: f64 = sh.iter().zip(vals.chunks(ncomp)).map(|(s, x)| s * x[c]).sum();
                v * v
            })
            .sum()
    })
}

fn fine_reduce(geom: &FineGeometry, field: &[f64], ncomp: usize, g: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> f64 {
    let el = geom.reference_element();
    let quad: Vec<(f64, Vec<f64>)> = el.quadrature().into_iter().map(|(xi, w)| (w, el.eval(xi).values)).collect();
    let parts: Vec<f64> = geom
        .material_elements()
        .into_par_iter()
        .map(|e| {
            let vals: Vec<f64> =
                geom.element_nodes(e).iter().flat_map(|n| field[n * ncomp..(n + 1) * ncomp].to_vec()).collect();
            quad.iter().map(|(w, sh)| w * g(&vals, sh)).sum::<f64>()
        })
        .collect();
    parts.iter().sum()
}

/// Integration identity `∫ Π_ε(ψ) = (1/ε) ∫ ψ` and the matching L² identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrationReport {
    /// max discrepancy of the component integrals, relative to `(1/ε)|Ω_ε|^{1/2}‖ψ_c‖`
    pub integral_error: f64,
    /// relative discrepancy of `‖Π_ε ψ‖² = (1/ε)‖ψ‖²`
    pub norm_error: f64,
}

pub fn integration_identity(
    geom: &FineGeometry,
    field: &[f64],
    ncomp: usize,
    cell: &CellMesh,
) -> Result<IntegrationReport, UnfoldError> {
    let u = unfold(geom, field, ncomp, cell)?;
    let ones = vec![1.0; geom.n_nodes()];
    let volume = fine_integral(geom, &ones, 1, 0);
    let mut integral_error: f64 = 0.0;
    for c in 0..ncomp {
        let lhs = u.integral(c);
        let fine = fine_integral(geom, field, ncomp, c);
        // Cauchy–Schwarz bound on |∫ψ_c|, so that near-cancelling integrals are not over-weighted
        let component: Vec<f64> = field.iter().skip(c).step_by(ncomp).copied().collect();
        let bound = (volume * fine_norm_sq(geom, &component, 1)).sqrt() / geom.eps;
        let diff = (lhs - fine / geom.eps).abs();
        integral_error = integral_error.max(if bound > 0.0 { diff / bound } else { diff });
    }
    let lhs = u.norm_sq();
    let rhs = fine_norm_sq(geom, field, ncomp) / geom.eps;
    let norm_error = if rhs > 0.0 { (lhs - rhs).abs() / rhs } else { lhs.abs() };
    Ok(IntegrationReport { integral_error, norm_error })
}

/// Maximum of `|∇_y Π_ε(ψ) − ε Π_ε(∇ψ)|` over Gauss points, for a vector field.
pub fn unfold_gradient_identity(geom: &FineGeometry, field: &[f64], cell: &CellMesh) -> Result<f64, UnfoldError> {
    let u = unfold(geom, field, 3, cell)?;
    let cel = cell.reference_element();
    let fel = geom.reference_element();
    let pts: Vec<([f64; 3], Vec<[f64; 3]>, Vec<[f64; 3]>)> =
        cel.quadrature().into_iter().map(|(xi, _)| (xi, cel.eval(xi).grads, fel.eval(xi).grads)).collect();
    let r = cell.resolution;
    let per_cell: Vec<f64> = (0..u.n_cells())
        .into_par_iter()
        .map(|k| {
            let (k1, k2) = (k % geom.periods[0], k / geom.periods[0]);
            let mut worst: f64 = 0.0;
            for idx in 0..cell.n_elements() {
                if !cell.material[idx] {
                    continue;
                }
                let ce = cell.element_coords(idx);
                let fe = [k1 * r[0] + ce[0], k2 * r[1] + ce[1], ce[2]];
                let uv = u.element_values(k, ce);
                let fv = geom.gather(field, fe);
                for (_, cg, fg) in &pts {
                    let gy = displacement_gradient(cg, &uv);
                    let gx = displacement_gradient(fg, &fv);
                    worst = worst.max((gy - geom.eps * gx).abs().max());
                }
            }
            worst
        })
        .collect();
    Ok(per_cell.into_iter().fold(0.0, f64::max))
}

/// Kirchhoff–Love split `u = U_KL + 𝔲` with thickness averages.
#[derive(Clone, Debug)]
pub struct KlDecomposition {
    /// `(𝒰₁, 𝒰₂, 𝒰₃)` on the in-plane node grid
    pub midsurface: Vec<[f64; 3]>,
    /// `(∂₁𝒰₃, ∂₂𝒰₃)` by finite differences
    pub slope: Vec<[f64; 2]>,
    /// `U_KL` at every fine node
    pub kl: Vec<f64>,
    /// `𝔲 = u − U_KL`
    pub residual: Vec<f64>,
}

/// One-dimensional integration weights of the nodal basis along `x₃`.
fn thickness_weights(geom: &FineGeometry) -> Vec<f64> {
    let p = geom.order();
    let h = geom.element_size()[2];
    let local: Vec<f64> = if p == 1 { vec![0.5 * h, 0.5 * h] } else { vec![h / 6.0, 4.0 * h / 6.0, h / 6.0] };
    let n = geom.node_dims()[2];
    let mut w = vec![0.0; n];
    for e in 0..geom.elements()[2] {
        for (a, lw) in local.iter().enumerate() {
            w[p * e + a] += lw;
        }
    }
    w
}

/// Derivative along one grid axis: central inside, second-order one-sided at the ends.
fn grid_derivative(f: &[f64], dims: [usize; 2], axis: usize, dx: f64) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    let (len, stride) = if axis == 0 { (dims[0], 1) } else { (dims[1], dims[0]) };
    for k in 0..f.len() {
        let i = if axis == 0 { k % dims[0] } else { k / dims[0] };
        let at = |j: usize| f[k - i * stride + j * stride];
        out[k] = if len < 3 {
            (at(len - 1) - at(0)) / (dx * (len - 1) as f64)
        } else if i == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * dx)
        } else if i + 1 == len {
            (3.0 * at(i) - 4.0 * at(i - 1) + at(i - 2)) / (2.0 * dx)
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * dx)
        };
    }
    out
}

pub fn kl_decompose(geom: &FineGeometry, u: &[f64]) -> KlDecomposition {
    let d = geom.node_dims();
    let w = thickness_weights(geom);
    let thickness = 2.0 * geom.eps;
    let n_plane = d[0] * d[1];
    let mut midsurface = vec![[0.0; 3]; n_plane];
    for (col, m) in midsurface.iter_mut().enumerate() {
        for (k, wk) in w.iter().enumerate() {
            let node = col + n_plane * k;
            for c in 0..3 {
                m[c] += wk * u[3 * node + c] / thickness;
            }
        }
    }
    let h = geom.element_size();
    let p = geom.order() as f64;
    let w3: Vec<f64> = midsurface.iter().map(|m| m[2]).collect();
    let d1 = grid_derivative(&w3, [d[0], d[1]], 0, h[0] / p);
    let d2 = grid_derivative(&w3, [d[0], d[1]], 1, h[1] / p);
    let slope: Vec<[f64; 2]> = d1.iter().zip(&d2).map(|(a, b)| [*a, *b]).collect();
    let mut kl = vec![0.0; u.len()];
    for node in 0..geom.n_nodes() {
        let n = geom.node_coords(node);
        let col = n[0] + d[0] * n[1];
        let x3 = geom.node_position(n)[2];
        let m = midsurface[col];
        kl[3 * node] = m[0] - x3 * slope[col][0];
        kl[3 * node + 1] = m[1] - x3 * slope[col][1];
        kl[3 * node + 2] = m[2];
    }
    let residual = u.iter().zip(&kl).map(|(a, b)| a - b).collect();
    KlDecomposition { midsurface, slope, kl, residual }
}

/// `‖∇v‖_{L²(Ω_ε)}` of a nodal vector field.
pub fn gradient_norm(geom: &FineGeometry, v: &[f64]) -> f64 {
    let el = geom.reference_element();
    let quad: Vec<(f64, Vec<[f64; 3]>)> = el.quadrature().into_iter().map(|(xi, w)| (w, el.eval(xi).grads)).collect();
    let parts: Vec<f64> = geom
        .material_elements()
        .into_par_iter()
        .map(|e| {
            let nodal = geom.gather(v, e);
            quad.iter().map(|(w, g)| w * displacement_gradient(g, &nodal).norm_squared()).sum::<f64>()
        })
        .collect();
    parts.iter().sum::<f64>().sqrt()
}

/// Scaling audits of the Kirchhoff–Love split and the Korn-type inequality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlAudit {
    pub eps: f64,
    pub strain_norm: f64,
    /// `‖𝔲‖ / (ε ‖e(u)‖)`
    pub residual_ratio: f64,
    /// `‖∇𝔲‖ / ‖e(u)‖`
    pub residual_gradient_ratio: f64,
    /// `(‖u₁‖ + ‖u₂‖ + ε‖u₃‖) / ‖e(u)‖`
    pub korn_ratio: f64,
}

pub fn kl_audit(geom: &FineGeometry, u: &[f64]) -> KlAudit {
    let kl = kl_decompose(geom, u);
    let e = strain_norm(geom, u);
    let r = fine_norm_sq(geom, &kl.residual, 3).sqrt();
    let gr = gradient_norm(geom, &kl.residual);
    let n = displacement_norms(geom, u);
    KlAudit {
        eps: geom.eps,
        strain_norm: e,
        residual_ratio: r / (geom.eps * e),
        residual_gradient_ratio: gr / e,
        korn_ratio: (n[0] + n[1] + geom.eps * n[2]) / e,
    }
}

/// Limit field `E^Lin(𝒰)(y₃) + e_y(û)(x′, y)` assembled from a plate solution
/// and cell correctors.
pub struct TwoScaleField<'a> {
    pub plate: &'a PlateSolution,
    pub cell: &'a HomogenizedCell,
}

impl TwoScaleField<'_> {
    /// `e_y(χ_k)` at a cell point, for the six correctors.
    pub fn corrector_strains(&self, y: [f64; 3]) -> [SymMat3; 6] {
        let mesh = &self.cell.mesh;
        let (e, xi) = locate(mesh, y);
        let el = mesh.reference_element();
        let grads = el.eval(xi).grads;
        std::array::from_fn(|k| {
            let nodal = crate::corrector::gather(mesh, self.cell.dofmap(), self.cell.correctors.field(slot_mode(k)), e);
            lin_strain(&displacement_gradient(&grads, &nodal))
        })
    }

    pub fn strain(&self, x: [f64; 2], y: [f64; 3]) -> SymMat3 {
        let pair = self.plate.eval(x).pair;
        let micro = self.corrector_strains(y);
        let mut s = elin_matrix(&pair, y[2]);
        for (k, w) in corrector_weights(&pair).iter().enumerate() {
            s += *w * micro[k];
        }
        s
    }

    /// `∫_{ω×𝒴} Q(limit)` over a plate Gauss grid and the cell quadrature.
    pub fn energy(&self, n_plate_points: usize) -> f64 {
        let mesh = &self.cell.mesh;
        let el = mesh.reference_element();
        let pm = &self.plate.mesh;
        let hp = pm.spacing();
        let (gp, gw) = gauss_01(n_plate_points);
        let cell_pts: Vec<([f64; 3], f64, usize)> = (0..mesh.n_elements())
            .filter(|i| mesh.material[*i])
            .flat_map(|i| {
                let ec = mesh.element_coords(i);
                let o = mesh.element_origin(ec);
                let h = mesh.element_size();
                el.quadrature()
                    .into_iter()
                    .map(move |(xi, w)| ([o[0] + xi[0] * h[0], o[1] + xi[1] * h[1], o[2] + xi[2] * h[2]], w, i))
            })
            .collect();
        let micro: Vec<[SymMat3; 6]> = cell_pts.iter().map(|(y, _, _)| self.corrector_strains(*y)).collect();
        let plate_pts: Vec<([f64; 2], f64)> = (0..pm.cells[1])
            .flat_map(|j| (0..pm.cells[0]).map(move |i| (i, j)))
            .flat_map(|(i, j)| {
                let gp = gp.clone();
                let gw = gw.clone();
                (0..gp.len()).flat_map(move |a| {
                    let gp = gp.clone();
                    let gw = gw.clone();
                    (0..gp.len()).map(move |b| {
                        ([(i as f64 + gp[a]) * hp[0], (j as f64 + gp[b]) * hp[1]], gw[a] * gw[b] * hp[0] * hp[1])
                    })
                })
            })
            .collect();
        let parts: Vec<f64> = plate_pts
            .par_iter()
            .map(|(x, wx)| {
                let pair = self.plate.eval(*x).pair;
                let weights = corrector_weights(&pair);
                let mut s = 0.0;
                for ((y, wy, i), m) in cell_pts.iter().zip(&micro) {
                    let mut strain = elin_matrix(&pair, y[2]);
                    for k in 0..6 {
                        strain += weights[k] * m[k];
                    }
                    let hooke = self.cell.phases.tensor(mesh.element_phase[*i]).expect("material phase");
                    s += wy * hooke.quadratic_form(&strain);
                }
                wx * s
            })
            .collect();
        parts.iter().sum()
    }
}

/// Component selector and test profile of one dictionary entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DictionaryEntry {
    /// strain component `(i, j)`, zero-based
    pub component: (usize, usize),
    /// in-plane factor: 0 → 1, 1 → x₁/L₁, 2 → x₂/L₂, 3 → x₁x₂/(L₁L₂)
    pub plane: u8,
    /// thickness factor: 0 → 1, 1 → y₃, 2 → indicator of y₃ > 0
    pub thickness: u8,
}

impl DictionaryEntry {
    fn weight(&self, x: [f64; 2], lengths: [f64; 2], y3: f64) -> f64 {
        let p = match self.plane {
            0 => 1.0,
            1 => x[0] / lengths[0],
            2 => x[1] / lengths[1],
            _ => x[0] * x[1] / (lengths[0] * lengths[1]),
        };
        let t = match self.thickness {
            0 => 1.0,
            1 => y3,
            _ => {
                if y3 > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        p * t
    }
}

/// The 20 dictionary test fields: strain components 11, 22, 12, 33 paired
/// with five in-plane/thickness profiles.
pub fn dictionary(version: u32) -> Result<Vec<DictionaryEntry>, UnfoldError> {
    if version != DICTIONARY_VERSION {
        return Err(UnfoldError::Dictionary(version));
    }
    let components = [(0, 0), (1, 1), (0, 1), (2, 2)];
    let profiles = [(0u8, 0u8), (1, 1), (2, 1), (3, 0), (0, 2)];
    Ok(components
        .iter()
        .flat_map(|c| profiles.iter().map(move |(p, t)| DictionaryEntry { component: *c, plane: *p, thickness: *t }))
        .collect())
}

/// Strong and weak (moment) distances between the rescaled unfolded fine
/// strain and the limit field.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoScaleError {
    pub eps: f64,
    /// `‖ε^{−(a+1)} Π_ε(e(u_ε)) − limit‖_{L²(ω×𝒴)}`
    pub strong: f64,
    /// strong error relative to the norm of the limit
    pub strong_relative: f64,
    pub fine_moments: Vec<f64>,
    pub limit_moments: Vec<f64>,
    /// `max_j |M_j(fine) − M_j(limit)| / max_j |M_j(limit)|`
    pub moment_error_max: f64,
}

pub fn two_scale_error(
    geom: &FineGeometry,
    fine: &FineSolution,
    limit: &TwoScaleField<'_>,
    dictionary_version: u32,
) -> Result<TwoScaleError, UnfoldError> {
    let dict = dictionary(dictionary_version)?;
    let r = geom.cell.resolution;
    let fel: HexElement = geom.reference_element();
    let cell_mesh = &geom.cell;
    let cel = cell_mesh.reference_element();
    let scale = geom.eps.powi(fine.a + 1);
    // cell quadrature points on the fine per-cell grid
    let quad: Vec<([f64; 3], f64, Vec<[f64; 3]>)> =
        fel.quadrature().into_iter().zip(cel.quadrature()).map(|((xi, _), (_, wc))| (xi, wc, fel.eval(xi).grads)).collect();
    let quad_ref = &quad;
    let cell_pts: Vec<(usize, usize, [f64; 3], [SymMat3; 6])> = (0..cell_mesh.n_elements())
        .filter(|i| cell_mesh.material[*i])
        .flat_map(|i| {
            let ce = cell_mesh.element_coords(i);
            let o = cell_mesh.element_origin(ce);
            let h = cell_mesh.element_size();
            (0..quad_ref.len()).map(move |q| (i, q, [o[0] + quad_ref[q].0[0] * h[0], o[1] + quad_ref[q].0[1] * h[1], o[2] + quad_ref[q].0[2] * h[2]]))
        })
        .map(|(i, q, y)| (i, q, y, limit.corrector_strains(y)))
        .collect();
    let (gp, gw) = gauss_01(2);
    let lengths = geom.lengths;
    let eps = geom.eps;
    let n_dict = dict.len();
    let per_cell: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = (0..geom.periods[0] * geom.periods[1])
        .into_par_iter()
        .map(|k| {
            let (k1, k2) = (k % geom.periods[0], k / geom.periods[0]);
            let mut strong = 0.0;
            let mut lim_norm = 0.0;
            let mut mf = vec![0.0; n_dict];
            let mut ml = vec![0.0; n_dict];
            // unfolded fine strain at the cell points (constant in x′ over the macro cell)
            let fine_strain: Vec<SymMat3> = cell_pts
                .iter()
                .map(|(i, q, _, _)| {
                    let ce = cell_mesh.element_coords(*i);
                    let fe = [k1 * r[0] + ce[0], k2 * r[1] + ce[1], ce[2]];
                    let nodal = geom.gather(&fine.u, fe);
                    (1.0 / scale) * lin_strain(&displacement_gradient(&quad[*q].2, &nodal))
                })
                .collect();
            for a in 0..2 {
                for b in 0..2 {
                    let x = [(k1 as f64 + gp[a]) * eps, (k2 as f64 + gp[b]) * eps];
                    let wx = gw[a] * gw[b] * eps * eps;
                    let pair = limit.plate.eval(x).pair;
                    let weights = corrector_weights(&pair);
                    for ((_, q, y, micro), fs) in cell_pts.iter().zip(&fine_strain) {
                        let wy = quad[*q].1;
                        let mut ls = elin_matrix(&pair, y[2]);
                        for m in 0..6 {
                            ls += weights[m] * micro[m];
                        }
                        let w = wx * wy;
                        strong += w * (*fs - ls).norm_sq();
                        lim_norm += w * ls.norm_sq();
                        for (j, d) in dict.iter().enumerate() {
                            let t = d.weight(x, lengths, y[2]);
                            mf[j] += w * t * fs.get(d.component.0, d.component.1);
                            ml[j] += w * t * ls.get(d.component.0, d.component.1);
                        }
                    }
                }
            }
            (strong, lim_norm, mf, ml)
        })
        .collect();
    let mut strong = 0.0;
    let mut lim_norm = 0.0;
    let mut fine_moments = vec![0.0; n_dict];
    let mut limit_moments = vec![0.0; n_dict];
    for (s, l, mf, ml) in per_cell {
        strong += s;
        lim_norm += l;
        for j in 0..n_dict {
            fine_moments[j] += mf[j];
            limit_moments[j] += ml[j];
        }
    }
    let denom = limit_moments.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let moment_error_max = fine_moments
        .iter()
        .zip(&limit_moments)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / if denom > 0.0 { denom } else { 1.0 };
    let strong = strong.sqrt();
    let lim = lim_norm.sqrt();
    Ok(TwoScaleError {
        eps,
        strong,
        strong_relative: if lim > 0.0 { strong / lim } else { strong },
        fine_moments,
        limit_moments,
        moment_error_max,
    })
}

/// Displacement gradient of a fine field at an element-local point (used by tests and diagnostics).
pub fn fine_gradient(geom: &FineGeometry, field: &[f64], e: [usize; 3], xi: [f64; 3]) -> Mat3 {
    displacement_gradient(&geom.reference_element().eval(xi).grads, &geom.gather(field, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{CellGeometry, PhaseAssignment};
    use crate::plate::Side;
    use crate::HookeTensor;

    fn geometry(eps: f64) -> FineGeometry {
        let phases = PhaseAssignment::new(vec![Some(HookeTensor::isotropic(1.0, 1.0).unwrap())]);
        FineGeometry::new(&CellGeometry::homogeneous(0), &phases, [2, 2, 2], 1, eps, [1.0, 0.5], vec![Side::X0]).unwrap()
    }

    #[test]
    fn constant_and_thickness_fields() {
        let g = geometry(0.25);
        let c: Vec<f64> = vec![3.5; g.n_nodes()];
        let u = unfold(&g, &c, 1, &g.cell).unwrap();
        assert!(u.values.iter().all(|v| *v == 3.5));
        let x3: Vec<f64> = (0..g.n_nodes()).map(|k| g.node_position(g.node_coords(k))[2]).collect();
        let u = unfold(&g, &x3, 1, &g.cell).unwrap();
        for k in 0..u.n_cells() {
            for n in 0..g.cell.n_raw_nodes() {
                let y3 = g.cell.node_position(g.cell.raw_node_coords(n))[2];
                assert!((u.values[k * g.cell.n_raw_nodes() + n] - 0.25 * y3).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mismatched_cell_grid_is_an_error() {
        let g = geometry(0.25);
        let other = crate::cell::build_cell_mesh(&CellGeometry::homogeneous(0), [4, 2, 2], 1).unwrap();
        assert!(matches!(unfold(&g, &vec![0.0; g.n_nodes()], 1, &other), Err(UnfoldError::Incommensurate { .. })));
    }

    #[test]
    fn constant_vertical_displacement_is_pure_kl() {
        let g = geometry(0.25);
        let u: Vec<f64> = (0..3 * g.n_nodes()).map(|i| if i % 3 == 2 { 0.7 } else { 0.0 }).collect();
        let kl = kl_decompose(&g, &u);
        assert!(kl.midsurface.iter().all(|m| (m[2] - 0.7).abs() < 1e-14 && m[0].abs() < 1e-14));
        assert!(kl.residual.iter().all(|r| r.abs() < 1e-14));
    }

    #[test]
    fn dictionary_has_twenty_entries() {
        assert_eq!(dictionary(DICTIONARY_VERSION).unwrap().len(), 20);
        assert!(dictionary(99).is_err());
    }
}

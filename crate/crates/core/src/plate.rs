//! Homogenized clamped plate on a rectangle.
//!
//! Minimizes
//!
//! ```text
//! J(𝒰) = s_E ∫_ω pᵀ T p dx′ − s_F ∫_ω f·𝒰 dx′,   p = (e(𝒰_m), ∇²𝒰₃),
//! ```
//!
//! with biquadratic Lagrange elements for the membrane displacement and
//! Bogner–Fox–Schmit rectangles (`w, ∂₁w, ∂₂w, ∂₁₂w` per node) for the
//! deflection. `s_E` is the cell measure used to normalize `T` and `s_F` the
//! measure of the loaded material, both `|𝒴| = 2` for unperforated cells.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fem::{gauss_01, Lagrange1d};
use crate::homogenize::{PlateStrainPair, PlateTensor};
use crate::linalg::{cholesky_solve, norm, CsrBuilder, CsrMatrix, SolveError};

#[derive(Debug, Clone, thiserror::Error)]
pub enum PlateError {
    #[error("clamped boundary is empty; the plate problem is not coercive")]
    NoClamp,
    #[error("plate grid needs at least one element per direction, got {0:?}")]
    Resolution([usize; 2]),
    #[error("plate side lengths must be positive, got {0:?}")]
    Lengths([f64; 2]),
    #[error("plate system: {0}")]
    Solve(#[from] SolveError),
}

/// Side of the rectangle `(0, L₁) × (0, L₂)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    X0,
    X1,
    Y0,
    Y1,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::X0, Side::X1, Side::Y0, Side::Y1];

    /// Distance of an in-plane point to this side.
    pub fn distance(self, x: [f64; 2], lengths: [f64; 2]) -> f64 {
        match self {
            Side::X0 => x[0],
            Side::X1 => lengths[0] - x[0],
            Side::Y0 => x[1],
            Side::Y1 => lengths[1] - x[1],
        }
    }
}

/// Structured grid on the midsurface with a clamped side set.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateMesh {
    pub lengths: [f64; 2],
    pub cells: [usize; 2],
    pub clamped: Vec<Side>,
}

impl PlateMesh {
    pub fn new(lengths: [f64; 2], cells: [usize; 2], clamped: Vec<Side>) -> Result<Self, PlateError> {
        if cells[0] == 0 || cells[1] == 0 {
            return Err(PlateError::Resolution(cells));
        }
        if !(lengths[0] > 0.0 && lengths[1] > 0.0) {
            return Err(PlateError::Lengths(lengths));
        }
        if clamped.is_empty() {
            return Err(PlateError::NoClamp);
        }
        Ok(PlateMesh { lengths, cells, clamped })
    }

    pub fn spacing(&self) -> [f64; 2] {
        [self.lengths[0] / self.cells[0] as f64, self.lengths[1] / self.cells[1] as f64]
    }

    pub fn refined(&self) -> Self {
        PlateMesh { cells: [2 * self.cells[0], 2 * self.cells[1]], ..self.clone() }
    }

    /// Distance to the clamped part of the boundary.
    pub fn clamp_distance(&self, x: [f64; 2]) -> f64 {
        self.clamped.iter().map(|s| s.distance(x, self.lengths)).fold(f64::INFINITY, f64::min)
    }

    fn membrane_dims(&self) -> [usize; 2] {
        [2 * self.cells[0] + 1, 2 * self.cells[1] + 1]
    }

    fn bending_dims(&self) -> [usize; 2] {
        [self.cells[0] + 1, self.cells[1] + 1]
    }

    pub fn n_membrane_dofs(&self) -> usize {
        let d = self.membrane_dims();
        2 * d[0] * d[1]
    }

    pub fn n_dofs(&self) -> usize {
        let b = self.bending_dims();
        self.n_membrane_dofs() + 4 * b[0] * b[1]
    }

    fn on_clamped(&self, i: usize, j: usize, dims: [usize; 2]) -> bool {
        self.clamped.iter().any(|s| match s {
            Side::X0 => i == 0,
            Side::X1 => i + 1 == dims[0],
            Side::Y0 => j == 0,
            Side::Y1 => j + 1 == dims[1],
        })
    }

    /// Whether each global dof is fixed by the clamp.
    pub fn clamped_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_dofs()];
        let md = self.membrane_dims();
        for j in 0..md[1] {
            for i in 0..md[0] {
                if self.on_clamped(i, j, md) {
                    let n = i + md[0] * j;
                    mask[2 * n] = true;
                    mask[2 * n + 1] = true;
                }
            }
        }
        let bd = self.bending_dims();
        let off = self.n_membrane_dofs();
        for j in 0..bd[1] {
            for i in 0..bd[0] {
                if self.on_clamped(i, j, bd) {
                    let n = i + bd[0] * j;
                    for k in 0..4 {
                        mask[off + 4 * n + k] = true;
                    }
                }
            }
        }
        mask
    }

    /// Global dofs of element `(ei, ej)`: 18 membrane then 16 bending.
    pub fn element_dofs(&self, ei: usize, ej: usize) -> [usize; 34] {
        let mut out = [0usize; 34];
        let md = self.membrane_dims();
        for b in 0..3 {
            for a in 0..3 {
                let n = (2 * ei + a) + md[0] * (2 * ej + b);
                let l = a + 3 * b;
                out[2 * l] = 2 * n;
                out[2 * l + 1] = 2 * n + 1;
            }
        }
        let bd = self.bending_dims();
        let off = self.n_membrane_dofs();
        for (c, (ci, cj)) in BFS_CORNERS.iter().enumerate() {
            let n = (ei + ci) + bd[0] * (ej + cj);
            for k in 0..4 {
                out[18 + 4 * c + k] = off + 4 * n + k;
            }
        }
        out
    }

    /// Element containing `x` and the local coordinates in `[0, 1]²`.
    pub fn locate(&self, x: [f64; 2]) -> ([usize; 2], [f64; 2]) {
        let h = self.spacing();
        let mut e = [0usize; 2];
        let mut s = [0.0; 2];
        for d in 0..2 {
            let t = (x[d] / h[d]).clamp(0.0, self.cells[d] as f64);
            let i = (t.floor() as usize).min(self.cells[d] - 1);
            e[d] = i;
            s[d] = t - i as f64;
        }
        (e, s)
    }
}

const BFS_CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

/// Cubic Hermite basis on an interval of length `h` at `s ∈ [0,1]`:
/// values, first and second physical derivatives of
/// `(value at 0, slope at 0, value at h, slope at h)`.
pub fn hermite(s: f64, h: f64) -> [[f64; 4]; 3] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        [1.0 - 3.0 * s2 + 2.0 * s3, h * (s - 2.0 * s2 + s3), 3.0 * s2 - 2.0 * s3, h * (s3 - s2)],
        [(6.0 * s2 - 6.0 * s) / h, 1.0 - 4.0 * s + 3.0 * s2, (6.0 * s - 6.0 * s2) / h, 3.0 * s2 - 2.0 * s],
        [(12.0 * s - 6.0) / (h * h), (6.0 * s - 4.0) / h, (6.0 - 12.0 * s) / (h * h), (6.0 * s - 2.0) / h],
    ]
}

/// Shape data of one plate element at a local point.
struct PlateShape {
    /// membrane: value, ∂₁, ∂₂ of the 9 biquadratic functions
    m: [[f64; 3]; 9],
    /// bending: value, ∂₁, ∂₂, ∂₁₁, ∂₂₂, ∂₁₂ of the 16 BFS functions
    b: [[f64; 6]; 16],
}

fn plate_shape(s: [f64; 2], h: [f64; 2]) -> PlateShape {
    let lag = Lagrange1d::new(2);
    let (vx, dx) = lag.eval(s[0]);
    let (vy, dy) = lag.eval(s[1]);
    let mut m = [[0.0; 3]; 9];
    for b in 0..3 {
        for a in 0..3 {
            m[a + 3 * b] = [vx[a] * vy[b], dx[a] * vy[b] / h[0], vx[a] * dy[b] / h[1]];
        }
    }
    let hx = hermite(s[0], h[0]);
    let hy = hermite(s[1], h[1]);
    let mut bb = [[0.0; 6]; 16];
    for (c, (ci, cj)) in BFS_CORNERS.iter().enumerate() {
        for k in 0..4 {
            let ix = 2 * ci + (k & 1);
            let iy = 2 * cj + (k >> 1);
            bb[4 * c + k] = [
                hx[0][ix] * hy[0][iy],
                hx[1][ix] * hy[0][iy],
                hx[0][ix] * hy[1][iy],
                hx[2][ix] * hy[0][iy],
                hx[0][ix] * hy[2][iy],
                hx[1][ix] * hy[1][iy],
            ];
        }
    }
    PlateShape { m, b: bb }
}

/// Columns of the plate strain operator `x ↦ p` for the 34 local dofs.
fn strain_columns(sh: &PlateShape) -> [[f64; 6]; 34] {
    let mut cols = [[0.0; 6]; 34];
    for (l, g) in sh.m.iter().enumerate() {
        cols[2 * l] = [g[1], 0.0, 0.5 * g[2], 0.0, 0.0, 0.0];
        cols[2 * l + 1] = [0.0, g[2], 0.5 * g[1], 0.0, 0.0, 0.0];
    }
    for (l, g) in sh.b.iter().enumerate() {
        cols[18 + l] = [0.0, 0.0, 0.0, g[3], g[4], g[5]];
    }
    cols
}

/// Per-component polynomial `Σ c x₁^i x₂^j`, terms stored as `[c, i, j]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly2 {
    pub terms: Vec<[f64; 3]>,
}

impl Poly2 {
    pub fn constant(c: f64) -> Self {
        if c == 0.0 {
            Poly2::default()
        } else {
            Poly2 { terms: vec![[c, 0.0, 0.0]] }
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.terms.iter().map(|t| t[0] * x[0].powi(t[1] as i32) * x[1].powi(t[2] as i32)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t[0] == 0.0)
    }

    /// Exponents must be small non-negative integers.
    pub fn is_valid(&self) -> bool {
        self.terms.iter().all(|t| {
            t[0].is_finite() && [t[1], t[2]].iter().all(|e| *e >= 0.0 && e.fract() == 0.0 && *e <= 16.0)
        })
    }
}

/// Force density `f = (f₁, f₂, f₃)` on the midsurface.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub f1: Poly2,
    pub f2: Poly2,
    pub f3: Poly2,
}

impl LoadSpec {
    pub fn uniform(f: [f64; 3]) -> Self {
        LoadSpec { f1: Poly2::constant(f[0]), f2: Poly2::constant(f[1]), f3: Poly2::constant(f[2]) }
    }

    pub fn eval(&self, x: [f64; 2]) -> [f64; 3] {
        [self.f1.eval(x), self.f2.eval(x), self.f3.eval(x)]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let sc = |p: &Poly2| Poly2 { terms: p.terms.iter().map(|t| [s * t[0], t[1], t[2]]).collect() };
        LoadSpec { f1: sc(&self.f1), f2: sc(&self.f2), f3: sc(&self.f3) }
    }

    pub fn is_zero(&self) -> bool {
        self.f1.is_zero() && self.f2.is_zero() && self.f3.is_zero()
    }
}

/// Energy and load prefactors of the plate functional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateScales {
    /// multiplies `∫ pᵀ T p`
    pub energy: f64,
    /// multiplies `∫ f·𝒰`
    pub load: f64,
}

impl Default for PlateScales {
    fn default() -> Self {
        PlateScales { energy: crate::cell::CELL_VOLUME, load: crate::cell::CELL_VOLUME }
    }
}

/// Reduced system over the free dofs.
#[derive(Clone, Debug)]
pub struct PlateSystem {
    pub mesh: PlateMesh,
    pub tensor: PlateTensor,
    pub scales: PlateScales,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// free index of each global dof
    pub free: Vec<Option<usize>>,
}

impl PlateSystem {
    pub fn n_free(&self) -> usize {
        self.rhs.len()
    }

    /// Global vector (clamped dofs zero) from a free vector.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.free.iter().map(|f| f.map(|i| x[i]).unwrap_or(0.0)).collect()
    }

    /// Free vector from a global vector.
    pub fn restrict(&self, g: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_free()];
        for (k, f) in self.free.iter().enumerate() {
            if let Some(i) = f {
                x[*i] = g[k];
            }
        }
        x
    }
}

pub fn assemble_plate_system(
    mesh: &PlateMesh,
    tensor: &PlateTensor,
    load: &LoadSpec,
    scales: PlateScales,
) -> Result<PlateSystem, PlateError> {
    let mask = mesh.clamped_mask();
    let mut next = 0;
    let free: Vec<Option<usize>> = mask
        .iter()
        .map(|c| {
            if *c {
                None
            } else {
                next += 1;
                Some(next - 1)
            }
        })
        .collect();
    let h = mesh.spacing();
    let t = tensor.block();
    let (gp4, gw4) = gauss_01(4);
    let (gp3, gw3) = gauss_01(3);
    let area = h[0] * h[1];
    // stiffness is identical on every element
    let mut ke = vec![0.0; 34 * 34];
    for (px, wx) in gp4.iter().zip(&gw4) {
        for (py, wy) in gp4.iter().zip(&gw4) {
            let cols = strain_columns(&plate_shape([*px, *py], h));
            let tc: Vec<[f64; 6]> = cols
                .iter()
                .map(|c| std::array::from_fn(|r| (0..6).map(|s| t[(r, s)] * c[s]).sum()))
                .collect();
            let w = 2.0 * scales.energy * wx * wy * area;
            for a in 0..34 {
                for b in 0..34 {
                    let v: f64 = (0..6).map(|r| cols[a][r] * tc[b][r]).sum();
                    ke[a * 34 + b] += w * v;
                }
            }
        }
    }
    let load_shapes: Vec<([f64; 2], f64, PlateShape)> = gp3
        .iter()
        .zip(&gw3)
        .flat_map(|(px, wx)| gp3.iter().zip(&gw3).map(move |(py, wy)| ([*px, *py], wx * wy)))
        .map(|(s, w)| (s, w * area, plate_shape(s, h)))
        .collect();
    let elements: Vec<[usize; 2]> =
        (0..mesh.cells[1]).flat_map(|j| (0..mesh.cells[0]).map(move |i| [i, j])).collect();
    let element_dofs: Vec<Vec<Option<usize>>> =
        elements.iter().map(|e| mesh.element_dofs(e[0], e[1]).iter().map(|d| free[*d]).collect()).collect();
    let mut builder = CsrBuilder::from_elements(next, element_dofs.iter().map(|d| d.as_slice()));
    for dofs in &element_dofs {
        builder.add_element(dofs, &ke);
    }
    let element_loads: Vec<[f64; 34]> = elements
        .par_iter()
        .map(|e| {
            let mut fe = [0.0; 34];
            for (s, w, sh) in &load_shapes {
                let x = [(e[0] as f64 + s[0]) * h[0], (e[1] as f64 + s[1]) * h[1]];
                let f = load.eval(x);
                for (l, g) in sh.m.iter().enumerate() {
                    fe[2 * l] += w * f[0] * g[0];
                    fe[2 * l + 1] += w * f[1] * g[0];
                }
                for (l, g) in sh.b.iter().enumerate() {
                    fe[18 + l] += w * f[2] * g[0];
                }
            }
            fe
        })
        .collect();
    let mut rhs = vec![0.0; next];
    for (dofs, fe) in element_dofs.iter().zip(&element_loads) {
        for (d, v) in dofs.iter().zip(fe) {
            if let Some(i) = d {
                rhs[*i] += scales.load * v;
            }
        }
    }
    Ok(PlateSystem { mesh: mesh.clone(), tensor: *tensor, scales, matrix: builder.finish(), rhs, free })
}

/// Minimizer of the homogenized plate functional.
#[derive(Clone, Debug)]
pub struct PlateSolution {
    pub mesh: PlateMesh,
    /// global dof vector, zero on clamped dofs
    pub values: Vec<f64>,
    /// load term `s_F ∫ f·𝒰` at the minimizer
    pub load_term: f64,
    /// `½ xᵀKx − Fᵀx` at the minimizer
    pub m_l: f64,
    pub rel_residual: f64,
}

/// Interpolated fields at one point of ω.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateFields {
    /// `(𝒰₁, 𝒰₂, 𝒰₃)`
    pub u: [f64; 3],
    /// `(∂₁𝒰₃, ∂₂𝒰₃)`
    pub grad_w: [f64; 2],
    pub pair: PlateStrainPair,
}

pub fn solve_plate(system: &PlateSystem) -> Result<PlateSolution, PlateError> {
    let x = if system.rhs.iter().all(|v| *v == 0.0) {
        vec![0.0; system.n_free()]
    } else {
        cholesky_solve(&system.matrix, &system.rhs)?
    };
    let kx = system.matrix.apply(&x);
    let res: Vec<f64> = kx.iter().zip(&system.rhs).map(|(a, b)| a - b).collect();
    let bn = norm(&system.rhs);
    let rel_residual = if bn > 0.0 { norm(&res) / bn } else { norm(&res) };
    let load_term = crate::linalg::dot(&system.rhs, &x);
    let m_l = 0.5 * crate::linalg::dot(&x, &kx) - load_term;
    Ok(PlateSolution { mesh: system.mesh.clone(), values: system.expand(&x), load_term, m_l, rel_residual })
}

impl PlateSolution {
    pub fn zero(mesh: &PlateMesh) -> Self {
        PlateSolution { mesh: mesh.clone(), values: vec![0.0; mesh.n_dofs()], load_term: 0.0, m_l: 0.0, rel_residual: 0.0 }
    }

    pub fn eval(&self, x: [f64; 2]) -> PlateFields {
        eval_dofs(&self.mesh, &self.values, x)
    }

    /// Largest deflection magnitude over the element nodes.
    pub fn max_deflection(&self) -> f64 {
        let off = self.mesh.n_membrane_dofs();
        self.values[off..].iter().step_by(4).fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn eval_dofs(mesh: &PlateMesh, values: &[f64], x: [f64; 2]) -> PlateFields {
    let (e, s) = mesh.locate(x);
    let sh = plate_shape(s, mesh.spacing());
    let dofs = mesh.element_dofs(e[0], e[1]);
    let mut u = [0.0; 3];
    let mut grad_w = [0.0; 2];
    let mut p = [0.0; 6];
    for (l, g) in sh.m.iter().enumerate() {
        let (a, b) = (values[dofs[2 * l]], values[dofs[2 * l + 1]]);
        u[0] += a * g[0];
        u[1] += b * g[0];
        p[0] += a * g[1];
        p[1] += b * g[2];
        p[2] += 0.5 * (a * g[2] + b * g[1]);
    }
    for (l, g) in sh.b.iter().enumerate() {
        let w = values[dofs[18 + l]];
        u[2] += w * g[0];
        grad_w[0] += w * g[1];
        grad_w[1] += w * g[2];
        p[3] += w * g[3];
        p[4] += w * g[4];
        p[5] += w * g[5];
    }
    PlateFields { u, grad_w, pair: PlateStrainPair::from_array(p) }
}

/// Nodal interpolant of smooth fields: `f(x) = (𝒰₁, 𝒰₂, w, ∂₁w, ∂₂w, ∂₁₂w)`.
/// Clamped dofs are set to zero regardless of `f`.
pub fn interpolate(mesh: &PlateMesh, f: impl Fn([f64; 2]) -> [f64; 6]) -> Vec<f64> {
    let mut v = vec![0.0; mesh.n_dofs()];
    let h = mesh.spacing();
    let md = mesh.membrane_dims();
    for j in 0..md[1] {
        for i in 0..md[0] {
            let x = [0.5 * i as f64 * h[0], 0.5 * j as f64 * h[1]];
            let n = i + md[0] * j;
            let val = f(x);
            v[2 * n] = val[0];
            v[2 * n + 1] = val[1];
        }
    }
    let bd = mesh.bending_dims();
    let off = mesh.n_membrane_dofs();
    for j in 0..bd[1] {
        for i in 0..bd[0] {
            let x = [i as f64 * h[0], j as f64 * h[1]];
            let n = i + bd[0] * j;
            let val = f(x);
            v[off + 4 * n..off + 4 * n + 4].copy_from_slice(&val[2..6]);
        }
    }
    for (d, c) in v.iter_mut().zip(mesh.clamped_mask()) {
        if c {
            *d = 0.0;
        }
    }
    v
}

/// Plate energy `s_E ∫ pᵀTp` of a global dof vector by direct quadrature.
pub fn quadratic_energy(mesh: &PlateMesh, tensor: &PlateTensor, scales: PlateScales, values: &[f64]) -> f64 {
    let h = mesh.spacing();
    let (gp, gw) = gauss_01(4);
    let mut total = 0.0;
    for ej in 0..mesh.cells[1] {
        for ei in 0..mesh.cells[0] {
            for (px, wx) in gp.iter().zip(&gw) {
                for (py, wy) in gp.iter().zip(&gw) {
                    let x = [(ei as f64 + px) * h[0], (ej as f64 + py) * h[1]];
                    let f = eval_dofs(mesh, values, x);
                    total += wx * wy * h[0] * h[1] * tensor.quadratic_form(&f.pair);
                }
            }
        }
    }
    scales.energy * total
}

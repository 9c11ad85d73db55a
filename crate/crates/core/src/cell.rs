//! Reference cell `Y × (−1, 1)` with `Y = (0,1)²`: phase geometry, structured
//! hexahedral meshes and periodic identification of in-plane faces.

use std::collections::VecDeque;

use crate::elastic::{HookeTensor, MaterialError};
use crate::fem::HexElement;

/// Thickness of the reference cell, `|𝒴| = 2`.
pub const CELL_VOLUME: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CellError {
    #[error("resolution {0:?} invalid: at least 2 elements per direction are required")]
    Resolution([usize; 3]),
    #[error("element order {0} unsupported (use 1 or 2)")]
    Order(usize),
    #[error("cell has no material elements")]
    Empty,
    #[error(
        "material region is disconnected: {components} components; component {index} \
         ({size} elements) contains element {element:?}"
    )]
    Disconnected { components: usize, index: usize, size: usize, element: [usize; 3] },
    #[error("material region does not connect across the periodic face normal to y{axis}")]
    PeriodicDisconnected { axis: usize },
    #[error("phase {phase} used by material elements has no Hooke tensor")]
    MissingTensor { phase: usize },
    #[error("phase {phase}: {source}")]
    Material { phase: usize, source: MaterialError },
    #[error("phase id {0} out of range")]
    UnknownPhase(usize),
}

/// Geometric primitive; containment is tested at element centroids.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// Axis-aligned box `[min, max]` in cell coordinates.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Cylinder with axis along `y₃`.
    Cylinder { center: [f64; 2], radius: f64, y3_range: [f64; 2] },
    /// Slab `y3_min ≤ y₃ ≤ y3_max`.
    Layer { y3_min: f64, y3_max: f64 },
}

impl Primitive {
    pub fn contains(&self, y: [f64; 3]) -> bool {
        match self {
            Primitive::Box { min, max } => (0..3).all(|d| y[d] >= min[d] && y[d] <= max[d]),
            Primitive::Cylinder { center, radius, y3_range } => {
                let (dx, dy) = (y[0] - center[0], y[1] - center[1]);
                dx * dx + dy * dy <= radius * radius && y[2] >= y3_range[0] && y[2] <= y3_range[1]
            }
            Primitive::Layer { y3_min, y3_max } => y[2] >= *y3_min && y[2] <= *y3_max,
        }
    }
}

/// Phase map of the cell: a background phase overridden by primitives in order
/// (later primitives win).
#[derive(Clone, Debug, PartialEq)]
pub struct CellGeometry {
    pub background: usize,
    pub primitives: Vec<(Primitive, usize)>,
    /// Phase id marking holes; elements of this phase are left out of 𝒴*.
    pub void_phase: Option<usize>,
}

impl CellGeometry {
    pub fn homogeneous(phase: usize) -> Self {
        CellGeometry { background: phase, primitives: Vec::new(), void_phase: None }
    }

    pub fn phase_at(&self, y: [f64; 3]) -> usize {
        self.primitives.iter().rev().find(|(p, _)| p.contains(y)).map(|(_, id)| *id).unwrap_or(self.background)
    }

    pub fn is_void(&self, phase: usize) -> bool {
        self.void_phase == Some(phase)
    }
}

/// Hooke tensors per phase id; `None` only for the void phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseAssignment {
    pub tensors: Vec<Option<HookeTensor>>,
}

impl PhaseAssignment {
    pub fn new(tensors: Vec<Option<HookeTensor>>) -> Self {
        PhaseAssignment { tensors }
    }

    pub fn tensor(&self, phase: usize) -> Option<&HookeTensor> {
        self.tensors.get(phase).and_then(|t| t.as_ref())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        PhaseAssignment { tensors: self.tensors.iter().map(|t| t.as_ref().map(|h| h.scaled(factor))).collect() }
    }

    /// Checks that every material element maps to a coercive tensor.
    pub fn validate(&self, mesh: &CellMesh) -> Result<(), CellError> {
        for (e, &phase) in mesh.element_phase.iter().enumerate() {
            if !mesh.material[e] {
                continue;
            }
            let t = self.tensor(phase).ok_or(CellError::MissingTensor { phase })?;
            let k0 = t.coercivity_constant();
            if k0 <= 0.0 {
                return Err(CellError::Material { phase, source: MaterialError::NotCoercive(k0) });
            }
        }
        Ok(())
    }
}

/// Structured hexahedral mesh of the reference cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMesh {
    pub resolution: [usize; 3],
    /// Lagrange degree of the elements (1 or 2).
    pub order: usize,
    pub element_phase: Vec<usize>,
    /// Elements belonging to 𝒴*.
    pub material: Vec<bool>,
}

impl CellMesh {
    pub fn n_elements(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn element_index(&self, e: [usize; 3]) -> usize {
        e[0] + self.resolution[0] * (e[1] + self.resolution[1] * e[2])
    }

    pub fn element_coords(&self, index: usize) -> [usize; 3] {
        let [n1, n2, _] = self.resolution;
        [index % n1, (index / n1) % n2, index / (n1 * n2)]
    }

    pub fn element_size(&self) -> [f64; 3] {
        let [n1, n2, n3] = self.resolution;
        [1.0 / n1 as f64, 1.0 / n2 as f64, 2.0 / n3 as f64]
    }

    pub fn element_origin(&self, e: [usize; 3]) -> [f64; 3] {
        let h = self.element_size();
        [e[0] as f64 * h[0], e[1] as f64 * h[1], -1.0 + e[2] as f64 * h[2]]
    }

    pub fn element_centroid(&self, e: [usize; 3]) -> [f64; 3] {
        let (o, h) = (self.element_origin(e), self.element_size());
        [o[0] + 0.5 * h[0], o[1] + 0.5 * h[1], o[2] + 0.5 * h[2]]
    }

    pub fn reference_element(&self) -> HexElement {
        HexElement::new(self.order, self.element_size())
    }

    /// Raw (unglued) node grid dimensions.
    pub fn node_dims(&self) -> [usize; 3] {
        self.resolution.map(|n| self.order * n + 1)
    }

    pub fn n_raw_nodes(&self) -> usize {
        self.node_dims().iter().product()
    }

    pub fn raw_node_index(&self, n: [usize; 3]) -> usize {
        let d = self.node_dims();
        n[0] + d[0] * (n[1] + d[1] * n[2])
    }

    pub fn raw_node_coords(&self, index: usize) -> [usize; 3] {
        let d = self.node_dims();
        [index % d[0], (index / d[0]) % d[1], index / (d[0] * d[1])]
    }

    pub fn node_position(&self, n: [usize; 3]) -> [f64; 3] {
        let d = self.node_dims().map(|x| (x - 1) as f64);
        [n[0] as f64 / d[0], n[1] as f64 / d[1], -1.0 + 2.0 * n[2] as f64 / d[2]]
    }

    /// Raw node indices of an element in local order.
    pub fn element_raw_nodes(&self, e: [usize; 3]) -> Vec<[usize; 3]> {
        let p = self.order;
        let mut out = Vec::with_capacity((p + 1).pow(3));
        for c in 0..=p {
            for b in 0..=p {
                for a in 0..=p {
                    out.push([p * e[0] + a, p * e[1] + b, p * e[2] + c]);
                }
            }
        }
        out
    }

    /// Periodic master grid dimensions (in-plane faces glued).
    pub fn master_dims(&self) -> [usize; 3] {
        let d = self.node_dims();
        [d[0] - 1, d[1] - 1, d[2]]
    }

    pub fn n_masters(&self) -> usize {
        self.master_dims().iter().product()
    }

    pub fn master_of(&self, n: [usize; 3]) -> usize {
        let m = self.master_dims();
        (n[0] % m[0]) + m[0] * ((n[1] % m[1]) + m[1] * n[2])
    }

    pub fn material_fraction(&self) -> f64 {
        self.material.iter().filter(|m| **m).count() as f64 / self.n_elements() as f64
    }

    /// `|𝒴*|`.
    pub fn material_volume(&self) -> f64 {
        CELL_VOLUME * self.material_fraction()
    }

    /// Raw nodes paired with a raw node by in-plane periodicity (excluding itself).
    pub fn periodic_partners(&self, n: [usize; 3]) -> Vec<[usize; 3]> {
        let m = self.master_of(n);
        let d = self.node_dims();
        let mut out = Vec::new();
        for j in 0..d[1] {
            for i in 0..d[0] {
                let cand = [i, j, n[2]];
                if cand != n && self.master_of(cand) == m {
                    out.push(cand);
                }
            }
        }
        out
    }
}

/// Samples the phase map at element centroids and checks connectivity.
pub fn build_cell_mesh(geom: &CellGeometry, resolution: [usize; 3], order: usize) -> Result<CellMesh, CellError> {
    if resolution.iter().any(|&n| n < 2) {
        return Err(CellError::Resolution(resolution));
    }
    if order != 1 && order != 2 {
        return Err(CellError::Order(order));
    }
    let mut mesh = CellMesh { resolution, order, element_phase: Vec::new(), material: Vec::new() };
    let n = mesh.n_elements();
    mesh.element_phase.reserve(n);
    for idx in 0..n {
        let phase = geom.phase_at(mesh.element_centroid(mesh.element_coords(idx)));
        mesh.element_phase.push(phase);
        mesh.material.push(!geom.is_void(phase));
    }
    check_connectivity(&mesh)?;
    if geom.void_phase.is_some() {
        for axis in 0..2 {
            if !periodic_union_connected(&mesh, axis) {
                return Err(CellError::PeriodicDisconnected { axis: axis + 1 });
            }
        }
    }
    Ok(mesh)
}

fn components(dims: [usize; 3], material: impl Fn([usize; 3]) -> bool) -> Vec<Vec<[usize; 3]>> {
    let idx = |e: [usize; 3]| e[0] + dims[0] * (e[1] + dims[1] * e[2]);
    let mut seen = vec![false; dims.iter().product()];
    let mut comps = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let start = [i, j, k];
                if seen[idx(start)] || !material(start) {
                    continue;
                }
                let mut comp = Vec::new();
                let mut queue = VecDeque::from([start]);
                seen[idx(start)] = true;
                while let Some(e) = queue.pop_front() {
                    comp.push(e);
                    for d in 0..3 {
                        for step in [-1i64, 1] {
                            let c = e[d] as i64 + step;
                            if c < 0 || c >= dims[d] as i64 {
                                continue;
                            }
                            let mut nb = e;
                            nb[d] = c as usize;
                            if !seen[idx(nb)] && material(nb) {
                                seen[idx(nb)] = true;
                                queue.push_back(nb);
                            }
                        }
                    }
                }
                comps.push(comp);
            }
        }
    }
    comps
}

fn check_connectivity(mesh: &CellMesh) -> Result<(), CellError> {
    let comps = components(mesh.resolution, |e| mesh.material[mesh.element_index(e)]);
    match comps.len() {
        0 => Err(CellError::Empty),
        1 => Ok(()),
        n => {
            // name the smallest offending component
            let (index, comp) = comps.iter().enumerate().min_by_key(|(_, c)| c.len()).unwrap();
            Err(CellError::Disconnected { components: n, index, size: comp.len(), element: comp[0] })
        }
    }
}

/// `𝒴* ∪ (𝒴* + e_α)` connected: flood fill on the cell doubled along `axis`.
fn periodic_union_connected(mesh: &CellMesh, axis: usize) -> bool {
    let mut dims = mesh.resolution;
    dims[axis] *= 2;
    let n = mesh.resolution[axis];
    let comps = components(dims, |mut e| {
        e[axis] %= n;
        mesh.material[mesh.element_index(e)]
    });
    comps.len() == 1
}

/// Periodic degree-of-freedom numbering: three dofs per active master node.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    /// Active index of each master node (`None` for void-only nodes).
    pub active: Vec<Option<usize>>,
    pub n_active: usize,
    /// `∫_{𝒴*} φ_m` per active node, for integrals and zero-mean projection.
    pub weights: Vec<f64>,
}

impl DofMap {
    pub fn n_dofs(&self) -> usize {
        3 * self.n_active
    }

    /// Dof of component `comp` at a master node.
    pub fn dof(&self, master: usize, comp: usize) -> Option<usize> {
        self.active[master].map(|a| 3 * a + comp)
    }

    /// Element dof list in local order (`3·node + comp`).
    pub fn element_dofs(&self, mesh: &CellMesh, e: [usize; 3]) -> Vec<Option<usize>> {
        mesh.element_raw_nodes(e)
            .into_iter()
            .flat_map(|n| {
                let m = mesh.master_of(n);
                (0..3).map(move |c| self.dof(m, c))
            })
            .collect()
    }

    /// `∫_{𝒴*} u_c` for a dof vector.
    pub fn integral(&self, field: &[f64], comp: usize) -> f64 {
        self.weights.iter().enumerate().map(|(a, w)| w * field[3 * a + comp]).sum()
    }

    /// Shifts each component to zero mean over 𝒴*.
    pub fn project_zero_mean(&self, field: &mut [f64]) {
        let total: f64 = self.weights.iter().sum();
        for c in 0..3 {
            let mean = self.integral(field, c) / total;
            for a in 0..self.n_active {
                field[3 * a + c] -= mean;
            }
        }
    }

    /// Maximum absolute component mean over 𝒴*.
    pub fn max_mean(&self, field: &[f64]) -> f64 {
        let total: f64 = self.weights.iter().sum();
        (0..3).map(|c| (self.integral(field, c) / total).abs()).fold(0.0, f64::max)
    }
}

/// Glues `y_α = 0` to `y_α = 1` and numbers the nodes touched by material elements.
pub fn periodic_dof_map(mesh: &CellMesh) -> DofMap {
    let mut touched = vec![false; mesh.n_masters()];
    let mut weight_by_master = vec![0.0; mesh.n_masters()];
    let el = mesh.reference_element();
    // ∫ φ_a over one element, identical for all elements
    let mut local_w = vec![0.0; el.n_nodes()];
    for (xi, w) in el.quadrature() {
        for (a, v) in el.eval(xi).values.iter().enumerate() {
            local_w[a] += w * v;
        }
    }
    for idx in 0..mesh.n_elements() {
        if !mesh.material[idx] {
            continue;
        }
        for (a, n) in mesh.element_raw_nodes(mesh.element_coords(idx)).into_iter().enumerate() {
            let m = mesh.master_of(n);
            touched[m] = true;
            weight_by_master[m] += local_w[a];
        }
    }
    let mut active = vec![None; mesh.n_masters()];
    let mut weights = Vec::new();
    for (m, t) in touched.iter().enumerate() {
        if *t {
            active[m] = Some(weights.len());
            weights.push(weight_by_master[m]);
        }
    }
    DofMap { n_active: weights.len(), active, weights }
}

/// Locates a cell point: element coordinates and local coordinates in `[0,1]³`.
pub fn locate(mesh: &CellMesh, y: [f64; 3]) -> ([usize; 3], [f64; 3]) {
    let h = mesh.element_size();
    let shifted = [y[0], y[1], y[2] + 1.0];
    let mut e = [0usize; 3];
    let mut xi = [0.0; 3];
    for d in 0..3 {
        let t = shifted[d] / h[d];
        let i = (t.floor().max(0.0) as usize).min(mesh.resolution[d] - 1);
        e[d] = i;
        xi[d] = t - i as f64;
    }
    (e, xi)
}

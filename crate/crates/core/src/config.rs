//! Run configuration: a versioned TOML document.
//!
//! All quantities are dimensionless. Lengths are in units of the plate
//! reference length, stiffnesses in units of a reference modulus, and loads in
//! units of that modulus. Strain-like Voigt vectors use the order
//! (11, 22, 33, 23, 13, 12) with doubled shear entries.
//!
//! ```toml
//! schema_version = 1
//! seed = 42
//!
//! [units]
//! system = "dimensionless"
//!
//! [cell]
//! resolution = [2, 2, 2]
//! order = 2
//! background = 0
//! normalization = "cell"          # or "material"
//! # void_phase = 1
//! [[cell.primitives]]
//! kind = "layer"                  # "box" | "cylinder" | "layer"
//! phase = 1
//! y3_min = 0.0
//! y3_max = 1.0
//!
//! [[phases]]
//! lambda = 1.0
//! mu = 1.0
//! # or: voigt = [[...6 rows...]]   or: void = true
//!
//! [plate]
//! lengths = [1.0, 1.0]
//! cells = [32, 32]
//! clamped = ["x0"]
//!
//! [load]
//! f = [0.5, 0.0, 1.0]             # constant, or per-component terms:
//! # f3 = [[1.0, 0, 0], [0.5, 1, 1]] (coefficient, power of x1, power of x2)
//!
//! [experiment]
//! a = 1
//! eps_ladder = [0.25, 0.125, 0.0625]
//! h_ladder = [1e-1, 1e-2, 1e-3, 1e-4]
//! recovery = { eps = 0.0625, h = 1e-3, n_smoothing = 1 }
//!
//! [solver]
//! cell_rel_tol = 1e-12
//! fine_rel_tol = 1e-12
//! direct_threshold = 100000
//!
//! [unfold]
//! dictionary_version = 1
//!
//! [output]
//! dir = "out"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell::{CellGeometry, PhaseAssignment, Primitive};
use crate::elastic::{HookeTensor, MaterialError};
use crate::fine::{ExperimentParams, FineSolverOptions};
use crate::homogenize::Normalization;
use crate::linalg::CgOptions;
use crate::plate::{LoadSpec, PlateMesh, Poly2, Side};
use crate::unfold::DICTIONARY_VERSION;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("phase {phase}: {source}")]
    Material { phase: usize, source: MaterialError },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub units: Units,
    pub cell: CellSection,
    pub phases: Vec<PhaseSection>,
    pub plate: PlateSection,
    pub load: LoadSection,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub unfold: UnfoldSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub system: String,
}

impl Default for Units {
    fn default() -> Self {
        Units { system: "dimensionless".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSection {
    pub resolution: [usize; 3],
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub background: usize,
    #[serde(default)]
    pub void_phase: Option<usize>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub primitives: Vec<PrimitiveSection>,
}

fn default_order() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimitiveSection {
    Box { phase: usize, min: [f64; 3], max: [f64; 3] },
    Cylinder { phase: usize, center: [f64; 2], radius: f64, y3_range: [f64; 2] },
    Layer { phase: usize, y3_min: f64, y3_max: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub voigt: Option<[[f64; 6]; 6]>,
    #[serde(default)]
    pub void: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateSection {
    pub lengths: [f64; 2],
    pub cells: [usize; 2],
    pub clamped: Vec<Side>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSection {
    #[serde(default)]
    pub f: Option<[f64; 3]>,
    #[serde(default)]
    pub f1: Option<Poly2>,
    #[serde(default)]
    pub f2: Option<Poly2>,
    #[serde(default)]
    pub f3: Option<Poly2>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_a")]
    pub a: i32,
    pub eps_ladder: Vec<f64>,
    pub h_ladder: Vec<f64>,
    /// per-cell resolution of the fine mesh; defaults to the cell resolution
    #[serde(default)]
    pub fine_resolution: Option<[usize; 3]>,
    /// element order of the fine mesh; defaults to the cell order
    #[serde(default)]
    pub fine_order: Option<usize>,
    #[serde(default)]
    pub recovery: Option<RecoverySection>,
}

fn default_a() -> i32 {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySection {
    pub eps: f64,
    pub h: f64,
    #[serde(default = "default_smoothing")]
    pub n_smoothing: usize,
}

fn default_smoothing() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub cell_rel_tol: f64,
    pub cell_max_iter: usize,
    pub fine_rel_tol: f64,
    pub fine_max_iter: usize,
    pub direct_threshold: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            cell_rel_tol: 1e-12,
            cell_max_iter: 20_000,
            fine_rel_tol: 1e-12,
            fine_max_iter: 50_000,
            direct_threshold: 100_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnfoldSection {
    pub dictionary_version: u32,
}

impl Default for UnfoldSection {
    fn default() -> Self {
        UnfoldSection { dictionary_version: DICTIONARY_VERSION }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First 16 hex digits of [`RunConfig::hash`].
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        if self.units.system != "dimensionless" {
            return Err(invalid(format!("units.system must be \"dimensionless\", got {:?}", self.units.system)));
        }
        if self.phases.is_empty() {
            return Err(invalid("at least one phase is required"));
        }
        self.phase_assignment()?;
        let n_phases = self.phases.len();
        let mut used = vec![self.cell.background];
        used.extend(self.cell.primitives.iter().map(|p| p.phase()));
        if let Some(v) = self.cell.void_phase {
            used.push(v);
        }
        if let Some(p) = used.iter().find(|p| **p >= n_phases) {
            return Err(invalid(format!("phase id {p} out of range (have {n_phases} phases)")));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.void != (self.cell.void_phase == Some(i)) {
                return Err(invalid(format!("phase {i}: void flag must match cell.void_phase")));
            }
        }
        if !(1..=2).contains(&self.cell.order) {
            return Err(invalid(format!("cell.order must be 1 or 2, got {}", self.cell.order)));
        }
        PlateMesh::new(self.plate.lengths, self.plate.cells, self.plate.clamped.clone())
            .map_err(|e| invalid(format!("plate: {e}")))?;
        self.load_spec()?;
        let e = &self.experiment;
        if e.a < 1 {
            return Err(invalid(format!("experiment.a must be ≥ 1, got {}", e.a)));
        }
        if e.eps_ladder.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(invalid("eps_ladder entries must lie in (0, 1)"));
        }
        if e.h_ladder.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("h_ladder entries must be positive"));
        }
        let params = self.experiment_params();
        if let Some((eps, h)) = params.violations().first() {
            return Err(invalid(format!("h ε^(a−1) ≤ 1 violated at ε = {eps}, h = {h}")));
        }
        if let Some(r) = e.recovery {
            if !(r.eps > 0.0 && r.eps < 1.0 && r.h > 0.0) || r.h * r.eps.powi(e.a - 1) > 1.0 {
                return Err(invalid("experiment.recovery needs 0 < eps < 1, h > 0 and h ε^(a−1) ≤ 1"));
            }
        }
        if let Some(o) = e.fine_order {
            if !(1..=2).contains(&o) {
                return Err(invalid(format!("experiment.fine_order must be 1 or 2, got {o}")));
            }
        }
        if self.unfold.dictionary_version != DICTIONARY_VERSION {
            return Err(invalid(format!(
                "unfold.dictionary_version {} unsupported (expected {DICTIONARY_VERSION})",
                self.unfold.dictionary_version
            )));
        }
        let s = &self.solver;
        if !(s.cell_rel_tol > 0.0 && s.fine_rel_tol > 0.0) {
            return Err(invalid("solver tolerances must be positive"));
        }
        Ok(())
    }

    pub fn cell_geometry(&self) -> CellGeometry {
        CellGeometry {
            background: self.cell.background,
            primitives: self.cell.primitives.iter().map(|p| (p.primitive(), p.phase())).collect(),
            void_phase: self.cell.void_phase,
        }
    }

    pub fn phase_assignment(&self) -> Result<PhaseAssignment, ConfigError> {
        let tensors = self
            .phases
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let err = |source| ConfigError::Material { phase: i, source };
                match (p.void, p.lambda, p.mu, p.voigt) {
                    (true, None, None, None) => Ok(None),
                    (false, Some(l), Some(m), None) => HookeTensor::isotropic(l, m).map(Some).map_err(err),
                    (false, None, None, Some(rows)) => HookeTensor::from_rows(rows).map(Some).map_err(err),
                    _ => Err(invalid(format!("phase {i}: give exactly one of (lambda, mu), voigt, or void = true"))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PhaseAssignment::new(tensors))
    }

    pub fn plate_mesh(&self) -> PlateMesh {
        PlateMesh::new(self.plate.lengths, self.plate.cells, self.plate.clamped.clone()).expect("validated")
    }

    pub fn load_spec(&self) -> Result<LoadSpec, ConfigError> {
        let l = &self.load;
        let spec = match (l.f, &l.f1, &l.f2, &l.f3) {
            (Some(f), None, None, None) => LoadSpec::uniform(f),
            (None, f1, f2, f3) => LoadSpec {
                f1: f1.clone().unwrap_or_default(),
                f2: f2.clone().unwrap_or_default(),
                f3: f3.clone().unwrap_or_default(),
            },
            _ => return Err(invalid("load: give either f or per-component f1/f2/f3")),
        };
        if ![&spec.f1, &spec.f2, &spec.f3].iter().all(|p| p.is_valid()) {
            return Err(invalid("load polynomial terms need finite coefficients and integer powers in 0..=16"));
        }
        Ok(spec)
    }

    pub fn experiment_params(&self) -> ExperimentParams {
        ExperimentParams {
            a: self.experiment.a,
            eps_ladder: self.experiment.eps_ladder.clone(),
            h_ladder: self.experiment.h_ladder.clone(),
        }
    }

    pub fn fine_resolution(&self) -> [usize; 3] {
        self.experiment.fine_resolution.unwrap_or(self.cell.resolution)
    }

    pub fn fine_order(&self) -> usize {
        self.experiment.fine_order.unwrap_or(self.cell.order)
    }

    pub fn cell_cg(&self) -> CgOptions {
        CgOptions { rel_tol: self.solver.cell_rel_tol, max_iter: self.solver.cell_max_iter }
    }

    pub fn fine_solver(&self) -> FineSolverOptions {
        FineSolverOptions {
            cg: CgOptions { rel_tol: self.solver.fine_rel_tol, max_iter: self.solver.fine_max_iter },
            direct_threshold: self.solver.direct_threshold,
        }
    }
}

impl PrimitiveSection {
    pub fn phase(&self) -> usize {
        match self {
            PrimitiveSection::Box { phase, .. }
            | PrimitiveSection::Cylinder { phase, .. }
            | PrimitiveSection::Layer { phase, .. } => *phase,
        }
    }

    pub fn primitive(&self) -> Primitive {
        match *self {
            PrimitiveSection::Box { min, max, .. } => Primitive::Box { min, max },
            PrimitiveSection::Cylinder { center, radius, y3_range, .. } => {
                Primitive::Cylinder { center, radius, y3_range }
            }
            PrimitiveSection::Layer { y3_min, y3_max, .. } => Primitive::Layer { y3_min, y3_max },
        }
    }
}

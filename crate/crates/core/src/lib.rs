//! Effective Kirchhoff–Love plate models of periodic 3D microstructures.
//!
//! The crate computes homogenized membrane, coupling and bending tensors from
//! cell problems on the reference cell `Y × (−1, 1)`, solves the homogenized
//! clamped plate, and checks the asymptotics against direct 3D solves on thin
//! periodic plates (linear and St. Venant–Kirchhoff energies).

pub mod cache;
pub mod cell;
pub mod config;
pub mod corrector;
pub mod elastic;
pub mod fem;
pub mod fine;
pub mod homogenize;
pub mod linalg;
pub mod plate;
pub mod report;
pub mod study;
pub mod unfold;
pub mod vtk;

pub use cell::{build_cell_mesh, periodic_dof_map, CellGeometry, CellMesh, DofMap, PhaseAssignment, Primitive};
pub use corrector::{assemble_cell_stiffness, solve_correctors, CellStiffness, Component, CorrectorMode, CorrectorSet};
pub use elastic::{Energy, HookeTensor, IsotropicPhase, Mat3, SymMat3};
pub use homogenize::{Normalization, PlateStrainPair, PlateTensor};

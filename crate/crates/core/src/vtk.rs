//! Legacy ASCII VTK export on structured point grids.

use std::fmt::Write as _;

use crate::cell::{CellMesh, DofMap};
use crate::corrector::{CorrectorMode, CorrectorSet};
use crate::fine::FineGeometry;
use crate::plate::PlateSolution;

/// Point data array: name, components per point (1 or 3), values point-major.
pub struct PointField<'a> {
    pub name: String,
    pub ncomp: usize,
    pub values: &'a [f64],
}

/// `DATASET STRUCTURED_POINTS` with point data; `x` varies fastest.
pub fn structured_points(
    title: &str,
    dims: [usize; 3],
    origin: [f64; 3],
    spacing: [f64; 3],
    fields: &[PointField<'_>],
) -> String {
    let n = dims[0] * dims[1] * dims[2];
    let mut s = String::new();
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET STRUCTURED_POINTS").unwrap();
    writeln!(s, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2]).unwrap();
    writeln!(s, "ORIGIN {:e} {:e} {:e}", origin[0], origin[1], origin[2]).unwrap();
    writeln!(s, "SPACING {:e} {:e} {:e}", spacing[0], spacing[1], spacing[2]).unwrap();
    writeln!(s, "POINT_DATA {n}").unwrap();
    for f in fields {
        assert_eq!(f.values.len(), n * f.ncomp, "field {} has the wrong length", f.name);
        if f.ncomp == 3 {
            writeln!(s, "VECTORS {} double", f.name).unwrap();
        } else {
            writeln!(s, "SCALARS {} double {}\nLOOKUP_TABLE default", f.name, f.ncomp).unwrap();
        }
        for p in f.values.chunks(f.ncomp) {
            let line: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
            writeln!(s, "{}", line.join(" ")).unwrap();
        }
    }
    s
}

fn spacing(extent: [f64; 3], dims: [usize; 3]) -> [f64; 3] {
    std::array::from_fn(|d| if dims[d] > 1 { extent[d] / (dims[d] - 1) as f64 } else { 1.0 })
}

/// The six correctors as point vectors on the cell node grid.
pub fn correctors_vtk(mesh: &CellMesh, dofmap: &DofMap, correctors: &CorrectorSet) -> String {
    let dims = mesh.node_dims();
    let n = mesh.n_raw_nodes();
    let mut material = vec![0.0; n];
    let arrays: Vec<(String, Vec<f64>)> = CorrectorMode::ALL
        .iter()
        .map(|&mode| {
            let field = correctors.field(mode);
            let mut v = vec![0.0; 3 * n];
            for k in 0..n {
                let master = mesh.master_of(mesh.raw_node_coords(k));
                for c in 0..3 {
                    if let Some(d) = dofmap.dof(master, c) {
                        v[3 * k + c] = field[d];
                        material[k] = 1.0;
                    }
                }
            }
            (format!("chi_{}", mode.label()), v)
        })
        .collect();
    let mut fields: Vec<PointField<'_>> =
        arrays.iter().map(|(name, v)| PointField { name: name.clone(), ncomp: 3, values: v }).collect();
    fields.push(PointField { name: "material".into(), ncomp: 1, values: &material });
    structured_points("cell correctors", dims, [0.0, 0.0, -1.0], spacing([1.0, 1.0, 2.0], dims), &fields)
}

/// Plate displacement `(𝒰₁, 𝒰₂, 𝒰₃)` on a uniform grid with `samples` points per plate cell.
pub fn plate_vtk(sol: &PlateSolution, samples: usize) -> String {
    let m = &sol.mesh;
    let dims = [m.cells[0] * samples + 1, m.cells[1] * samples + 1, 1];
    let sp = spacing([m.lengths[0], m.lengths[1], 0.0], dims);
    let mut u = Vec::with_capacity(3 * dims[0] * dims[1]);
    for j in 0..dims[1] {
        for i in 0..dims[0] {
            let x = [(i as f64 * sp[0]).min(m.lengths[0]), (j as f64 * sp[1]).min(m.lengths[1])];
            u.extend_from_slice(&sol.eval(x).u);
        }
    }
    structured_points("plate displacement", dims, [0.0; 3], sp, &[PointField { name: "displacement".into(), ncomp: 3, values: &u }])
}

/// Fine displacement on the fine node grid.
pub fn fine_vtk(geom: &FineGeometry, u: &[f64]) -> String {
    let dims = geom.node_dims();
    let extent = [geom.lengths[0], geom.lengths[1], 2.0 * geom.eps];
    structured_points(
        &format!("fine displacement eps={}", geom.eps),
        dims,
        [0.0, 0.0, -geom.eps],
        spacing(extent, dims),
        &[PointField { name: "displacement".into(), ncomp: 3, values: u }],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_counts() {
        let v = vec![1.0, 2.0, 3.0, 4.0];
        let s = structured_points("t", [2, 2, 1], [0.0; 3], [1.0; 3], &[PointField { name: "s".into(), ncomp: 1, values: &v }]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[4], "DIMENSIONS 2 2 1");
        assert!(lines.contains(&"POINT_DATA 4"));
        assert_eq!(lines.len(), 10 + 4);
    }
}

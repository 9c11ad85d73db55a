//! Tensor-product Lagrange hexahedra on axis-aligned boxes and Gauss rules.

use crate::elastic::{HookeTensor, Mat3, SymMat3};

/// Gauss–Legendre rule mapped to `[0, 1]`: `(points, weights)`.
pub fn gauss_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w): (&[f64], &[f64]) = match n {
        1 => (&[0.0], &[2.0]),
        2 => {
            let a = 1.0 / 3.0_f64.sqrt();
            return map01(&[-a, a], &[1.0, 1.0]);
        }
        3 => {
            let a = (0.6_f64).sqrt();
            return map01(&[-a, 0.0, a], &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]);
        }
        4 => {
            let t = 2.0 / 7.0 * (6.0_f64 / 5.0).sqrt();
            let a = (3.0 / 7.0 - t).sqrt();
            let b = (3.0 / 7.0 + t).sqrt();
            let wa = (18.0 + 30.0_f64.sqrt()) / 36.0;
            let wb = (18.0 - 30.0_f64.sqrt()) / 36.0;
            return map01(&[-b, -a, a, b], &[wb, wa, wa, wb]);
        }
        5 => {
            let t = 2.0 * (10.0_f64 / 7.0).sqrt();
            let a = (5.0 - t).sqrt() / 3.0;
            let b = (5.0 + t).sqrt() / 3.0;
            let wa = (322.0 + 13.0 * 70.0_f64.sqrt()) / 900.0;
            let wb = (322.0 - 13.0 * 70.0_f64.sqrt()) / 900.0;
            return map01(&[-b, -a, 0.0, a, b], &[wb, wa, 128.0 / 225.0, wa, wb]);
        }
        _ => panic!("Gauss rule with {n} points not tabulated"),
    };
    map01(x, w)
}

fn map01(x: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (x.iter().map(|t| 0.5 * (t + 1.0)).collect(), w.iter().map(|t| 0.5 * t).collect())
}

/// 1D Lagrange basis of degree 1 or 2 on equispaced nodes of `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lagrange1d {
    pub degree: usize,
}

impl Lagrange1d {
    pub fn new(degree: usize) -> Self {
        assert!(degree == 1 || degree == 2, "only degrees 1 and 2 are supported");
        Lagrange1d { degree }
    }

    pub fn n_nodes(&self) -> usize {
        self.degree + 1
    }

    /// Values and derivatives at `s`.
    pub fn eval(&self, s: f64) -> ([f64; 3], [f64; 3]) {
        match self.degree {
            1 => ([1.0 - s, s, 0.0], [-1.0, 1.0, 0.0]),
            _ => (
                [2.0 * (s - 0.5) * (s - 1.0), 4.0 * s * (1.0 - s), 2.0 * s * (s - 0.5)],
                [4.0 * s - 3.0, 4.0 - 8.0 * s, 4.0 * s - 1.0],
            ),
        }
    }
}

/// Lagrange hexahedron of degree 1 (8 nodes) or 2 (27 nodes) on a box of the
/// given edge lengths. Local node `(a, b, c)` has index `a + n(b + n c)`.
#[derive(Clone, Debug)]
pub struct HexElement {
    basis: Lagrange1d,
    size: [f64; 3],
}

/// Shape function values and physical gradients at one point.
#[derive(Clone, Debug)]
pub struct ShapeEval {
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 3]>,
}

impl HexElement {
    pub fn new(degree: usize, size: [f64; 3]) -> Self {
        HexElement { basis: Lagrange1d::new(degree), size }
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    pub fn size(&self) -> [f64; 3] {
        self.size
    }

    pub fn n_nodes(&self) -> usize {
        self.basis.n_nodes().pow(3)
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    /// Gauss rule with `degree + 1` points per direction: `(local point, physical weight)`.
    pub fn quadrature(&self) -> Vec<([f64; 3], f64)> {
        self.quadrature_with(self.degree() + 1)
    }

    pub fn quadrature_with(&self, n: usize) -> Vec<([f64; 3], f64)> {
        let (p, w) = gauss_01(n);
        let vol = self.volume();
        let mut out = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    out.push(([p[i], p[j], p[k]], w[i] * w[j] * w[k] * vol));
                }
            }
        }
        out
    }

    /// Local point `xi ∈ [0,1]³`.
    pub fn eval(&self, xi: [f64; 3]) -> ShapeEval {
        let n = self.basis.n_nodes();
        let (vx, dx) = self.basis.eval(xi[0]);
        let (vy, dy) = self.basis.eval(xi[1]);
        let (vz, dz) = self.basis.eval(xi[2]);
        let mut values = Vec::with_capacity(n * n * n);
        let mut grads = Vec::with_capacity(n * n * n);
        for c in 0..n {
            for b in 0..n {
                for a in 0..n {
                    values.push(vx[a] * vy[b] * vz[c]);
                    grads.push([
                        dx[a] * vy[b] * vz[c] / self.size[0],
                        vx[a] * dy[b] * vz[c] / self.size[1],
                        vx[a] * vy[b] * dz[c] / self.size[2],
                    ]);
                }
            }
        }
        ShapeEval { values, grads }
    }

    /// Element stiffness `∫ 2 a e(φ_i) : e(φ_j)` with local dof `3·node + comp`.
    pub fn stiffness(&self, hooke: &HookeTensor) -> Vec<f64> {
        let nd = 3 * self.n_nodes();
        let mut k = vec![0.0; nd * nd];
        for (xi, w) in self.quadrature() {
            let sh = self.eval(xi);
            let b = strain_operator(&sh.grads);
            let db: Vec<[f64; 6]> = b.iter().map(|col| hooke.apply_voigt(col)).collect();
            for i in 0..nd {
                for j in 0..nd {
                    let mut s = 0.0;
                    for t in 0..6 {
                        s += b[i][t] * db[j][t];
                    }
                    k[i * nd + j] += 2.0 * w * s;
                }
            }
        }
        k
    }
}

/// Columns of the engineering-strain operator: Voigt strain of each unit dof.
pub fn strain_operator(grads: &[[f64; 3]]) -> Vec<[f64; 6]> {
    let mut b = Vec::with_capacity(3 * grads.len());
    for g in grads {
        b.push([g[0], 0.0, 0.0, 0.0, g[2], g[1]]);
        b.push([0.0, g[1], 0.0, g[2], 0.0, g[0]]);
        b.push([0.0, 0.0, g[2], g[1], g[0], 0.0]);
    }
    b
}

/// Displacement gradient `G_ij = ∂_j u_i` from nodal values (`3·node + comp`).
pub fn displacement_gradient(grads: &[[f64; 3]], nodal: &[f64]) -> Mat3 {
    let mut g = Mat3::zeros();
    for (a, gr) in grads.iter().enumerate() {
        for i in 0..3 {
            let u = nodal[3 * a + i];
            for j in 0..3 {
                g[(i, j)] += u * gr[j];
            }
        }
    }
    g
}

pub fn strain_from_nodal(grads: &[[f64; 3]], nodal: &[f64]) -> SymMat3 {
    crate::elastic::lin_strain(&displacement_gradient(grads, nodal))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rules_integrate_monomials() {
        for n in 1..=5 {
            let (p, w) = gauss_01(n);
            for d in 0..2 * n {
                let s: f64 = p.iter().zip(&w).map(|(x, w)| w * x.powi(d as i32)).sum();
                assert!((s - 1.0 / (d as f64 + 1.0)).abs() < 1e-14, "n={n} d={d}");
            }
        }
    }

    #[test]
    fn partition_of_unity_and_gradients() {
        for deg in [1, 2] {
            let el = HexElement::new(deg, [0.5, 0.25, 2.0]);
            let sh = el.eval([0.3, 0.7, 0.1]);
            let sum: f64 = sh.values.iter().sum();
            assert!((sum - 1.0).abs() < 1e-14);
            for d in 0..3 {
                let gs: f64 = sh.grads.iter().map(|g| g[d]).sum();
                assert!(gs.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stiffness_annihilates_rigid_motions() {
        let hooke = HookeTensor::isotropic(1.0, 0.8).unwrap();
        for deg in [1, 2] {
            let el = HexElement::new(deg, [0.5, 0.25, 0.4]);
            let k = el.stiffness(&hooke);
            let nd = 3 * el.n_nodes();
            let n1 = deg + 1;
            // nodal coordinates
            let mut coords = Vec::new();
            for c in 0..n1 {
                for b in 0..n1 {
                    for a in 0..n1 {
                        let s = |i: usize, h: f64| i as f64 / deg as f64 * h;
                        coords.push([s(a, 0.5), s(b, 0.25), s(c, 0.4)]);
                    }
                }
            }
            let rot: Vec<f64> = coords.iter().flat_map(|x| [-x[1], x[0], 0.0]).collect();
            let tr: Vec<f64> = coords.iter().flat_map(|_| [0.0, 0.0, 1.0]).collect();
            for v in [rot, tr] {
                for i in 0..nd {
                    let r: f64 = (0..nd).map(|j| k[i * nd + j] * v[j]).sum();
                    assert!(r.abs() < 1e-12, "deg {deg} residual {r}");
                }
            }
        }
    }
}

//! Tensor algebra, material laws and pointwise energy densities.
//!
//! Conventions used throughout the crate:
//!
//! * Symmetric matrices are stored by their six independent components in the
//!   order `(11, 22, 33, 23, 13, 12)`.
//! * Strain-like Voigt vectors double the shear entries (engineering shear):
//!   `v = (S11, S22, S33, 2 S23, 2 S13, 2 S12)`.
//! * A [`HookeTensor`] stores the 6×6 matrix `V` with `Q(S) = vᵀ V v = a : S : S`.
//!   `Q` is the full stored-energy density; there is no extra factor ½.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix6, SymmetricEigen};

/// Full 3×3 real matrix (deformation or displacement gradient).
pub type Mat3 = Matrix3<f64>;

/// Index pairs of the six Voigt slots.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Symmetric 3×3 matrix stored as `(11, 22, 33, 23, 13, 12)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SymMat3(pub [f64; 6]);

impl SymMat3 {
    pub const ZERO: SymMat3 = SymMat3([0.0; 6]);

    pub fn new(s11: f64, s22: f64, s33: f64, s23: f64, s13: f64, s12: f64) -> Self {
        SymMat3([s11, s22, s33, s23, s13, s12])
    }

    pub fn identity() -> Self {
        SymMat3([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    }

    /// Entry `(i, j)` with zero-based indices.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[voigt_slot(i, j)]
    }

    /// Symmetric part of an arbitrary matrix.
    pub fn from_mat3(m: &Mat3) -> Self {
        SymMat3([
            m[(0, 0)],
            m[(1, 1)],
            m[(2, 2)],
            0.5 * (m[(1, 2)] + m[(2, 1)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            0.5 * (m[(0, 1)] + m[(1, 0)]),
        ])
    }

    pub fn to_mat3(&self) -> Mat3 {
        let s = &self.0;
        Mat3::new(s[0], s[5], s[4], s[5], s[1], s[3], s[4], s[3], s[2])
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    /// Squared Frobenius norm `S_ij S_ij`.
    pub fn norm_sq(&self) -> f64 {
        let s = &self.0;
        s[0] * s[0] + s[1] * s[1] + s[2] * s[2] + 2.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5])
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Full contraction `S : T`.
    pub fn ddot(&self, other: &SymMat3) -> f64 {
        let (s, t) = (&self.0, &other.0);
        s[0] * t[0] + s[1] * t[1] + s[2] * t[2] + 2.0 * (s[3] * t[3] + s[4] * t[4] + s[5] * t[5])
    }

    /// Engineering-shear Voigt vector.
    pub fn to_voigt_strain(&self) -> [f64; 6] {
        let s = &self.0;
        [s[0], s[1], s[2], 2.0 * s[3], 2.0 * s[4], 2.0 * s[5]]
    }

    pub fn from_voigt_strain(v: &[f64; 6]) -> Self {
        SymMat3([v[0], v[1], v[2], 0.5 * v[3], 0.5 * v[4], 0.5 * v[5]])
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

impl Add for SymMat3 {
    type Output = SymMat3;
    fn add(mut self, rhs: SymMat3) -> SymMat3 {
        self += rhs;
        self
    }
}

impl AddAssign for SymMat3 {
    fn add_assign(&mut self, rhs: SymMat3) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for SymMat3 {
    type Output = SymMat3;
    fn sub(self, rhs: SymMat3) -> SymMat3 {
        self + (-rhs)
    }
}

impl Neg for SymMat3 {
    type Output = SymMat3;
    fn neg(self) -> SymMat3 {
        SymMat3(self.0.map(|x| -x))
    }
}

impl Mul<SymMat3> for f64 {
    type Output = SymMat3;
    fn mul(self, rhs: SymMat3) -> SymMat3 {
        SymMat3(rhs.0.map(|x| self * x))
    }
}

/// Voigt slot of the index pair `(i, j)`.
pub fn voigt_slot(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) => 3,
        (0, 2) => 4,
        (0, 1) => 5,
        _ => panic!("index pair ({i}, {j}) out of range"),
    }
}

/// Fourth-order tensor in full index form `a[i][j][k][l]`.
pub type Tensor4 = [[[[f64; 3]; 3]; 3]; 3];

/// Elasticity tensor with minor and major symmetries, stored in Voigt form.
#[derive(Clone, Debug, PartialEq)]
pub struct HookeTensor {
    voigt: Matrix6<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaterialError {
    #[error("Voigt matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("Hooke tensor is not coercive (smallest eigenvalue {0:e})")]
    NotCoercive(f64),
    #[error("invalid Lamé parameters lambda = {lambda}, mu = {mu}")]
    InvalidLame { lambda: f64, mu: f64 },
}

impl HookeTensor {
    /// Builds a tensor from its Voigt matrix and checks symmetry and coercivity.
    pub fn from_voigt(voigt: Matrix6<f64>) -> Result<Self, MaterialError> {
        let asym = (voigt - voigt.transpose()).amax();
        let scale = voigt.amax().max(f64::MIN_POSITIVE);
        if asym > 1e-12 * scale {
            return Err(MaterialError::NotSymmetric(asym));
        }
        let voigt = 0.5 * (voigt + voigt.transpose());
        let tensor = HookeTensor { voigt };
        let k0 = tensor.coercivity_constant();
        if k0 <= 0.0 {
            return Err(MaterialError::NotCoercive(k0));
        }
        Ok(tensor)
    }

    pub fn from_rows(rows: [[f64; 6]; 6]) -> Result<Self, MaterialError> {
        Self::from_voigt(Matrix6::from_fn(|i, j| rows[i][j]))
    }

    pub fn isotropic(lambda: f64, mu: f64) -> Result<Self, MaterialError> {
        IsotropicPhase::new(lambda, mu).map(|p| p.hooke())
    }

    pub fn voigt(&self) -> &Matrix6<f64> {
        &self.voigt
    }

    /// `Q(S) = a : S : S`.
    pub fn quadratic_form(&self, s: &SymMat3) -> f64 {
        let v = s.to_voigt_strain();
        self.bilinear_voigt(&v, &v)
    }

    /// Polarization `a(S, T)` of the quadratic form, `Q(S) = a(S, S)`.
    pub fn bilinear_form(&self, s: &SymMat3, t: &SymMat3) -> f64 {
        self.bilinear_voigt(&s.to_voigt_strain(), &t.to_voigt_strain())
    }

    /// `vᵀ V w` on engineering-shear Voigt vectors.
    pub fn bilinear_voigt(&self, v: &[f64; 6], w: &[f64; 6]) -> f64 {
        let mut acc = 0.0;
        for i in 0..6 {
            let mut row = 0.0;
            for j in 0..6 {
                row += self.voigt[(i, j)] * w[j];
            }
            acc += v[i] * row;
        }
        acc
    }

    /// `V v`, the stress-like dual of a strain in plain (non-doubled) components.
    pub fn apply_voigt(&self, v: &[f64; 6]) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..6).map(|j| self.voigt[(i, j)] * v[j]).sum();
        }
        out
    }

    /// `K₀ = min Q(S)/|S|²`: smallest eigenvalue of `V` in the contraction metric.
    pub fn coercivity_constant(&self) -> f64 {
        let scale = Matrix6::from_diagonal(&nalgebra::Vector6::new(
            1.0,
            1.0,
            1.0,
            std::f64::consts::SQRT_2,
            std::f64::consts::SQRT_2,
            std::f64::consts::SQRT_2,
        ));
        let mandel = scale * self.voigt * scale;
        SymmetricEigen::new(mandel).eigenvalues.min()
    }

    pub fn scaled(&self, factor: f64) -> HookeTensor {
        HookeTensor { voigt: self.voigt * factor }
    }

    pub fn to_tensor4(&self) -> Tensor4 {
        let mut a = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        a[i][j][k][l] = self.voigt[(voigt_slot(i, j), voigt_slot(k, l))];
                    }
                }
            }
        }
        a
    }

    /// Inverse of [`HookeTensor::to_tensor4`]; reads one representative per
    /// symmetry class.
    pub fn from_tensor4(a: &Tensor4) -> Result<Self, MaterialError> {
        let voigt = Matrix6::from_fn(|p, q| {
            let (i, j) = VOIGT_PAIRS[p];
            let (k, l) = VOIGT_PAIRS[q];
            a[i][j][k][l]
        });
        Self::from_voigt(voigt)
    }
}

/// Isotropic phase given by Lamé parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicPhase {
    pub lame_lambda: f64,
    pub lame_mu: f64,
}

impl IsotropicPhase {
    pub fn new(lame_lambda: f64, lame_mu: f64) -> Result<Self, MaterialError> {
        if !(lame_lambda >= 0.0 && lame_mu > 0.0 && lame_lambda.is_finite() && lame_mu.is_finite()) {
            return Err(MaterialError::InvalidLame { lambda: lame_lambda, mu: lame_mu });
        }
        Ok(IsotropicPhase { lame_lambda, lame_mu })
    }

    /// Tensor with `Q(S) = (λ/2)(tr S)² + μ|S|²`, so that `Q(E(F))` is the
    /// St. Venant–Kirchhoff density `λ/8 (tr(FᵀF−I))² + μ/4 |FᵀF−I|²`.
    pub fn hooke(&self) -> HookeTensor {
        let (l, m) = (self.lame_lambda, self.lame_mu);
        let mut v = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                v[(i, j)] = 0.5 * l;
            }
            v[(i, i)] += m;
            v[(i + 3, i + 3)] = 0.5 * m;
        }
        HookeTensor { voigt: v }
    }

    /// Closed form of the density, independent of the Voigt route.
    pub fn density(&self, s: &SymMat3) -> f64 {
        0.5 * self.lame_lambda * s.trace().powi(2) + self.lame_mu * s.norm_sq()
    }
}

/// `M^{np}_{kl} = ½(δ_kn δ_lp + δ_kp δ_ln)` for `n, p ∈ {1, 2}` (one-based).
pub fn basis_matrix(n: usize, p: usize) -> SymMat3 {
    assert!((1..=2).contains(&n) && (1..=2).contains(&p), "in-plane indices only");
    let mut m = SymMat3::ZERO;
    let slot = voigt_slot(n - 1, p - 1);
    m.0[slot] = if n == p { 1.0 } else { 0.5 };
    m
}

pub fn sym(f: &Mat3) -> SymMat3 {
    SymMat3::from_mat3(f)
}

pub fn skew(f: &Mat3) -> Mat3 {
    0.5 * (f - f.transpose())
}

/// Linearized strain `e(u) = sym ∇u` from a displacement gradient.
pub fn lin_strain(grad: &Mat3) -> SymMat3 {
    sym(grad)
}

/// Green–St. Venant strain `E(F) = ½(FᵀF − I)`.
pub fn green_strain(f: &Mat3) -> SymMat3 {
    let c = f.transpose() * f;
    let mut e = SymMat3::from_mat3(&c);
    e.0[0] -= 1.0;
    e.0[1] -= 1.0;
    e.0[2] -= 1.0;
    0.5 * e
}

/// `E(I + hG)` evaluated as `h (sym G + (h/2) GᵀG)`, free of the cancellation
/// in `FᵀF − I` for small `h`.
pub fn green_strain_of_perturbation(grad: &Mat3, h: f64) -> SymMat3 {
    let gtg = SymMat3::from_mat3(&(grad.transpose() * grad));
    h * (sym(grad) + (0.5 * h) * gtg)
}

/// Both sides of `(1/h) E(I + hG) = e(G) + (h/2) GᵀG`.
pub fn gsv_identity_check(grad: &Mat3, h: f64) -> (SymMat3, SymMat3) {
    assert!(h > 0.0, "h must be positive");
    let f = Mat3::identity() + h * grad;
    let lhs = (1.0 / h) * green_strain(&f);
    let rhs = lin_strain(grad) + (0.5 * h) * SymMat3::from_mat3(&(grad.transpose() * grad));
    (lhs, rhs)
}

/// Energy value that may be the admissibility flag `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Energy {
    Finite(f64),
    /// Some point has `det F ≤ 0`.
    Infinite,
}

impl Energy {
    pub fn is_finite(&self) -> bool {
        matches!(self, Energy::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Energy::Finite(v) => Some(*v),
            Energy::Infinite => None,
        }
    }
}

impl Add for Energy {
    type Output = Energy;
    fn add(self, rhs: Energy) -> Energy {
        match (self, rhs) {
            (Energy::Finite(a), Energy::Finite(b)) => Energy::Finite(a + b),
            _ => Energy::Infinite,
        }
    }
}

/// `Ŵ(F) = Q(E(F))` when `det F > 0`, `+∞` otherwise.
pub fn nonlinear_density(a: &HookeTensor, f: &Mat3) -> Energy {
    if f.determinant() > 0.0 {
        Energy::Finite(a.quadratic_form(&green_strain(f)))
    } else {
        Energy::Infinite
    }
}

/// `Ŵ(I + hG)` using the cancellation-free strain.
pub fn nonlinear_density_of_perturbation(a: &HookeTensor, grad: &Mat3, h: f64) -> Energy {
    let f = Mat3::identity() + h * grad;
    if f.determinant() > 0.0 {
        Energy::Finite(a.quadratic_form(&green_strain_of_perturbation(grad, h)))
    } else {
        Energy::Infinite
    }
}

/// `dist(F, SO(3))` in the Frobenius norm.
///
/// With singular values `σ₁ ≥ σ₂ ≥ σ₃`, the distance is
/// `sqrt((σ₁−1)² + (σ₂−1)² + (σ₃−s)²)` where `s = sign(det F)`.
pub fn rigidity_distance(f: &Mat3) -> f64 {
    let svd = f.svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let last = if f.determinant() > 0.0 { 1.0 } else { -1.0 };
    ((sv[0] - 1.0).powi(2) + (sv[1] - 1.0).powi(2) + (sv[2] - last).powi(2)).sqrt()
}

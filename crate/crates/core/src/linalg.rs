//! Sparse symmetric matrices, preconditioned conjugate gradients with kernel
//! deflation, and a sparse Cholesky fallback.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SolveError {
    #[error(
        "conjugate gradients did not converge in {iterations} iterations \
         (relative residual {residual:e}, condition estimate {condition:e})"
    )]
    NoConvergence { iterations: usize, residual: f64, condition: f64 },
    #[error("sparse Cholesky factorization failed: matrix is not positive definite (n = {n})")]
    Factorization { n: usize },
}

/// Compressed sparse row matrix with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Sparsity pattern builder: rows accumulate column sets, then values are
/// scattered by binary search. Summation order follows the insertion order of
/// the caller, so assembly is deterministic.
pub struct CsrBuilder {
    matrix: CsrMatrix,
}

impl CsrBuilder {
    /// `rows[i]` lists (possibly duplicated) column indices of row `i`.
    pub fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrBuilder { matrix: CsrMatrix { n, row_ptr, col_idx, values: vec![0.0; nnz] } }
    }

    /// Builds the pattern from element dof lists (`None` = eliminated dof).
    pub fn from_elements<'a>(n: usize, elements: impl Iterator<Item = &'a [Option<usize>]>) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for dofs in elements {
            for r in dofs.iter().flatten() {
                rows[*r].extend(dofs.iter().flatten());
            }
        }
        Self::from_rows(rows)
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        let m = &mut self.matrix;
        let cols = &m.col_idx[m.row_ptr[row]..m.row_ptr[row + 1]];
        let pos = cols.binary_search(&col).expect("entry outside sparsity pattern");
        m.values[m.row_ptr[row] + pos] += value;
    }

    /// Scatters a dense element matrix (row-major, size `dofs.len()²`).
    pub fn add_element(&mut self, dofs: &[Option<usize>], local: &[f64]) {
        let nd = dofs.len();
        for (i, ri) in dofs.iter().enumerate() {
            let Some(r) = ri else { continue };
            for (j, cj) in dofs.iter().enumerate() {
                if let Some(c) = cj {
                    self.add(*r, *c, local[i * nd + j]);
                }
            }
        }
    }

    pub fn finish(self) -> CsrMatrix {
        self.matrix
    }
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|p| vals[p]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`; rows are independent so the result is deterministic.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().with_min_len(256).enumerate().for_each(|(i, yi)| {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c];
            }
            *yi = s;
        });
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.apply(y))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(*c, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                d[(i, *c)] = *v;
            }
        }
        d
    }

    /// Ascending eigenvalues by dense decomposition; for audits on small systems.
    pub fn dense_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.to_dense()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormal basis of a subspace to be projected out of CG iterates.
#[derive(Clone, Debug)]
pub struct Deflation {
    basis: Vec<Vec<f64>>,
}

impl Deflation {
    /// Gram–Schmidt orthonormalization of the given vectors.
    pub fn new(vectors: Vec<Vec<f64>>) -> Self {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for mut v in vectors {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let nv = norm(&v);
            if nv > 0.0 {
                v.iter_mut().for_each(|x| *x /= nv);
                basis.push(v);
            }
        }
        Deflation { basis }
    }

    /// Constant vectors per component for `ncomp`-interleaved dofs.
    pub fn translations(n_dofs: usize, ncomp: usize) -> Self {
        let vectors = (0..ncomp)
            .map(|c| (0..n_dofs).map(|i| if i % ncomp == c { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(vectors)
    }

    pub fn project(&self, v: &mut [f64]) {
        for b in &self.basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { rel_tol: 1e-12, max_iter: 20_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖` recomputed from the final iterate.
    pub rel_residual: f64,
}

/// Jacobi-preconditioned CG. With a deflation space the right-hand side and
/// every iterate are kept orthogonal to it, which solves consistent singular
/// systems whose kernel is that space.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    deflation: Option<&Deflation>,
    opts: CgOptions,
) -> Result<(Vec<f64>, CgStats), SolveError> {
    let n = a.n();
    let mut rhs = b.to_vec();
    if let Some(d) = deflation {
        d.project(&mut rhs);
    }
    let bnorm = norm(&rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgStats { iterations: 0, rel_residual: 0.0 }));
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let precondition = |r: &[f64], z: &mut Vec<f64>| {
        z.iter_mut().zip(r).zip(&inv_diag).for_each(|((z, r), m)| *z = r * m);
        if let Some(d) = deflation {
            d.project(z);
        }
    };
    let mut r = rhs.clone();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    for it in 1..=opts.max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.iter_mut().zip(&ap).for_each(|(r, q)| *r -= alpha * q);
        if norm(&r) <= opts.rel_tol * bnorm {
            // confirm with the true residual
            let ax = a.apply(&x);
            let mut res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, y)| b - y).collect();
            if let Some(d) = deflation {
                d.project(&mut res);
            }
            let rel = norm(&res) / bnorm;
            if rel <= 10.0 * opts.rel_tol {
                if let Some(d) = deflation {
                    d.project(&mut x);
                }
                return Ok((x, CgStats { iterations: it, rel_residual: rel }));
            }
            r = res;
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        alphas.push(alpha);
        betas.push(beta);
    }
    let ax = a.apply(&x);
    let residual = norm(&rhs.iter().zip(&ax).map(|(b, y)| b - y).collect::<Vec<_>>()) / bnorm;
    Err(SolveError::NoConvergence {
        iterations: opts.max_iter,
        residual,
        condition: lanczos_condition(&alphas, &betas),
    })
}

/// Condition estimate of the preconditioned operator from the CG coefficients
/// (extreme eigenvalues of the Lanczos tridiagonal matrix).
pub fn lanczos_condition(alphas: &[f64], betas: &[f64]) -> f64 {
    let m = alphas.len().min(400);
    if m == 0 {
        return f64::NAN;
    }
    let mut t = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut d = 1.0 / alphas[j];
        if j > 0 {
            d += betas[j - 1] / alphas[j - 1];
        }
        t[(j, j)] = d;
        if j + 1 < m {
            let off = betas[j].sqrt() / alphas[j];
            t[(j, j + 1)] = off;
            t[(j + 1, j)] = off;
        }
    }
    let ev = SymmetricEigen::new(t).eigenvalues;
    ev.max() / ev.min()
}

/// Sparse Cholesky solve (sequential, hence bit-reproducible).
pub fn cholesky_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SolveError> {
    let mut solutions = cholesky_solve_many(a, &[b.to_vec()])?;
    Ok(solutions.remove(0))
}

pub fn cholesky_solve_many(a: &CsrMatrix, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SolveError> {
    let n = a.n();
    let mut triplets = Vec::with_capacity(a.nnz() / 2 + n);
    for i in 0..n {
        let (cols, vals) = a.row(i);
        for (c, v) in cols.iter().zip(vals) {
            if *c >= i {
                triplets.push(Triplet::new(*c, i, *v));
            }
        }
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|_| SolveError::Factorization { n })?;
    let llt = mat.sp_cholesky(faer::Side::Lower).map_err(|_| SolveError::Factorization { n })?;
    let b = Mat::<f64>::from_fn(n, rhs.len(), |i, j| rhs[j][i]);
    let mut xs: Vec<Vec<f64>> = {
        let x = llt.solve(&b);
        (0..rhs.len()).map(|j| (0..n).map(|i| x[(i, j)]).collect()).collect()
    };
    // iterative refinement with the same factor; thin-plate systems are badly
    // conditioned and a single back-substitution leaves visible residuals
    for _ in 0..2 {
        let mut r = Mat::<f64>::zeros(n, rhs.len());
        for (j, x) in xs.iter().enumerate() {
            let ax = a.apply(x);
            for i in 0..n {
                r[(i, j)] = rhs[j][i] - ax[i];
            }
        }
        let d = llt.solve(&r);
        for (j, x) in xs.iter_mut().enumerate() {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += d[(i, j)];
            }
        }
    }
    Ok(xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, periodic: bool) -> CsrMatrix {
        let mut rows = vec![Vec::new(); n];
        let mut entries = Vec::new();
        for i in 0..n {
            let next = if i + 1 < n { Some(i + 1) } else if periodic { Some(0) } else { None };
            entries.push((i, i, 2.0));
            if let Some(j) = next {
                entries.push((i, j, -1.0));
                entries.push((j, i, -1.0));
            }
        }
        for (i, j, _) in &entries {
            rows[*i].push(*j);
        }
        let mut b = CsrBuilder::from_rows(rows);
        for (i, j, v) in entries {
            b.add(i, j, v);
        }
        b.finish()
    }

    #[test]
    fn cg_and_cholesky_agree() {
        let a = laplacian_1d(50, false);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let (x, stats) = pcg(&a, &b, None, CgOptions::default()).unwrap();
        assert!(stats.rel_residual < 1e-11);
        let y = cholesky_solve(&a, &b).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn deflated_cg_solves_singular_periodic_system() {
        let a = laplacian_1d(40, true);
        assert!(a.max_asymmetry() == 0.0);
        let defl = Deflation::translations(40, 1);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * std::f64::consts::PI / 20.0).cos()).collect();
        let (x, stats) = pcg(&a, &b, Some(&defl), CgOptions::default()).unwrap();
        assert!(stats.rel_residual < 1e-11);
        assert!(x.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn non_convergence_reports_condition() {
        let a = laplacian_1d(200, false);
        let b = vec![1.0; 200];
        let err = pcg(&a, &b, None, CgOptions { rel_tol: 1e-14, max_iter: 5 }).unwrap_err();
        match err {
            SolveError::NoConvergence { iterations, condition, .. } => {
                assert_eq!(iterations, 5);
                assert!(condition >= 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

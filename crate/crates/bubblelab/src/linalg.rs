//! Sparse symmetric operators, cached factorizations and small dense helpers.

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{MatMut, Side};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetric sparse matrix stored as a diagonal plus a list of off-diagonal couplings.
#[derive(Debug, Clone)]
pub struct SymOperator {
    pub diag: Vec<f64>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl SymOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// y = A x
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.diag.iter().zip(x).map(|(d, v)| d * v).collect();
        for &(a, b, w) in &self.edges {
            y[a] += w * x[b];
            y[b] += w * x[a];
        }
        y
    }

    /// x^T A y
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s: f64 = self.diag.iter().zip(x).zip(y).map(|((d, a), b)| d * a * b).sum();
        for &(a, b, w) in &self.edges {
            s += w * (x[a] * y[b] + x[b] * y[a]);
        }
        s
    }

    /// Copy with `shift` subtracted from the diagonal.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        Self {
            diag: self.diag.iter().zip(shift).map(|(d, s)| d - s).collect(),
            edges: self.edges.clone(),
        }
    }

    fn to_faer(&self, lower_only: bool) -> Result<SparseColMat<usize, f64>> {
        let n = self.len();
        let mut triplets = Vec::with_capacity(n + 2 * self.edges.len());
        for (k, &d) in self.diag.iter().enumerate() {
            triplets.push(Triplet::new(k, k, d));
        }
        for &(a, b, w) in &self.edges {
            let (hi, lo) = if a > b { (a, b) } else { (b, a) };
            triplets.push(Triplet::new(hi, lo, w));
            if !lower_only {
                triplets.push(Triplet::new(lo, hi, w));
            }
        }
        SparseColMat::try_new_from_triplets(n, n, &triplets).map_err(|e| Error::Factorization(format!("{e:?}")))
    }

    /// Sparse Cholesky factorization; fails if the matrix is not positive definite.
    pub fn cholesky(&self) -> Result<SpdSolver> {
        let m = self.to_faer(true)?;
        let llt = m.sp_cholesky(Side::Lower).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(SpdSolver { llt })
    }

    /// Sparse LU factorization for indefinite shifted operators.
    pub fn lu(&self) -> Result<LuSolver> {
        let m = self.to_faer(false)?;
        let lu = m.sp_lu().map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(LuSolver { lu })
    }
}

/// Cached sparse Cholesky factor.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    llt: Llt<usize, f64>,
}

impl SpdSolver {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        self.llt.solve_in_place(MatMut::from_column_major_slice_mut(rhs, n, 1));
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Sparse LU factor.
#[derive(Debug, Clone)]
pub struct LuSolver {
    lu: Lu<usize, f64>,
}

impl LuSolver {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        let n = x.len();
        self.lu.solve_in_place(MatMut::from_column_major_slice_mut(&mut x, n, 1));
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for v in x {
        *v *= alpha;
    }
}

/// Eigen-decomposition of the small pencil H c = lambda G c with G positive definite.
///
/// Returns eigenvalues in ascending order and G-orthonormal eigenvectors as columns.
pub fn dense_pencil_eig(h: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = h.nrows();
    let gs = 0.5 * (g + g.transpose());
    let chol = gs
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(condition_estimate(&gs)))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient(condition_estimate(&gs)))?;
    let hs = 0.5 * (h + h.transpose());
    let c = &linv * hs * linv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    let back = linv.transpose();
    for (col, &k) in order.iter().enumerate() {
        let v = &back * eig.eigenvectors.column(k);
        vectors.set_column(col, &v);
    }
    Ok((values, vectors))
}

/// Ratio of extreme eigenvalues of a symmetric positive semidefinite matrix.
pub fn condition_estimate(g: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(0.5 * (g + g.transpose()));
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve the small symmetric system G c = b, failing when G is too ill conditioned.
pub fn gram_solve(g: &DMatrix<f64>, b: &DVector<f64>, max_condition: f64) -> Result<DVector<f64>> {
    let cond = condition_estimate(g);
    if !(cond <= max_condition) {
        return Err(Error::RankDeficient(cond));
    }
    g.clone().lu().solve(b).ok_or(Error::RankDeficient(cond))
}

/// Largest eigenpairs of the pencil B x = lambda A x with A positive definite, by
/// block subspace iteration with Rayleigh-Ritz.
///
/// `step` applies the iteration map (A^{-1} B, possibly followed by a projection that
/// is self-adjoint in the A inner product). Returns `want` eigenvalues in descending
/// order with A-orthonormal vectors, once every wanted pair has
/// |step(x) - lambda x|_A <= tol * lambda.
pub struct PencilIteration<'a> {
    pub a: &'a SymOperator,
    /// diagonal of B
    pub b: &'a [f64],
    pub want: usize,
    pub block: usize,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl PencilIteration<'_> {
    pub fn run(&self, start: Vec<Vec<f64>>, step: impl Fn(&[f64]) -> Vec<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = self.a.len();
        if start.len() != self.block || self.want > self.block || start.iter().any(|v| v.len() != n) {
            return Err(Error::InvalidInput("bad start block for pencil iteration".into()));
        }
        let (mut vals, mut basis) = self.ritz(&start)?;
        for _ in 0..self.max_sweeps {
            let next: Vec<Vec<f64>> = basis.iter().map(|v| step(v)).collect();
            let worst = (0..self.want)
                .map(|i| {
                    let mut r = next[i].clone();
                    axpy(-vals[i], &basis[i], &mut r);
                    self.a.form(&r, &r).max(0.0).sqrt() / vals[i].abs().max(1e-300)
                })
                .fold(0.0, f64::max);
            if worst <= self.tol {
                basis.truncate(self.want);
                vals.truncate(self.want);
                return Ok((vals, basis));
            }
            (vals, basis) = self.ritz(&next)?;
        }
        Err(Error::NoConvergence(format!("pencil iteration after {} sweeps", self.max_sweeps)))
    }

    fn ritz(&self, basis: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let k = basis.len();
        let ab: Vec<Vec<f64>> = basis.iter().map(|v| self.a.apply(v)).collect();
        let g = DMatrix::from_fn(k, k, |i, j| dot(&basis[i], &ab[j]));
        let h = DMatrix::from_fn(k, k, |i, j| {
            basis[i].iter().zip(&basis[j]).zip(self.b).map(|((x, y), w)| x * y * w).sum::<f64>()
        });
        let (vals, vecs) = dense_pencil_eig(&h, &g)?;
        let n = self.a.len();
        let mut out = Vec::with_capacity(k);
        let mut values = Vec::with_capacity(k);
        for col in (0..k).rev() {
            let mut v = vec![0.0; n];
            for (i, b) in basis.iter().enumerate() {
                axpy(vecs[(i, col)], b, &mut v);
            }
            out.push(v);
            values.push(vals[col]);
        }
        Ok((values, out))
    }
}

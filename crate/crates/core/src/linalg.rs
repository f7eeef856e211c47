//! Sparse symmetric matrices, SPD solves, and small dense least-squares
//! kernels used by the equilibration.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;

use crate::error::{Error, Result};

/// Symmetric matrix in compressed-row storage (both triangles stored).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseSym {
    /// Builds from triplets; duplicates are summed. `pattern` triplets with
    /// zero values are kept so that matrices built on the same connectivity
    /// share a pattern.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSym { n, row_ptr, col_idx, vals }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
        y
    }

    pub fn quad(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matvec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `a * self + b * other`; both must share the sparsity pattern.
    pub fn lincomb(&self, a: f64, other: &SparseSym, b: f64) -> SparseSym {
        assert_eq!(self.col_idx, other.col_idx, "patterns differ");
        let vals = self.vals.iter().zip(&other.vals).map(|(x, y)| a * x + b * y).collect();
        SparseSym { n: self.n, row_ptr: self.row_ptr.clone(), col_idx: self.col_idx.clone(), vals }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.col_idx[k])] += self.vals[k];
            }
        }
        d
    }

    fn to_csc(&self) -> CscMatrix<f64> {
        // Symmetric: CSR arrays are the CSC arrays of the same matrix.
        CscMatrix::try_from_csc_data(self.n, self.n, self.row_ptr.clone(), self.col_idx.clone(), self.vals.clone())
            .expect("valid compressed storage")
    }
}

/// Sparse Cholesky factorization of an SPD matrix.
pub struct SpdSolver {
    chol: Option<CscCholesky<f64>>,
    n: usize,
}

impl SpdSolver {
    pub fn new(a: &SparseSym) -> Result<Self> {
        if a.n == 0 {
            return Ok(SpdSolver { chol: None, n: 0 });
        }
        let chol = CscCholesky::factor(&a.to_csc()).map_err(|e| Error::Singular(format!("Cholesky failed: {e:?}")))?;
        Ok(SpdSolver { chol: Some(chol), n: a.n })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match &self.chol {
            None => vec![],
            Some(c) => {
                let rhs = DMatrix::from_column_slice(self.n, 1, b);
                c.solve(&rhs).as_slice().to_vec()
            }
        }
    }
}

/// Minimum-norm least-squares solution through the SVD pseudo-inverse.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * 1e-12).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).expect("u and v computed")
}

/// Equality-constrained least squares
/// `min c^T G c - 2 h^T c` subject to `C c = d` (with `C` possibly rank
/// deficient but `d` in its range), solved by the null-space method. The
/// factorization depends only on `C` and `G` and is reused across loads.
#[derive(Clone, Debug)]
pub struct ConstrainedLsq {
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pinv: DMatrix<f64>,
    null: DMatrix<f64>,
    reduce: DMatrix<f64>,
}

impl ConstrainedLsq {
    pub fn new(c: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        let (m, n) = c.shape();
        // Pad to at least square so that the SVD returns a full right basis.
        let rows = m.max(n);
        let mut padded = DMatrix::zeros(rows, n);
        padded.view_mut((0, 0), (m, n)).copy_from(&c);
        let svd = padded.svd(true, true);
        let v_t = svd.v_t.as_ref().expect("v computed");
        let u = svd.u.as_ref().expect("u computed");
        let s = &svd.singular_values;
        let smax = s.max();
        let tol = smax * 1e-10;
        let mut pinv = DMatrix::zeros(n, m);
        let mut null_cols = Vec::new();
        for k in 0..s.len() {
            if s[k] > tol {
                let vk = v_t.row(k).transpose();
                let uk = u.column(k).rows(0, m).into_owned();
                pinv += vk * uk.transpose() / s[k];
            } else {
                null_cols.push(v_t.row(k).transpose());
            }
        }
        let null = if null_cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&null_cols) };
        let reduce = if null.ncols() == 0 {
            DMatrix::zeros(0, n)
        } else {
            let ngn = null.transpose() * &g * &null;
            let inv = ngn
                .cholesky()
                .ok_or_else(|| Error::Equilibration("objective not definite on the constraint null space".into()))?
                .inverse();
            inv * null.transpose()
        };
        Ok(ConstrainedLsq { g, c, pinv, null, reduce })
    }

    pub fn null_dim(&self) -> usize {
        self.null.ncols()
    }

    /// Returns the minimizer and the constraint residual `|C c - d|_inf`.
    pub fn solve(&self, d: &DVector<f64>, h: &DVector<f64>) -> (DVector<f64>, f64) {
        let mut x = &self.pinv * d;
        if self.null.ncols() > 0 {
            let z = &self.reduce * (h - &self.g * &x);
            x += &self.null * z;
        }
        let res = (&self.c * &x - d).amax();
        (x, res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_solve_matches_dense() {
        let t = vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (1, 2, -1.0), (2, 1, -1.0), (2, 2, 2.0)];
        let a = SparseSym::from_triplets(3, t);
        let s = SpdSolver::new(&a).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = s.solve(&b);
        let r = a.matvec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-13);
        }
    }

    #[test]
    fn constrained_lsq_projects_onto_affine_set() {
        // min |x - h|^2 subject to x0 + x1 + x2 = 1 (listed twice: rank deficient).
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let g = DMatrix::identity(3, 3);
        let lsq = ConstrainedLsq::new(c, g).unwrap();
        assert_eq!(lsq.null_dim(), 2);
        let (x, res) = lsq.solve(&DVector::from_vec(vec![1.0, 2.0]), &DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert!(res < 1e-14);
        let expect = [1.0, 0.0, 0.0];
        for (a, b) in x.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}

//! Compressed sparse row matrices with a fixed symbolic pattern and a
//! reusable sparse Cholesky factorization.

use nalgebra::DMatrixViewMut;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;

use crate::error::{Error, Result};

/// Square CSR matrix. Column indices within a row are sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Zero matrix with the given row patterns (sorted and deduplicated here).
    pub fn from_pattern(n: usize, rows: &[Vec<usize>]) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::Argument(format!(
                "pattern has {} rows, expected {n}",
                rows.len()
            )));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in rows {
            let mut r = row.clone();
            r.sort_unstable();
            r.dedup();
            if r.last().is_some_and(|&c| c >= n) {
                return Err(Error::Argument("column index out of range".into()));
            }
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Ok(SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        })
    }

    /// Sparse copy of a dense matrix keeping nonzeros and the diagonal.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let pattern: Vec<Vec<usize>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (0..n).filter(|&j| j == i || r[j] != 0.0).collect())
            .collect();
        let mut m = SparseMatrix::from_pattern(n, &pattern)?;
        for (i, r) in rows.iter().enumerate() {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                m.values[k] = r[m.col_idx[k]];
            }
        }
        Ok(m)
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    /// Storage position of entry `(i, j)`, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b].binary_search(&j).ok().map(|k| a + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }

    /// `alpha * self + beta * other` on a shared pattern.
    pub fn combine(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> Result<SparseMatrix> {
        if !self.same_pattern(other) {
            return Err(Error::Internal("matrices do not share a sparsity pattern".into()));
        }
        let mut out = self.clone();
        for (o, (&a, &b)) in out.values.iter_mut().zip(self.values.iter().zip(&other.values)) {
            *o = alpha * a + beta * b;
        }
        Ok(out)
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// `max |A - A^T| / max |A|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut largest: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                largest = largest.max(v.abs());
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        if largest == 0.0 {
            0.0
        } else {
            worst / largest
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix.
/// The CSR arrays of a symmetric matrix double as its CSC arrays.
pub struct Factorization {
    chol: CscCholesky<f64>,
    n: usize,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.n).finish()
    }
}

impl Factorization {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let csc = CscMatrix::try_from_csc_data(
            a.n,
            a.n,
            a.row_ptr.clone(),
            a.col_idx.clone(),
            a.values.clone(),
        )
        .map_err(|e| Error::LinearAlgebra(format!("invalid matrix structure: {e}")))?;
        let chol = CscCholesky::factor(&csc)
            .map_err(|e| Error::LinearAlgebra(format!("Cholesky factorization failed: {e}")))?;
        Ok(Factorization { chol, n: a.n })
    }

    /// Numerical refactorization on the pattern used at construction.
    pub fn refactor(&mut self, a: &SparseMatrix) -> Result<()> {
        if a.n != self.n {
            return Err(Error::Internal("refactor with a different dimension".into()));
        }
        self.chol
            .refactor(&a.values)
            .map_err(|e| Error::LinearAlgebra(format!("Cholesky refactorization failed: {e}")))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n, "right-hand side has the wrong length");
        self.chol.solve_mut(DMatrixViewMut::from_slice(b, self.n, 1));
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// `||A x - b|| / ||b||` (or `||A x||` when `b = 0`).
pub fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul(x);
    let num: f64 = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> SparseMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match i.abs_diff(j) {
                        0 => 2.0,
                        1 => -1.0,
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect();
        SparseMatrix::from_dense(&rows).unwrap()
    }

    #[test]
    fn csr_basics() {
        let a = laplace_1d(4);
        assert_eq!(a.nnz(), 10);
        assert_eq!(a.get(1, 2), -1.0);
        assert_eq!(a.get(0, 3), 0.0);
        assert_eq!(a.mul(&[1.0, 1.0, 1.0, 1.0]), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.symmetry_defect(), 0.0);
        let b = a.combine(2.0, &a, -1.0).unwrap();
        assert_eq!(b, a);
    }

    #[test]
    fn cholesky_solves_and_refactors() {
        let a = laplace_1d(6);
        let b = vec![1.0, 0.0, 2.0, -1.0, 0.5, 3.0];
        let mut f = Factorization::new(&a).unwrap();
        let x = f.solve(&b);
        assert!(relative_residual(&a, &x, &b) < 1e-14);
        let mut a2 = a.clone();
        a2.scale(3.0);
        f.refactor(&a2).unwrap();
        let y = f.solve(&b);
        for (xi, yi) in x.iter().zip(&y) {
            assert!((xi - 3.0 * yi).abs() < 1e-13);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = laplace_1d(3);
        a.scale(-1.0);
        assert!(matches!(Factorization::new(&a), Err(Error::LinearAlgebra(_))));
    }
}

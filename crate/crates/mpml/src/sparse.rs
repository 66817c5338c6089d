//! Sparse symmetric positive definite matrices in compressed row form.
//!
//! The full (symmetric) pattern is stored. Construction validates the
//! invariants the solvers rely on: square, symmetric pattern and values,
//! strictly positive diagonal, finite entries.

use thiserror::Error;

use crate::cost::CostReceipt;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("row {0} has no diagonal entry or it is not strictly positive")]
    NonPositiveDiagonal(usize),
    #[error("pattern or values not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("non-finite value at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("index ({0}, {1}) out of bounds for dimension {2}")]
    IndexOutOfBounds(usize, usize, usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Symmetric positive definite sparse matrix, compressed sparse row.
#[derive(Debug, Clone)]
pub struct SparseSpd {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSpd {
    /// Build from (row, col, value) triplets; duplicate entries are summed
    /// and the result is validated (symmetry, positive diagonal, finite).
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<SparseSpd, MatrixError> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(MatrixError::IndexOutOfBounds(i, j, n));
            }
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        let m = SparseSpd { n, row_ptr, col_idx, values };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), MatrixError> {
        for i in 0..self.n {
            let mut has_diag = false;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let v = self.values[k];
                if !v.is_finite() {
                    return Err(MatrixError::NonFinite(i, j));
                }
                if j == i {
                    if v <= 0.0 {
                        return Err(MatrixError::NonPositiveDiagonal(i));
                    }
                    has_diag = true;
                } else if self.get(j, i) != v {
                    return Err(MatrixError::NotSymmetric(i, j));
                }
            }
            if !has_diag {
                return Err(MatrixError::NonPositiveDiagonal(i));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
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

    /// Entries of row `i` as `(column, value)` pairs, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_idx[k] == j {
                return self.values[k];
            }
        }
        0.0
    }

    /// y = A x in binary64.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// y = A x, charging 2 flops per stored entry.
    pub fn matvec_counted(&self, x: &[f64], y: &mut [f64], receipt: &mut CostReceipt) {
        self.matvec(x, y);
        receipt.flops += 2 * self.nnz() as u64;
    }

    /// Dense copy, used by oracle tests and debugging dumps.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[i][j] = v;
            }
        }
        d
    }

    /// Matrix Market coordinate export (general symmetric pattern is
    /// written in full): header line, dimension line, then one
    /// `row col value` triplet per line, 1-based.
    pub fn write_matrix_market(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {v:e}", i + 1, j + 1)?;
            }
        }
        Ok(())
    }
}

/// Euclidean norm in binary64.
pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Relative residual `||b - A x|| / ||b||` with the residual computed in
/// the emulated format `fmt` and norms in binary64.
///
/// Inputs are rounded into `fmt` before the computation; accumulation of
/// each residual component runs through the emulated arithmetic.
pub fn residual_norms(
    a: &SparseSpd,
    x: &[f64],
    b: &[f64],
    fmt: crate::fp::Format,
) -> Result<f64, crate::fp::FpError> {
    let r = residual_in_format(a, x, b, fmt)?;
    Ok(norm2(&r) / norm2(b))
}

/// r = b - A x elementwise in the emulated format `fmt`.
pub fn residual_in_format(
    a: &SparseSpd,
    x: &[f64],
    b: &[f64],
    fmt: crate::fp::Format,
) -> Result<Vec<f64>, crate::fp::FpError> {
    use crate::fp::{fp_mul, fp_sub, round_to};
    assert_eq!(x.len(), a.n());
    assert_eq!(b.len(), a.n());
    let mut r = Vec::with_capacity(a.n());
    for i in 0..a.n() {
        let mut acc = round_to(b[i], fmt)?;
        for (j, v) in a.row(i) {
            let prod = fp_mul(round_to(v, fmt)?, round_to(x[j], fmt)?, fmt)?;
            acc = fp_sub(acc, prod, fmt)?;
        }
        r.push(acc);
    }
    Ok(r)
}

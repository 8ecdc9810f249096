//! Column-major dense f64 matrices.
//!
//! [`DenseMatrix`] is the single carrier type for tokens, projection
//! weights, feature blocks and attention maps. The layout is column-major
//! (`data[i + j * rows]` is entry `(i, j)`), which makes per-token columns
//! contiguous — almost every algorithm here walks tokens column by column.
//!
//! Two invariants are enforced on every public operation:
//! * `rows * cols == data.len()`,
//! * every entry is finite (no NaN, no infinity).
//!
//! The second one is deliberately strict: the equivalence suites in this
//! repository assert identities near machine precision, and a silently
//! propagating `inf` would surface as a confusing tolerance failure far from
//! its origin. Operations that can produce non-finite values therefore check
//! their output and fail loudly.

use crate::error::{CoreError, Result};

/// Dense column-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn ensure_all_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::NonFinite { op })
    }
}

impl DenseMatrix {
    /// Builds a matrix from column-major data. Fails on a length mismatch
    /// or any non-finite entry.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(CoreError::ShapeMismatch {
                op: "DenseMatrix::from_vec",
                expected: format!("{rows}x{cols} = {} entries", rows * cols),
                got: format!("{} entries", data.len()),
            });
        }
        ensure_all_finite(&data, "DenseMatrix::from_vec")?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix by evaluating `f(i, j)` for every entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = vec![0.0; rows * cols];
        for j in 0..cols {
            for i in 0..rows {
                data[i + j * rows] = f(i, j);
            }
        }
        Self::from_vec(rows, cols, data)
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = 1.0;
        }
        m
    }

    /// Constant matrix (useful for broadcast-by-matmul tricks).
    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::from_vec(rows, cols, vec![value; rows * cols])
    }

    /// A single column taken from a slice.
    pub fn column_vector(v: &[f64]) -> Result<Self> {
        Self::from_vec(v.len(), 1, v.to_vec())
    }

    /// Builds a matrix whose columns are the given equal-length slices.
    pub fn from_columns(cols: &[&[f64]]) -> Result<Self> {
        if cols.is_empty() {
            return Err(CoreError::ShapeMismatch {
                op: "DenseMatrix::from_columns",
                expected: "at least one column".into(),
                got: "0 columns".into(),
            });
        }
        let rows = cols[0].len();
        let mut data = Vec::with_capacity(rows * cols.len());
        for (j, c) in cols.iter().enumerate() {
            if c.len() != rows {
                return Err(CoreError::ShapeMismatch {
                    op: "DenseMatrix::from_columns",
                    expected: format!("column of length {rows}"),
                    got: format!("column {j} of length {}", c.len()),
                });
            }
            data.extend_from_slice(c);
        }
        Self::from_vec(rows, cols.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(rows, cols)` pair, handy for error messages.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        self.data[i + j * self.rows]
    }

    /// Sets one entry; rejects non-finite values.
    pub fn set(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        if !v.is_finite() {
            return Err(CoreError::NonFinite {
                op: "DenseMatrix::set",
            });
        }
        self.data[i + j * self.rows] = v;
        Ok(())
    }

    /// Contiguous view of column `j` (column-major layout).
    pub fn col(&self, j: usize) -> &[f64] {
        assert!(j < self.cols, "column {j} out of bounds");
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Raw column-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                expected: format!("lhs cols == rhs rows (lhs {}x{})", self.rows, self.cols),
                got: format!("rhs {}x{}", rhs.rows, rhs.cols),
            });
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; m * n];
        // Column-major friendly order: accumulate rank-1 column updates.
        // The k-ascending accumulation order is part of the determinism
        // contract (matvec == matmul column, bitwise).
        for j in 0..n {
            let out_col = &mut out[j * m..(j + 1) * m];
            for p in 0..k {
                let b = rhs.data[p + j * k];
                if b == 0.0 {
                    continue;
                }
                let a_col = &self.data[p * m..(p + 1) * m];
                for i in 0..m {
                    out_col[i] += a_col[i] * b;
                }
            }
        }
        ensure_all_finite(&out, "matmul")?;
        Ok(DenseMatrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// Matrix-vector product returning a plain `Vec`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let rhs = DenseMatrix::column_vector(v)?;
        Ok(self.matmul(&rhs)?.data)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut data = vec![0.0; self.rows * self.cols];
        for j in 0..self.cols {
            for i in 0..self.rows {
                data[j + i * self.cols] = self.data[i + j * self.rows];
            }
        }
        DenseMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    fn zip_with(&self, rhs: &DenseMatrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.shape() != rhs.shape() {
            return Err(CoreError::ShapeMismatch {
                op,
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", rhs.rows, rhs.cols),
            });
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        ensure_all_finite(&data, op)?;
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Entrywise sum.
    pub fn add(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    /// Entrywise difference.
    pub fn sub(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    /// Scalar multiple.
    pub fn scale(&self, c: f64) -> Result<DenseMatrix> {
        let data: Vec<f64> = self.data.iter().map(|&a| a * c).collect();
        ensure_all_finite(&data, "scale")?;
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Entrywise map; the result is checked for finiteness.
    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<DenseMatrix> {
        let data: Vec<f64> = self.data.iter().map(|&a| f(a)).collect();
        ensure_all_finite(&data, op)?;
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Horizontal concatenation (shared row count).
    pub fn concat_cols(parts: &[&DenseMatrix]) -> Result<DenseMatrix> {
        if parts.is_empty() {
            return Err(CoreError::ShapeMismatch {
                op: "concat_cols",
                expected: "at least one part".into(),
                got: "0 parts".into(),
            });
        }
        let rows = parts[0].rows;
        let mut data = Vec::new();
        let mut cols = 0;
        for p in parts {
            if p.rows != rows {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_cols",
                    expected: format!("{rows} rows"),
                    got: format!("{} rows", p.rows),
                });
            }
            data.extend_from_slice(&p.data);
            cols += p.cols;
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Vertical concatenation (shared column count).
    pub fn concat_rows(top: &DenseMatrix, bottom: &DenseMatrix) -> Result<DenseMatrix> {
        if top.cols != bottom.cols {
            return Err(CoreError::ShapeMismatch {
                op: "concat_rows",
                expected: format!("{} columns", top.cols),
                got: format!("{} columns", bottom.cols),
            });
        }
        let rows = top.rows + bottom.rows;
        let mut data = Vec::with_capacity(rows * top.cols);
        for j in 0..top.cols {
            data.extend_from_slice(top.col(j));
            data.extend_from_slice(bottom.col(j));
        }
        Ok(DenseMatrix {
            rows,
            cols: top.cols,
            data,
        })
    }

    /// Copies the column block `[col0, col0 + ncols)`.
    pub fn slice_cols(&self, col0: usize, ncols: usize) -> Result<DenseMatrix> {
        if col0 + ncols > self.cols || ncols == 0 {
            return Err(CoreError::ShapeMismatch {
                op: "slice_cols",
                expected: format!("column window within 0..{}", self.cols),
                got: format!("[{col0}, {})", col0 + ncols),
            });
        }
        let data = self.data[col0 * self.rows..(col0 + ncols) * self.rows].to_vec();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: ncols,
            data,
        })
    }

    /// Copies the row block `[row0, row0 + nrows)`.
    pub fn slice_rows(&self, row0: usize, nrows: usize) -> Result<DenseMatrix> {
        if row0 + nrows > self.rows || nrows == 0 {
            return Err(CoreError::ShapeMismatch {
                op: "slice_rows",
                expected: format!("row window within 0..{}", self.rows),
                got: format!("[{row0}, {})", row0 + nrows),
            });
        }
        let mut data = Vec::with_capacity(nrows * self.cols);
        for j in 0..self.cols {
            let col = self.col(j);
            data.extend_from_slice(&col[row0..row0 + nrows]);
        }
        Ok(DenseMatrix {
            rows: nrows,
            cols: self.cols,
            data,
        })
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sum of all entries.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Dot product of two equal-length slices.
pub fn dot(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(CoreError::ShapeMismatch {
            op: "dot",
            expected: format!("length {}", x.len()),
            got: format!("length {}", y.len()),
        });
    }
    Ok(x.iter().zip(y).map(|(a, b)| a * b).sum())
}

/// Squared Euclidean norm of a slice.
pub fn squared_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Euclidean norm of a slice.
pub fn norm(x: &[f64]) -> f64 {
    squared_norm(x).sqrt()
}

/// Outer product `u vᵀ`: `result[i][j] = u[i] * v[j]`.
pub fn outer_product(u: &[f64], v: &[f64]) -> Result<DenseMatrix> {
    let mut data = Vec::with_capacity(u.len() * v.len());
    for &b in v {
        for &a in u {
            data.push(a * b);
        }
    }
    DenseMatrix::from_vec(u.len(), v.len(), data)
}

/// Column-wise softmax with per-column max subtraction for stability.
///
/// Each output column is a probability vector: nonnegative entries that sum
/// to one (up to rounding). Subtracting the column max first makes the
/// result invariant under per-column constant shifts of the scores.
pub fn column_softmax(m: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = vec![0.0; m.rows() * m.cols()];
    for j in 0..m.cols() {
        let col = m.col(j);
        let max = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let window = &mut out[j * m.rows()..(j + 1) * m.rows()];
        let mut sum = 0.0;
        for (o, &v) in window.iter_mut().zip(col) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in window.iter_mut() {
            *o /= sum;
        }
    }
    DenseMatrix::from_vec(m.rows(), m.cols(), out)
}

/// Relative L2 error `‖a − b‖ / max(‖b‖, floor)`; the tiny floor guards the
/// all-zero reference case.
pub fn relative_l2_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / norm(b).max(f64::MIN_POSITIVE)
}

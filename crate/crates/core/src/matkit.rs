//! Minimal dense real-matrix kernel used by all other modules.
//!
//! Matrices are row-major with `f64` entries. Horizons and state dimensions
//! are small throughout the crate, so everything is dense and allocation is
//! not a concern.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

/// Relative pivot threshold below which a matrix is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Relative pivot floor for the positive-definiteness test.
pub const PD_PIVOT_TOL: f64 = 1e-12;

/// Relative lower bound on elimination pivots accepted as semidefinite.
pub const PSD_PIVOT_TOL: f64 = 1e-10;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Error raised by [`solve_linear`] when elimination hits a negligible pivot.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
#[error("singular matrix: pivot {pivot:.3e} at column {col} is below threshold {threshold:.3e}")]
pub struct Singular {
    pub col: usize,
    pub pivot: f64,
    pub threshold: f64,
}

impl Mat {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from rows.
    ///
    /// # Panics
    /// Panics if the rows have unequal lengths or no columns.
    pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(r > 0 && c > 0, "matrix needs at least one row and column");
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows: expected {} columns", c);
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// Column vector from a slice.
    pub fn col(entries: &[f64]) -> Mat {
        Mat { rows: entries.len(), cols: 1, data: entries.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Entries in row-major order.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// True if the shape is `n` by 1.
    pub fn is_col(&self, n: usize) -> bool {
        self.rows == n && self.cols == 1
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Entrywise scaling by `s`.
    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    /// Symmetric part `(a + a^T) / 2`.
    pub fn symmetrized(&self) -> Mat {
        assert_eq!(self.rows, self.cols, "symmetrized needs a square matrix");
        let mut s = Mat::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..self.rows {
                s[(i, j)] = 0.5 * (self[(i, j)] + self[(j, i)]);
            }
        }
        s
    }

    /// Largest absolute deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "asymmetry needs a square matrix");
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Operator infinity norm (largest absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Frobenius norm; the Euclidean norm for vectors.
    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    /// Stacks `blocks` vertically.
    ///
    /// # Panics
    /// Panics on mismatched column counts or an empty block list.
    pub fn vstack(blocks: &[&Mat]) -> Mat {
        let cols = blocks.first().expect("vstack needs at least one block").cols;
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut r0 = 0;
        for b in blocks {
            assert_eq!(b.cols, cols, "vstack blocks must share a column count");
            for i in 0..b.rows {
                for j in 0..cols {
                    out[(r0 + i, j)] = b[(i, j)];
                }
            }
            r0 += b.rows;
        }
        out
    }

    /// Assembles a square matrix from a grid of equally sized square blocks.
    ///
    /// # Panics
    /// Panics if the grid is ragged or any block is not `n` by `n` where `n`
    /// is the size of the first block.
    pub fn from_blocks(grid: &[Vec<&Mat>]) -> Mat {
        let bn = grid.len();
        assert!(bn > 0, "from_blocks needs at least one block row");
        let n = grid[0][0].rows;
        let mut out = Mat::zeros(bn * n, grid[0].len() * n);
        for (bi, brow) in grid.iter().enumerate() {
            assert_eq!(brow.len(), grid[0].len(), "ragged block grid");
            for (bj, b) in brow.iter().enumerate() {
                assert!(b.rows == n && b.cols == n, "blocks must be square and equally sized");
                for i in 0..n {
                    for j in 0..n {
                        out[(bi * n + i, bj * n + j)] = b[(i, j)];
                    }
                }
            }
        }
        out
    }

    /// Extracts rows `[r0, r0 + len)` as a new matrix.
    pub fn row_block(&self, r0: usize, len: usize) -> Mat {
        assert!(r0 + len <= self.rows, "row block out of range");
        let mut out = Mat::zeros(len, self.cols);
        for i in 0..len {
            for j in 0..self.cols {
                out[(i, j)] = self[(r0 + i, j)];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of range");
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of range");
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        assert!(self.rows == rhs.rows && self.cols == rhs.cols, "shape mismatch in add");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        assert!(self.rows == rhs.rows && self.cols == rhs.cols, "shape mismatch in sub");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        mat_mul(self, rhs)
    }
}

impl fmt::Display for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            write!(f, "[")?;
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{:.4}", self[(i, j)])?;
            }
            writeln!(f, "]")?;
        }
        Ok(())
    }
}

/// Matrix product `a * b`.
///
/// # Panics
/// Panics if `a.cols() != b.rows()`.
pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "shape mismatch in mul: {}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols);
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out[(i, j)] += aik * b[(k, j)];
            }
        }
    }
    out
}

/// Solves `a * Y = b` by Gaussian elimination with partial pivoting.
///
/// Returns [`Singular`] when the best available pivot falls at or below
/// `SINGULAR_TOL` times the infinity norm of `a`.
///
/// # Panics
/// Panics if `a` is not square or `b.rows() != a.rows()`.
pub fn solve_linear(a: &Mat, b: &Mat) -> Result<Mat, Singular> {
    assert_eq!(a.rows, a.cols, "solve_linear needs a square matrix");
    assert_eq!(b.rows, a.rows, "right-hand side row count mismatch");
    let n = a.rows;
    let threshold = SINGULAR_TOL * a.norm_inf();
    let mut lhs = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, lhs[(r, col)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if pivot <= threshold {
            return Err(Singular { col, pivot, threshold });
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = lhs[(col, j)];
                lhs[(col, j)] = lhs[(pivot_row, j)];
                lhs[(pivot_row, j)] = tmp;
            }
            for j in 0..rhs.cols {
                let tmp = rhs[(col, j)];
                rhs[(col, j)] = rhs[(pivot_row, j)];
                rhs[(pivot_row, j)] = tmp;
            }
        }
        let d = lhs[(col, col)];
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = lhs[(r, col)] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                lhs[(r, j)] -= f * lhs[(col, j)];
            }
            for j in 0..rhs.cols {
                rhs[(r, j)] -= f * rhs[(col, j)];
            }
        }
    }
    for i in 0..n {
        let d = lhs[(i, i)];
        for j in 0..rhs.cols {
            rhs[(i, j)] /= d;
        }
    }
    Ok(rhs)
}

/// Explicit inverse; prefer [`solve_linear`] against a right-hand side.
pub fn invert(a: &Mat) -> Result<Mat, Singular> {
    solve_linear(a, &Mat::identity(a.rows()))
}

/// Infinity-norm condition estimate; infinite when `a` is singular.
pub fn condition_estimate(a: &Mat) -> f64 {
    match invert(a) {
        Ok(inv) => a.norm_inf() * inv.norm_inf(),
        Err(_) => f64::INFINITY,
    }
}

/// Tests positive definiteness of the symmetric part of `a`.
///
/// Symmetric Gaussian elimination; true iff every pivot exceeds
/// `PD_PIVOT_TOL * (1 + norm_inf(a))`.
pub fn is_positive_definite(a: &Mat) -> bool {
    is_positive_definite_with(a, PD_PIVOT_TOL * (1.0 + a.norm_inf()))
}

/// Positive definiteness with an explicit absolute pivot floor.
pub fn is_positive_definite_with(a: &Mat, pivot_floor: f64) -> bool {
    let n = a.rows();
    if n != a.cols() {
        return false;
    }
    let mut s = a.symmetrized();
    for i in 0..n {
        let d = s[(i, i)];
        if d <= pivot_floor {
            return false;
        }
        for r in (i + 1)..n {
            let f = s[(r, i)] / d;
            if f == 0.0 {
                continue;
            }
            for j in i..n {
                s[(r, j)] -= f * s[(i, j)];
            }
        }
    }
    true
}

/// Tests positive semidefiniteness of the symmetric part of `a`.
///
/// Pivots may sink to `-PSD_PIVOT_TOL * (1 + norm_inf(a))` before the matrix
/// is rejected; a negligible pivot is accepted only when its entire remaining
/// row is negligible too, so exactly singular weights pass.
pub fn is_positive_semidefinite(a: &Mat) -> bool {
    let n = a.rows();
    if n != a.cols() {
        return false;
    }
    let scale = 1.0 + a.norm_inf();
    let neg_floor = -PSD_PIVOT_TOL * scale;
    let tiny = PD_PIVOT_TOL * scale;
    let mut s = a.symmetrized();
    for i in 0..n {
        let d = s[(i, i)];
        if d > tiny {
            for r in (i + 1)..n {
                let f = s[(r, i)] / d;
                if f == 0.0 {
                    continue;
                }
                for j in i..n {
                    s[(r, j)] -= f * s[(i, j)];
                }
            }
        } else {
            if d < neg_floor {
                return false;
            }
            // A vanishing pivot is semidefinite only with a vanishing row.
            for j in (i + 1)..n {
                if s[(i, j)].abs() > tiny {
                    return false;
                }
            }
        }
    }
    true
}

/// Quadratic form `x^T q x` for a column vector `x`.
pub fn quad(x: &Mat, q: &Mat) -> f64 {
    assert_eq!(x.cols(), 1, "quad needs a column vector");
    let qx = mat_mul(q, x);
    x.as_slice().iter().zip(qx.as_slice()).map(|(a, b)| a * b).sum()
}

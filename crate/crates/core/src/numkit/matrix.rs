use crate::error::{Error, Result};

/// Pivots smaller than this in magnitude mark the system singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Small row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if nrows == 0 || ncols == 0 {
            return Err(Error::Empty("matrix without rows or columns"));
        }
        let mut values = Vec::with_capacity(nrows * ncols);
        for r in rows {
            if r.len() != ncols {
                return Err(Error::DimensionMismatch {
                    expected: ncols,
                    actual: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(DenseMatrix {
            rows: nrows,
            cols: ncols,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.values
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.values[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.values[r * self.cols + c]
    }
}

/// Solves `(m + ridge * I) x = rhs` by LU factorisation with partial pivoting.
pub fn solve_dense(m: &DenseMatrix, rhs: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let n = m.rows;
    if m.cols != n {
        return Err(Error::invalid(
            "m",
            format!("matrix must be square, got {}x{}", m.rows, m.cols),
        ));
    }
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: rhs.len(),
        });
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::invalid("ridge", format!("{ridge} is not a finite non-negative value")));
    }
    if rhs.iter().any(|v| !v.is_finite()) || m.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }

    let mut a = m.values.clone();
    for i in 0..n {
        a[i * n + i] += ridge;
    }
    let mut x = rhs.to_vec();

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty pivot range");
        if a[pivot_row * n + col].abs() < PIVOT_TOLERANCE {
            return Err(Error::SingularSystem);
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            x.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for k in col + 1..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            x[row] -= factor * x[col];
        }
    }

    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (x[row] - tail) / a[row * n + row];
    }

    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diagonal_and_identity() {
        let m = DenseMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]).unwrap();
        assert_eq!(solve_dense(&m, &[2.0, 4.0], 0.0).unwrap(), vec![1.0, 1.0]);
        let eye = DenseMatrix::identity(2);
        assert_eq!(solve_dense(&eye, &[5.0, -3.0], 0.0).unwrap(), vec![5.0, -3.0]);
    }

    #[test]
    fn ridge_only_solve_is_scalar_division() {
        let zero = DenseMatrix::zeros(2, 2);
        let x = solve_dense(&zero, &[1.0, 1.0], 1e-6).unwrap();
        for v in x {
            assert!((v - 1.0 / 1e-6).abs() <= 1e-6 * 1e6);
        }
    }

    #[test]
    fn singular_without_ridge() {
        let zero = DenseMatrix::zeros(2, 2);
        assert_eq!(solve_dense(&zero, &[1.0, 1.0], 0.0), Err(Error::SingularSystem));
        let rank_one = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap();
        assert_eq!(solve_dense(&rank_one, &[1.0, 1.0], 0.0), Err(Error::SingularSystem));
    }

    #[test]
    fn needs_pivoting() {
        let m = DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        assert_eq!(solve_dense(&m, &[3.0, 7.0], 0.0).unwrap(), vec![7.0, 3.0]);
    }

    #[test]
    fn shape_errors() {
        let m = DenseMatrix::zeros(2, 3);
        assert!(solve_dense(&m, &[1.0, 1.0], 0.0).is_err());
        let eye = DenseMatrix::identity(3);
        assert!(solve_dense(&eye, &[1.0], 0.0).is_err());
        assert!(DenseMatrix::from_rows(&[]).is_err());
    }

    proptest! {
        #[test]
        fn residual_is_small_on_diagonally_dominant(
            n in 1usize..8,
            entries in prop::collection::vec(-1.0f64..1.0, 64),
            rhs in prop::collection::vec(-10.0f64..10.0, 8),
        ) {
            let mut m = DenseMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] = entries[i * 8 + j];
                }
                m[(i, i)] += n as f64 + 1.0;
            }
            let b = &rhs[..n];
            let x = solve_dense(&m, b, 0.0).unwrap();
            let r = m.mul_vec(&x);
            let resid: f64 = r.iter().zip(b).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
            let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(resid <= 1e-8 * (bn + 1.0));
        }
    }
}

//! Small dense linear-algebra helpers shared by the least-squares and
//! ridge-readout trainers.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
///
/// `a` is consumed as scratch space. Returns `SingularSystem` when a pivot
/// collapses below `1e-12` of the largest initial row norm.
pub fn solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-12 * scale;

    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[[row, col]].abs() > a[[pivot, col]].abs() {
                pivot = row;
            }
        }
        if a[[pivot, col]].abs() < tol {
            return Err(Error::SingularSystem(format!(
                "pivot {:.3e} at column {col}",
                a[[pivot, col]]
            )));
        }
        if pivot != col {
            for k in col..n {
                let tmp = a[[col, k]];
                a[[col, k]] = a[[pivot, k]];
                a[[pivot, k]] = tmp;
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = a[[row, col]] / a[[col, col]];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[[row, k]] -= factor * a[[col, k]];
            }
            b[row] -= factor * b[col];
        }
    }

    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[[row, k]] * x[k];
        }
        x[row] = acc / a[[row, row]];
    }
    Ok(x)
}

/// Solve `a X = B` column by column for a matrix right-hand side.
pub fn solve_multi(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((a.ncols(), b.ncols()));
    for (j, col) in b.columns().into_iter().enumerate() {
        let x = solve(a.clone(), col.to_owned())?;
        out.column_mut(j).assign(&x);
    }
    Ok(out)
}

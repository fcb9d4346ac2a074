//! Small dense solvers for normal equations.

use ndarray::{Array1, Array2};

use crate::error::{DrnError, Result};
use crate::scalar::Scalar;

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky.
///
/// A pivot below `1e-12 · max diag(A)` is reported as rank deficiency.
pub fn solve_spd<T: Scalar>(a: &Array2<T>, b: &Array1<T>, context: &'static str) -> Result<Array1<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(DrnError::Dimension {
            context: "solve_spd (square matrix)",
            expected: n,
            found: a.ncols(),
        });
    }
    if b.len() != n {
        return Err(DrnError::Dimension {
            context: "solve_spd (right-hand side)",
            expected: n,
            found: b.len(),
        });
    }
    let max_diag = (0..n).map(|i| a[[i, i]].abs()).fold(T::zero(), T::max);
    let floor = max_diag * T::c(1e-12);
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d = d - l[[j, k]] * l[[j, k]];
        }
        if !(d > floor) {
            return Err(DrnError::RankDeficient(context));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    let mut y = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<T>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Ok(x)
}

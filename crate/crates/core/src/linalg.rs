//! Small dense linear solves (Gaussian elimination with partial pivoting).
//! Systems here are at most a few hundred unknowns.

use crate::error::{CoreError, Result};

/// Solves `A x = b` in place over copies; returns x.
pub(crate) fn solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| {
                m[r1 * n + col]
                    .abs()
                    .partial_cmp(&m[r2 * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if m[pivot_row * n + col].abs() < 1e-300 {
            return Err(CoreError::Invalid("singular linear system".into()));
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            x.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
            x[row] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= m[col * n + col];
        for row in 0..col {
            let f = m[row * n + col];
            if f != 0.0 {
                x[row] -= f * x[col];
            }
        }
    }
    Ok(x)
}

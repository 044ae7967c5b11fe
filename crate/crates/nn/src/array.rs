//! Row-major `f64` arrays.
//!
//! Everything in this workspace is small enough that a plain `Vec<f64>` plus
//! a shape is the right representation. Arrays are validated to be finite on
//! construction; downstream code treats a NaN/Inf as a hard error rather than
//! letting it propagate.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NnError::Invalid(format!(
                "shape dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::ShapeMismatch {
                context: "DenseArray::new",
                expected: vec![expected],
                got: vec![data.len()],
            });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(NnError::NonFinite("DenseArray::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![value; len])
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1, 1], vec![value])
    }

    /// Builds a `(rows.len(), width)` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(NnError::Invalid("from_rows: no rows".into()));
        }
        let width = rows[0].len();
        let mut data = Vec::with_capacity(n * width);
        for row in rows {
            if row.len() != width {
                return Err(NnError::ShapeMismatch {
                    context: "DenseArray::from_rows",
                    expected: vec![width],
                    got: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![n, width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar array.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(NnError::ShapeMismatch {
                context: "DenseArray::item",
                expected: vec![1],
                got: self.shape.clone(),
            })
        }
    }

    /// Interprets the array as a matrix: scalars are (1,1), vectors (1,n).
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(NnError::Invalid(format!(
                "expected at most 2 dimensions, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2().expect("row() on non-matrix");
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `(n,k) @ (k,m)` matrix product. Shared by the pure forward pass and the
/// tape so both produce bit-identical results.
pub fn matmul(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    let (n, k) = a.dims2()?;
    let (k2, m) = b.dims2()?;
    if k != k2 {
        return Err(NnError::ShapeMismatch {
            context: "matmul",
            expected: vec![k],
            got: vec![k2],
        });
    }
    let mut out = vec![0.0; n * m];
    let ad = a.data();
    let bd = b.data();
    for i in 0..n {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[kk * m..(kk + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    DenseArray::new(vec![n, m], out)
}

/// `a @ b^T` without materializing the transpose; used by backward passes.
pub fn matmul_bt(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    let (n, k) = a.dims2()?;
    let (m, k2) = b.dims2()?;
    if k != k2 {
        return Err(NnError::ShapeMismatch {
            context: "matmul_bt",
            expected: vec![k],
            got: vec![k2],
        });
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data()[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data()[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    DenseArray::new(vec![n, m], out)
}

/// `a^T @ b` without materializing the transpose; used by backward passes.
pub fn matmul_at(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    let (n, k) = a.dims2()?;
    let (n2, m) = b.dims2()?;
    if n != n2 {
        return Err(NnError::ShapeMismatch {
            context: "matmul_at",
            expected: vec![n],
            got: vec![n2],
        });
    }
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let arow = &a.data()[i * k..(i + 1) * k];
        let brow = &b.data()[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * m..(kk + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    DenseArray::new(vec![k, m], out)
}

//! Reverse-mode automatic differentiation on a flat operation tape.
//!
//! The tape is a Wengert list: every operation appends a node holding its
//! opcode, input node ids, and materialized value. `backward` walks the list
//! in reverse from a scalar loss and accumulates vector-Jacobian products
//! into one gradient slot per node.
//!
//! The op set is exactly what MLP policies, critics, and diagonal-Gaussian
//! dynamics models need: matmul, bias broadcast, elementwise arithmetic and
//! nonlinearities, column slicing/concatenation, row/full reductions, and an
//! elementwise min (twin-critic targets).
//!
//! Any NaN or Inf produced by a forward op or a backward accumulation is an
//! error, never a silently propagated value.

use crate::array::{matmul, matmul_at, matmul_bt, DenseArray};
use crate::error::{NnError, Result};

/// Handle to a tape node. Cheap to copy; only meaningful for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// (n,m) + (1,m) bias broadcast over rows.
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MinElem(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Neg(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Softplus(usize),
    Sigmoid(usize),
    Square(usize),
    /// (n,m) -> (n,1)
    RowSum(usize),
    SumAll(usize),
    MeanAll(usize),
    ConcatCols(usize, usize),
    SliceCols {
        src: usize,
        start: usize,
        len: usize,
    },
}

struct Node {
    op: Op,
    value: DenseArray,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<DenseArray>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseArray> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape if `v` did not
    /// contribute to the loss.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> DenseArray {
        match self.grads.get_mut(v.0).and_then(|g| g.take()) {
            Some(g) => g,
            None => DenseArray::zeros(shape.to_vec()),
        }
    }
}

fn numerically_stable_softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow for large |x|.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input (parameter or constant) on the tape.
    pub fn leaf(&mut self, value: DenseArray) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: DenseArray, context: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(context));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        self.push(Op::MatMul(a.0, b.0), value, "matmul")
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.nodes[a.0].value.dims2()?;
        let (bn, bm) = self.nodes[bias.0].value.dims2()?;
        if bn != 1 || bm != m {
            return Err(NnError::ShapeMismatch {
                context: "add_row",
                expected: vec![1, m],
                got: vec![bn, bm],
            });
        }
        let mut data = self.nodes[a.0].value.data().to_vec();
        let b = self.nodes[bias.0].value.data();
        for i in 0..n {
            for j in 0..m {
                data[i * m + j] += b[j];
            }
        }
        let value = DenseArray::new(vec![n, m], data)?;
        self.push(Op::AddRow(a.0, bias.0), value, "add_row")
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        context: &'static str,
    ) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.shape() != bv.shape() {
            return Err(NnError::ShapeMismatch {
                context,
                expected: av.shape().to_vec(),
                got: bv.shape().to_vec(),
            });
        }
        let data: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = DenseArray::new(av.shape().to_vec(), data).map_err(|_| NnError::NonFinite(context))?;
        self.push(op, value, context)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a.0, b.0), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a.0, b.0), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a.0, b.0), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, |x, y| x / y, Op::Div(a.0, b.0), "div")
    }

    /// Elementwise minimum; ties route the gradient to the first argument.
    pub fn min_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, f64::min, Op::MinElem(a.0, b.0), "min_elem")
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
        context: &'static str,
    ) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let data: Vec<f64> = av.data().iter().map(|&x| f(x)).collect();
        let value = DenseArray::new(av.shape().to_vec(), data).map_err(|_| NnError::NonFinite(context))?;
        self.push(op, value, context)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x + c, Op::AddScalar(a.0), "add_scalar")
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x * c, Op::MulScalar(a.0, c), "mul_scalar")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| -x, Op::Neg(a.0), "neg")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh(a.0), "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0), "relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a.0), "exp")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Ln(a.0), "ln")
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, numerically_stable_softplus, Op::Softplus(a.0), "softplus")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a.0), "sigmoid")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square(a.0), "square")
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.nodes[a.0].value.dims2()?;
        let d = self.nodes[a.0].value.data();
        let data: Vec<f64> = (0..n).map(|i| d[i * m..(i + 1) * m].iter().sum()).collect();
        let value = DenseArray::new(vec![n, 1], data)?;
        self.push(Op::RowSum(a.0), value, "row_sum")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::SumAll(a.0), DenseArray::scalar(s)?, "sum_all")
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::MeanAll(a.0), DenseArray::scalar(s)?, "mean_all")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.nodes[a.0].value.dims2()?;
        let (n2, m2) = self.nodes[b.0].value.dims2()?;
        if n != n2 {
            return Err(NnError::ShapeMismatch {
                context: "concat_cols",
                expected: vec![n],
                got: vec![n2],
            });
        }
        let mut data = Vec::with_capacity(n * (m + m2));
        for i in 0..n {
            data.extend_from_slice(self.nodes[a.0].value.row(i));
            data.extend_from_slice(self.nodes[b.0].value.row(i));
        }
        let value = DenseArray::new(vec![n, m + m2], data)?;
        self.push(Op::ConcatCols(a.0, b.0), value, "concat_cols")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.nodes[a.0].value.dims2()?;
        if start + len > m || len == 0 {
            return Err(NnError::Invalid(format!(
                "slice_cols [{start}, {}) out of bounds for width {m}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&self.nodes[a.0].value.row(i)[start..start + len]);
        }
        let value = DenseArray::new(vec![n, len], data)?;
        self.push(
            Op::SliceCols {
                src: a.0,
                start,
                len,
            },
            value,
            "slice_cols",
        )
    }

    /// Reverse pass from a scalar loss. Returns one gradient per contributing
    /// node; leaves hold the gradients callers care about.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(NnError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<DenseArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseArray::scalar(1.0)?);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for g in grads.iter().flatten() {
            if !g.all_finite() {
                return Err(NnError::NonFinite("backward"));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        idx: usize,
        g: &DenseArray,
        grads: &mut [Option<DenseArray>],
    ) -> Result<()> {
        let add_to = |grads: &mut [Option<DenseArray>], target: usize, delta: DenseArray| {
            match &mut grads[target] {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                        *a += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |i: usize| &self.nodes[i].value;

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                add_to(grads, *a, matmul_bt(g, val(*b))?);
                add_to(grads, *b, matmul_at(val(*a), g)?);
            }
            Op::AddRow(a, bias) => {
                add_to(grads, *a, g.clone());
                let (n, m) = g.dims2()?;
                let mut bg = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        bg[j] += g.data()[i * m + j];
                    }
                }
                add_to(grads, *bias, DenseArray::new(vec![1, m], bg)?);
            }
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                let neg: Vec<f64> = g.data().iter().map(|x| -x).collect();
                add_to(grads, *b, DenseArray::new(g.shape().to_vec(), neg)?);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.data().iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.data().iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
                add_to(grads, *b, DenseArray::new(g.shape().to_vec(), db)?);
            }
            Op::Div(a, b) => {
                let bx = val(*b).data();
                let ax = val(*a).data();
                let da: Vec<f64> = g.data().iter().zip(bx).map(|(g, y)| g / y).collect();
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(ax.iter().zip(bx))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
                add_to(grads, *b, DenseArray::new(g.shape().to_vec(), db)?);
            }
            Op::MinElem(a, b) => {
                let ax = val(*a).data();
                let bx = val(*b).data();
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(ax.iter().zip(bx))
                    .map(|(g, (x, y))| if x <= y { *g } else { 0.0 })
                    .collect();
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(ax.iter().zip(bx))
                    .map(|(g, (x, y))| if y < x { *g } else { 0.0 })
                    .collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
                add_to(grads, *b, DenseArray::new(g.shape().to_vec(), db)?);
            }
            Op::AddScalar(a) => add_to(grads, *a, g.clone()),
            Op::MulScalar(a, c) => {
                let da: Vec<f64> = g.data().iter().map(|g| g * c).collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
            }
            Op::Neg(a) => {
                let da: Vec<f64> = g.data().iter().map(|g| -g).collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.data();
                let da: Vec<f64> = g.data().iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
            }
            Op::Exp(a) => {
                let y = self.nodes[idx].value.data();
                let da: Vec<f64> = g.data().iter().zip(y).map(|(g, y)| g * y).collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
            }
            Op::Ln(a) => {
                let x = val(*a).data();
                let da: Vec<f64> = g.data().iter().zip(x).map(|(g, x)| g / x).collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
            }
            Op::Softplus(a) => {
                let x = val(*a).data();
                let da: Vec<f64> = g.data().iter().zip(x).map(|(g, x)| g * sigmoid(*x)).collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.data();
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y)
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
            }
            Op::Square(a) => {
                let x = val(*a).data();
                let da: Vec<f64> = g.data().iter().zip(x).map(|(g, x)| 2.0 * g * x).collect();
                add_to(grads, *a, DenseArray::new(g.shape().to_vec(), da)?);
            }
            Op::RowSum(a) => {
                let (n, m) = val(*a).dims2()?;
                let mut da = vec![0.0; n * m];
                for i in 0..n {
                    let gi = g.data()[i];
                    for j in 0..m {
                        da[i * m + j] = gi;
                    }
                }
                add_to(grads, *a, DenseArray::new(vec![n, m], da)?);
            }
            Op::SumAll(a) => {
                let gv = g.item()?;
                let src = val(*a);
                add_to(grads, *a, DenseArray::full(src.shape().to_vec(), gv)?);
            }
            Op::MeanAll(a) => {
                let src = val(*a);
                let gv = g.item()? / src.len() as f64;
                add_to(grads, *a, DenseArray::full(src.shape().to_vec(), gv)?);
            }
            Op::ConcatCols(a, b) => {
                let (n, m) = val(*a).dims2()?;
                let (_, m2) = val(*b).dims2()?;
                let mut da = vec![0.0; n * m];
                let mut db = vec![0.0; n * m2];
                for i in 0..n {
                    let grow = g.row(i);
                    da[i * m..(i + 1) * m].copy_from_slice(&grow[..m]);
                    db[i * m2..(i + 1) * m2].copy_from_slice(&grow[m..]);
                }
                add_to(grads, *a, DenseArray::new(vec![n, m], da)?);
                add_to(grads, *b, DenseArray::new(vec![n, m2], db)?);
            }
            Op::SliceCols { src, start, len } => {
                let (n, m) = val(*src).dims2()?;
                let mut da = vec![0.0; n * m];
                for i in 0..n {
                    da[i * m + start..i * m + start + len].copy_from_slice(g.row(i));
                }
                add_to(grads, *src, DenseArray::new(vec![n, m], da)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_grad_is_one() {
        let mut tape = Tape::new();
        let p = tape.leaf(DenseArray::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap());
        let loss = tape.sum_all(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_closed_form() {
        // loss = 0.5 * ||W x - y||^2, dL/dW = (W x - y) x^T
        let mut tape = Tape::new();
        let w = tape.leaf(DenseArray::new(vec![1, 2], vec![0.5, -0.25]).unwrap());
        let x = tape.leaf(DenseArray::new(vec![2, 1], vec![2.0, 4.0]).unwrap());
        let y = tape.leaf(DenseArray::scalar(3.0).unwrap());
        let wx = tape.matmul(w, x).unwrap();
        let r = tape.sub(wx, y).unwrap();
        let sq = tape.square(r).unwrap();
        let half = tape.mul_scalar(sq, 0.5).unwrap();
        let loss = tape.sum_all(half).unwrap();
        let grads = tape.backward(loss).unwrap();
        // residual = 1 - 1 - 3 = -3; grad = -3 * [2, 4]
        let gw = grads.get(w).unwrap();
        assert!((gw.data()[0] - -6.0).abs() < 1e-12);
        assert!((gw.data()[1] - -12.0).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let p = tape.leaf(DenseArray::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        assert!(matches!(
            tape.backward(p),
            Err(NnError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn nan_forward_raises() {
        let mut tape = Tape::new();
        let p = tape.leaf(DenseArray::new(vec![1, 1], vec![-1.0]).unwrap());
        assert!(tape.ln(p).is_err());
    }

    #[test]
    fn exp_overflow_raises() {
        let mut tape = Tape::new();
        let p = tape.leaf(DenseArray::new(vec![1, 1], vec![1000.0]).unwrap());
        assert!(matches!(tape.exp(p), Err(NnError::NonFinite(_))));
    }

    #[test]
    fn slice_concat_roundtrip_gradient() {
        let mut tape = Tape::new();
        let p = tape.leaf(DenseArray::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let left = tape.slice_cols(p, 0, 1).unwrap();
        let right = tape.slice_cols(p, 1, 2).unwrap();
        let sl = tape.sum_all(left).unwrap();
        let sr = tape.sum_all(right).unwrap();
        let sr2 = tape.mul_scalar(sr, 2.0).unwrap();
        let loss = tape.add(sl, sr2).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 2.0, 2.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn min_elem_routes_gradient_to_smaller_side() {
        let mut tape = Tape::new();
        let a = tape.leaf(DenseArray::new(vec![1, 2], vec![1.0, 5.0]).unwrap());
        let b = tape.leaf(DenseArray::new(vec![1, 2], vec![2.0, 4.0]).unwrap());
        let m = tape.min_elem(a, b).unwrap();
        let loss = tape.sum_all(m).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0, 1.0]);
    }
}

//! Multilayer perceptrons over [`DenseArray`] batches.
//!
//! Hidden layers share one activation; the output layer is always linear.
//! The same matmul kernel backs both the pure forward pass and the taped
//! forward pass, so inference and training see identical arithmetic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{matmul, DenseArray};
use crate::error::{NnError, Result};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    /// x * sigmoid(x); smooth with bounded derivative, used for dynamics
    /// model trunks.
    Swish,
    Identity,
}

impl Activation {
    fn apply_slice(self, xs: &mut [f64]) {
        match self {
            Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => xs.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Swish => xs.iter_mut().for_each(|x| {
                let s = if *x >= 0.0 {
                    1.0 / (1.0 + (-*x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                *x *= s;
            }),
            Activation::Identity => {}
        }
    }

    fn apply_tape(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Swish => {
                let s = tape.sigmoid(x)?;
                tape.mul(x, s)
            }
            Activation::Identity => Ok(x),
        }
    }
}

/// Fully-connected network. Weight `l` has shape `(widths[l], widths[l+1])`,
/// bias `l` has shape `(1, widths[l+1])`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    hidden: Activation,
    weights: Vec<DenseArray>,
    biases: Vec<DenseArray>,
}

/// Tape handles for one registration of an [`Mlp`]'s parameters.
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl Mlp {
    /// Uniform fan-based init (He-style for relu, Xavier-style otherwise),
    /// zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::Invalid(format!(
                "mlp needs >= 2 positive layer widths, got {widths:?}"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l] as f64, widths[l + 1] as f64);
            let limit = match hidden {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                _ => (6.0 / (fan_in + fan_out)).sqrt(),
            };
            let data: Vec<f64> = (0..widths[l] * widths[l + 1])
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(DenseArray::new(vec![widths[l], widths[l + 1]], data)?);
            biases.push(DenseArray::zeros(vec![1, widths[l + 1]]));
        }
        Ok(Self {
            widths: widths.to_vec(),
            hidden,
            weights,
            biases,
        })
    }

    pub fn zeros(widths: &[usize], hidden: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::Invalid(format!(
                "mlp needs >= 2 positive layer widths, got {widths:?}"
            )));
        }
        let weights = (0..widths.len() - 1)
            .map(|l| DenseArray::zeros(vec![widths[l], widths[l + 1]]))
            .collect();
        let biases = (0..widths.len() - 1)
            .map(|l| DenseArray::zeros(vec![1, widths[l + 1]]))
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            hidden,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Rescales the final layer's weights; useful for near-zero policy heads.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(w) = self.weights.last_mut() {
            w.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Parameters in a fixed order: w0, b0, w1, b1, ...
    pub fn params(&self) -> Vec<&DenseArray> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for l in 0..self.weights.len() {
            out.push(&self.weights[l]);
            out.push(&self.biases[l]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseArray> {
        let mut out: Vec<&mut DenseArray> = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Names aligned with [`Mlp::params`], for checkpoints.
    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.push(format!("{prefix}/w{l}"));
            out.push(format!("{prefix}/b{l}"));
        }
        out
    }

    /// Pure forward pass on a `(batch, in_dim)` input.
    pub fn forward(&self, input: &DenseArray) -> Result<DenseArray> {
        let (_, cols) = input.dims2()?;
        if cols != self.in_dim() {
            return Err(NnError::ShapeMismatch {
                context: "Mlp::forward",
                expected: vec![self.in_dim()],
                got: vec![cols],
            });
        }
        let mut x = input.clone();
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let mut z = matmul(&x, &self.weights[l])?;
            let (n, m) = z.dims2()?;
            let b = self.biases[l].data();
            {
                let zd = z.data_mut();
                for i in 0..n {
                    for j in 0..m {
                        zd[i * m + j] += b[j];
                    }
                }
            }
            if l != last {
                self.hidden.apply_slice(z.data_mut());
            }
            if !z.all_finite() {
                return Err(NnError::NonFinite("Mlp::forward"));
            }
            x = z;
        }
        Ok(x)
    }

    /// Single-sample convenience wrapper around [`Mlp::forward`].
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let arr = DenseArray::new(vec![1, input.len()], input.to_vec())?;
        Ok(self.forward(&arr)?.data().to_vec())
    }

    /// Registers all parameters as tape leaves.
    pub fn vars(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            weights: self.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.leaf(b.clone())).collect(),
        }
    }

    /// Taped forward pass through previously registered parameters.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &MlpVars, input: Var) -> Result<Var> {
        let last = self.n_layers() - 1;
        let mut x = input;
        for l in 0..self.n_layers() {
            let z = tape.matmul(x, vars.weights[l])?;
            let z = tape.add_row(z, vars.biases[l])?;
            x = if l != last {
                self.hidden.apply_tape(tape, z)?
            } else {
                z
            };
        }
        Ok(x)
    }

    /// theta <- tau * other + (1 - tau) * theta
    pub fn soft_update_from(&mut self, other: &Mlp, tau: f64) -> Result<()> {
        if self.widths != other.widths {
            return Err(NnError::ShapeMismatch {
                context: "soft_update_from",
                expected: self.widths.clone(),
                got: other.widths.clone(),
            });
        }
        for (mine, theirs) in self
            .params_mut()
            .into_iter()
            .zip(other.params())
        {
            for (m, t) in mine.data_mut().iter_mut().zip(theirs.data()) {
                *m = tau * t + (1.0 - tau) * *m;
            }
        }
        Ok(())
    }
}

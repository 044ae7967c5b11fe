//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::error::{NnError, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second-moment accumulators, one pair per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<DenseArray>,
    v: Vec<DenseArray>,
    t: u64,
}

impl AdamState {
    pub fn new_like(params: &[&DenseArray]) -> Self {
        Self {
            m: params.iter().map(|p| DenseArray::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| DenseArray::zeros(p.shape().to_vec())).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all parameter arrays. Rejects the whole step (leaving
    /// params and state untouched) if any gradient entry is NaN/Inf or a
    /// shape disagrees.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [&mut DenseArray],
        grads: &[DenseArray],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Invalid(format!(
                "adam: expected {} parameter arrays, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NnError::ShapeMismatch {
                    context: "adam step",
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(NnError::NonFinite("adam gradient"));
            }
        }

        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
                vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = DenseArray::new(vec![1, 2], vec![0.4, -0.8]).unwrap();
        let before = p.clone();
        let mut state = AdamState::new_like(&[&p]);
        let g = DenseArray::zeros(vec![1, 2]);
        state
            .step(&AdamConfig::default(), &mut [&mut p], &[g])
            .unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut p = DenseArray::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let mut state = AdamState::new_like(&[&p]);
        let g = DenseArray::new(vec![1, 2], vec![2.5, -0.3]).unwrap();
        for _ in 0..50 {
            state
                .step(&AdamConfig::default(), &mut [&mut p], &[g.clone()])
                .unwrap();
        }
        assert!(p.data()[0] < 0.0);
        assert!(p.data()[1] > 0.0);
    }

    #[test]
    fn one_step_on_quadratic_decreases_loss() {
        // f(x) = 0.5 x^2 from x = 1; grad = x
        let mut x = DenseArray::scalar(1.0).unwrap();
        let mut state = AdamState::new_like(&[&x]);
        let g = DenseArray::scalar(1.0).unwrap();
        let loss_before = 0.5 * x.data()[0] * x.data()[0];
        state
            .step(&AdamConfig::with_lr(1e-3), &mut [&mut x], &[g])
            .unwrap();
        let loss_after = 0.5 * x.data()[0] * x.data()[0];
        assert!(loss_after < loss_before);
    }

    #[test]
    fn nan_gradient_aborts_step() {
        let mut p = DenseArray::new(vec![1, 1], vec![1.0]).unwrap();
        let before = p.clone();
        let mut state = AdamState::new_like(&[&p]);
        let mut g = DenseArray::zeros(vec![1, 1]);
        g.data_mut()[0] = f64::NAN;
        assert!(state
            .step(&AdamConfig::default(), &mut [&mut p], &[g])
            .is_err());
        assert_eq!(p, before);
        assert_eq!(state.steps_taken(), 0);
    }
}

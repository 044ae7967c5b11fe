//! Replay buffer with separate real and model partitions.

use std::collections::VecDeque;

use rand::Rng;
use rand_pcg::Pcg64;

use crate::error::{CoreError, Result};
use crate::types::{Source, Transition};

pub struct ReplayBuffer {
    real: VecDeque<Transition>,
    model: VecDeque<Transition>,
    real_capacity: usize,
    model_capacity: usize,
    warned_empty_partition: bool,
}

impl ReplayBuffer {
    pub fn new(real_capacity: usize, model_capacity: usize) -> Self {
        Self {
            real: VecDeque::with_capacity(real_capacity.min(1 << 20)),
            model: VecDeque::with_capacity(model_capacity.min(1 << 20)),
            real_capacity,
            model_capacity,
            warned_empty_partition: false,
        }
    }

    pub fn push(&mut self, t: Transition) {
        let (queue, cap) = match t.source {
            Source::Real => (&mut self.real, self.real_capacity),
            Source::Model => (&mut self.model, self.model_capacity),
        };
        if queue.len() == cap {
            queue.pop_front();
        }
        queue.push_back(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    pub fn clear_model(&mut self) {
        self.model.clear();
    }

    pub fn real_len(&self) -> usize {
        self.real.len()
    }

    pub fn model_len(&self) -> usize {
        self.model.len()
    }

    pub fn len(&self) -> usize {
        self.real.len() + self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn real_iter(&self) -> impl Iterator<Item = &Transition> {
        self.real.iter()
    }

    /// O(1) access into the real partition (rollout start sampling).
    pub fn real_get(&self, i: usize) -> &Transition {
        &self.real[i]
    }

    /// Draws a batch with the requested real:model mix. The real count is
    /// floor(ratio * batch) plus a Bernoulli on the fractional part, so the
    /// expected mix is exact. If one partition is empty while its share is
    /// nonzero, the batch is filled from the other partition (with a one-time
    /// warning).
    pub fn sample(
        &mut self,
        batch: usize,
        real_ratio: f64,
        rng: &mut Pcg64,
    ) -> Result<Vec<Transition>> {
        if batch == 0 {
            return Ok(Vec::new());
        }
        if self.is_empty() {
            return Err(CoreError::Invalid("cannot sample from empty buffer".into()));
        }
        if !(0.0..=1.0).contains(&real_ratio) {
            return Err(CoreError::Config(format!(
                "real ratio must be in [0,1], got {real_ratio}"
            )));
        }
        let exact = real_ratio * batch as f64;
        let mut n_real = exact.floor() as usize;
        if rng.gen_range(0.0..1.0) < exact - exact.floor() {
            n_real += 1;
        }
        let mut n_model = batch - n_real;

        if self.real.is_empty() && n_real > 0 {
            self.warn_once("real partition empty; sampling model-only batches");
            n_model += n_real;
            n_real = 0;
        }
        if self.model.is_empty() && n_model > 0 {
            self.warn_once("model partition empty; sampling real-only batches");
            n_real += n_model;
            n_model = 0;
        }

        let mut out = Vec::with_capacity(batch);
        for _ in 0..n_real {
            let i = rng.gen_range(0..self.real.len());
            out.push(self.real[i].clone());
        }
        for _ in 0..n_model {
            let i = rng.gen_range(0..self.model.len());
            out.push(self.model[i].clone());
        }
        Ok(out)
    }

    fn warn_once(&mut self, msg: &str) {
        if !self.warned_empty_partition {
            eprintln!("replay buffer: {msg}");
            self.warned_empty_partition = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real_t(x: f64) -> Transition {
        Transition::real(vec![x], vec![0.0], 0.0, vec![x], false)
    }

    fn model_t(x: f64) -> Transition {
        Transition {
            source: Source::Model,
            ..real_t(x)
        }
    }

    #[test]
    fn capacity_is_fifo_per_partition() {
        let mut buf = ReplayBuffer::new(3, 2);
        for i in 0..5 {
            buf.push(real_t(i as f64));
        }
        assert_eq!(buf.real_len(), 3);
        assert_eq!(buf.real.front().unwrap().state[0], 2.0);
        for i in 0..4 {
            buf.push(model_t(i as f64));
        }
        assert_eq!(buf.model_len(), 2);
    }

    #[test]
    fn ratio_one_draws_only_real() {
        let mut buf = ReplayBuffer::new(100, 100);
        for i in 0..20 {
            buf.push(real_t(i as f64));
            buf.push(model_t(-1.0));
        }
        let mut rng = crate::rng::stream(0, "buf");
        for _ in 0..20 {
            let batch = buf.sample(16, 1.0, &mut rng).unwrap();
            assert!(batch.iter().all(|t| t.source == Source::Real));
        }
    }

    #[test]
    fn mix_is_exact_in_expectation() {
        let mut buf = ReplayBuffer::new(100, 100);
        for i in 0..50 {
            buf.push(real_t(i as f64));
            buf.push(model_t(i as f64));
        }
        let mut rng = crate::rng::stream(1, "buf");
        let trials = 2000;
        let batch = 10;
        let ratio = 0.35;
        let mut total_real = 0usize;
        for _ in 0..trials {
            let b = buf.sample(batch, ratio, &mut rng).unwrap();
            total_real += b.iter().filter(|t| t.source == Source::Real).count();
        }
        let mean_real = total_real as f64 / trials as f64;
        assert!(
            (mean_real - ratio * batch as f64).abs() < 0.15,
            "mean real per batch {mean_real}"
        );
    }

    #[test]
    fn empty_model_partition_renormalizes_to_real() {
        let mut buf = ReplayBuffer::new(10, 10);
        buf.push(real_t(1.0));
        let mut rng = crate::rng::stream(2, "buf");
        let batch = buf.sample(8, 0.05, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        assert!(batch.iter().all(|t| t.source == Source::Real));
    }

    #[test]
    fn clear_model_leaves_real_intact() {
        let mut buf = ReplayBuffer::new(10, 10);
        buf.push(real_t(1.0));
        buf.push(model_t(2.0));
        buf.clear_model();
        assert_eq!(buf.real_len(), 1);
        assert_eq!(buf.model_len(), 0);
    }
}

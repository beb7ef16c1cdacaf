//! Adam optimizer and the step-wise learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::{shape_err, Tensor, TensorError};

/// Piecewise-constant learning rate keyed by 0-based epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    /// `(first_epoch, rate)` pairs in increasing epoch order.
    pub steps: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn standard() -> Self {
        Self {
            steps: vec![(0, 1e-2), (5, 1e-3), (10, 1e-4), (20, 1e-5), (30, 1e-6)],
        }
    }

    pub fn constant(rate: f64) -> Self {
        Self { steps: vec![(0, rate)] }
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.steps
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .map_or(self.steps.first().map_or(0.0, |s| s.1), |s| s.1)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::standard()
    }
}

/// Bias-corrected Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update. A non-finite gradient aborts the whole step,
    /// leaving parameters and moments untouched.
    pub fn update(
        &mut self,
        params: &mut [Tensor<f32>],
        grads: &[Tensor<f32>],
        names: &[String],
        lr: f64,
    ) -> Result<(), TensorError> {
        if params.len() != self.m.len() || grads.len() != params.len() || names.len() != params.len() {
            return Err(shape_err("optimizer state does not match parameter list"));
        }
        for ((p, g), name) in params.iter().zip(grads).zip(names) {
            if g.len() != p.len() {
                return Err(shape_err(format!("gradient size mismatch for {name}")));
            }
            if !g.all_finite() {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj as f64;
                let mj = self.beta1 * m[j] as f64 + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * v[j] as f64 + (1.0 - self.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let mhat = mj / c1;
                let vhat = vj / c2;
                *w = (*w as f64 - lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        let s = LrSchedule::standard();
        let expect = [(0, 1e-2), (4, 1e-2), (5, 1e-3), (9, 1e-3), (10, 1e-4), (19, 1e-4), (20, 1e-5), (29, 1e-5), (30, 1e-6), (500, 1e-6)];
        for (e, r) in expect {
            assert_eq!(s.rate_at(e), r, "epoch {e}");
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * sign(g) (up to eps).
        let mut p = vec![Tensor::new(&[2], vec![1.0f32, -1.0]).unwrap()];
        let g = vec![Tensor::new(&[2], vec![0.5f32, -3.0]).unwrap()];
        let mut adam = AdamState::new(&[2]);
        adam.update(&mut p, &g, &["w".into()], 0.1).unwrap();
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![Tensor::zeros(&[1]), Tensor::zeros(&[1])];
        let g = vec![Tensor::zeros(&[1]), Tensor::new(&[1], vec![f32::NAN]).unwrap()];
        let mut adam = AdamState::new(&[1, 1]);
        let err = adam.update(&mut p, &g, &["a".into(), "dec.conv".into()], 0.1).unwrap_err();
        assert!(err.to_string().contains("dec.conv"));
        assert_eq!(adam.step, 0);
    }
}

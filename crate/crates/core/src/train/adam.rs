use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Real, Tensor};
use crate::nn::ModelParams;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub hyper: AdamConfig,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `shapes`.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, hyper: AdamConfig) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            hyper,
        }
    }

    pub fn for_model(params: &ModelParams<T>, hyper: AdamConfig) -> Self {
        Self::new(params.tensors().into_iter().map(|t| t.shape()), hyper)
    }

    /// One update of every tensor in `params` from the matching gradient.
    /// The step counter advances before bias correction, so the first call
    /// uses `t = 1`.
    pub fn update(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<(), AutodiffError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                left: vec![params.len(), self.m.len()],
                right: vec![grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        let c = |x: f64| T::from_f64_lossy(x);
        let (b1, b2, one_b1, one_b2) = (c(h.beta1), c(h.beta2), c(1.0 - h.beta1), c(1.0 - h.beta2));
        let (lr, eps, bc1, bc2) = (c(h.lr), c(h.eps), c(bc1), c(bc2));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((th, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *th -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// [`AdamState::update`] over every tensor of a model.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<(), AutodiffError> {
    state.update(params.tensors_mut(), grads)
}

use serde::{Deserialize, Serialize};

use super::Result;
use crate::model::ModelWeights;
use crate::tensor::Tensor;

/// Moment estimates and step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(weights: &ModelWeights) -> Self {
        let zeros: Vec<Tensor> = weights.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: Option<AdamState>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            state: None,
        }
    }

    pub fn restore(&mut self, state: AdamState) {
        self.state = Some(state);
    }

    pub fn state(&self) -> &AdamState {
        self.state.as_ref().expect("optimizer state is set before stepping")
    }

    pub fn step(&mut self, weights: &mut ModelWeights, grad: &[Tensor]) -> Result<()> {
        let state = self.state.get_or_insert_with(|| AdamState::new(weights));
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((w, g), m), v) in weights
            .tensors_mut()
            .iter_mut()
            .zip(grad)
            .zip(state.first.iter_mut())
            .zip(state.second.iter_mut())
        {
            let (w, g, m, v) = (w.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for k in 0..w.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let update = self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                w[k] -= update;
            }
        }
        Ok(())
    }
}

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected adaptive-moment optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    #[serde(skip)]
    blocks: Vec<(String, Range<usize>)>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            blocks: Vec::new(),
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    /// Names used when reporting a non-finite gradient.
    pub fn with_blocks(mut self, blocks: Vec<(String, Range<usize>)>) -> Self {
        self.blocks = blocks;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn block_name(&self, index: usize) -> String {
        self.blocks
            .iter()
            .find(|(_, r)| r.contains(&index))
            .map_or_else(|| format!("param[{index}]"), |(n, _)| n.clone())
    }

    /// In-place update of `theta` along `grad` (descent).
    pub fn apply(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Dimension {
                axis: "adam parameters",
                expected: self.m.len(),
                actual: if theta.len() != self.m.len() { theta.len() } else { grad.len() },
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                block: self.block_name(i),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::apply`].
pub fn adam_step(theta: &Tensor, grad: &Tensor, state: &mut AdamState) -> Result<Tensor> {
    let mut out = theta.clone();
    state.apply(out.data_mut(), grad.data())?;
    Ok(out)
}

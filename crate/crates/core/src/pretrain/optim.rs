use serde::{Deserialize, Serialize};

use super::{PretrainError, Result};
use crate::network::EncoderParams;

/// Piecewise-constant learning rate: `base * decay^(milestones passed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    /// Zero-based epochs at which the rate is multiplied by `decay`.
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * self.decay.powi(passed as i32)
    }
}

fn check_shapes(a: &EncoderParams, b: &EncoderParams) -> Result<()> {
    let ta = a.tensors();
    let tb = b.tensors();
    if ta.len() != tb.len() {
        return Err(PretrainError::Shape(format!("{} vs {} parameter tensors", ta.len(), tb.len())));
    }
    for ((na, va), (nb, vb)) in ta.iter().zip(tb.iter()) {
        if na != nb || va.shape() != vb.shape() {
            return Err(PretrainError::Shape(format!("{na} {:?} vs {nb} {:?}", va.shape(), vb.shape())));
        }
    }
    Ok(())
}

/// `key <- m * key + (1 - m) * query` for every parameter tensor.
pub fn momentum_update(key: &mut EncoderParams, query: &EncoderParams, m: f64) -> Result<()> {
    if !(0.0..1.0).contains(&m) {
        return Err(PretrainError::InvalidConfig(format!("EMA momentum {m} outside [0, 1)")));
    }
    check_shapes(key, query)?;
    for ((_, mut k), (_, q)) in key.tensors_mut().into_iter().zip(query.tensors()) {
        k.zip_mut_with(&q, |kv, &qv| *kv = m * *kv + (1.0 - m) * qv);
    }
    Ok(())
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v <- mu v + (g + wd p)`, `p <- p - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<EncoderParams>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64) -> Result<()> {
        check_shapes(params, grads)?;
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        let (mu, wd) = (self.momentum, self.weight_decay);
        let mut vs = velocity.tensors_mut();
        for (((_, mut p), (_, g)), (_, v)) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(vs.iter_mut()) {
            ndarray::Zip::from(&mut p).and(&g).and(v).for_each(|p, &g, v| {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            });
        }
        Ok(())
    }
}

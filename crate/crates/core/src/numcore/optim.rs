use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Momentum SGD over a flat parameter buffer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(param_count: usize, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return Err(Error::config("lr", "learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("momentum", "momentum must lie in [0, 1)"));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay: 0.0,
            velocity: vec![0.0; param_count],
        })
    }

    /// L2 penalty folded into the gradient before the momentum update.
    pub fn with_weight_decay(mut self, weight_decay: f64) -> Result<Self> {
        if !(weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        self.weight_decay = weight_decay;
        Ok(self)
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// `v ← μ·v + g;  p ← p − lr·v`. With `μ = 0` this is exactly `p − lr·g`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.velocity.len() {
            return Err(Error::shape("Sgd::step params", self.velocity.len(), params.len()));
        }
        if grads.len() != params.len() {
            return Err(Error::shape("Sgd::step grads", params.len(), grads.len()));
        }
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let g = if wd > 0.0 { g + wd * *p } else { g };
            if mu == 0.0 {
                *p -= lr * g;
            } else {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        }
        Ok(())
    }
}

/// `teacher ← λ·teacher + (1 − λ)·student`, elementwise.
pub fn ema_update(teacher: &mut [f64], student: &[f64], lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config("ema", "lambda must lie in [0, 1]"));
    }
    if teacher.len() != student.len() {
        return Err(Error::shape("ema_update", teacher.len(), student.len()));
    }
    if lambda == 1.0 {
        return Ok(());
    }
    if lambda == 0.0 {
        teacher.copy_from_slice(student);
        return Ok(());
    }
    for (t, &s) in teacher.iter_mut().zip(student) {
        // Keeps t exactly fixed when t == s.
        *t += (1.0 - lambda) * (s - *t);
    }
    Ok(())
}

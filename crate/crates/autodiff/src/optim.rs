//! Trainable parameters, Adam and the learning-rate schedule.

use crate::tensor::Tensor;
use crate::AutodiffError;

/// A named trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let shape = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Tensor::zeros(shape),
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Replaces the value; optimizer state is kept.
    pub fn set_value(&mut self, value: Tensor) -> Result<(), AutodiffError> {
        if value.shape() != self.value.shape() {
            return Err(AutodiffError::Shape {
                op: "set_value",
                detail: format!("{:?} vs {:?} for {}", value.shape(), self.value.shape(), self.name),
            });
        }
        self.value = value;
        Ok(())
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    pub fn accumulate_grad(&mut self, g: &Tensor) -> Result<(), AutodiffError> {
        if g.shape() != self.grad.shape() {
            return Err(AutodiffError::Shape {
                op: "accumulate_grad",
                detail: format!("{:?} vs {:?} for {}", g.shape(), self.grad.shape(), self.name),
            });
        }
        self.grad
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn moments(&self) -> (&Tensor, &Tensor) {
        (&self.m, &self.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. The step counter is shared by every parameter passed to `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Parameter], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for p in params {
            let g = p.grad.data();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            let x = p.value.data_mut();
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                x[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// `lr0` for steps `0..constant`, then a linear ramp that reaches exactly 0 at
/// the final decay step `constant + decay - 1` and stays there.
pub fn lr_schedule(step: usize, constant: usize, decay: usize, lr0: f64) -> f64 {
    if step < constant {
        return lr0;
    }
    if decay <= 1 {
        return 0.0;
    }
    let last = constant + decay - 1;
    if step >= last {
        return 0.0;
    }
    lr0 * (last - step) as f64 / (last - constant) as f64
}

use serde::{Deserialize, Serialize};

use crate::CmcnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub n_resblocks: usize,
    /// Output is `clamp(input + tanh(h) / 2, 0, 1)` when set, `(tanh(h) + 1) / 2` otherwise.
    pub global_skip: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            n_resblocks: 9,
            global_skip: true,
        }
    }
}

impl GeneratorConfig {
    /// Desk-scale setting: 16 base channels, 2 residual blocks.
    pub fn toy() -> Self {
        Self {
            base_channels: 16,
            n_resblocks: 2,
            global_skip: true,
        }
    }

    pub fn validate(&self) -> Result<(), CmcnError> {
        if self.base_channels < 1 {
            return Err(CmcnError::Config("generator base_channels must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Width of the first conv; the stack is `F, 2F, 4F, 8F`.
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 64 }
    }
}

impl DiscriminatorConfig {
    pub fn toy() -> Self {
        Self { base_channels: 16 }
    }

    pub fn validate(&self) -> Result<(), CmcnError> {
        if self.base_channels < 1 {
            return Err(CmcnError::Config("discriminator base_channels must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_gan: f64,
    pub lambda_edge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_gan: 100.0,
            lambda_edge: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), CmcnError> {
        if !(self.lambda_gan >= 0.0 && self.lambda_edge >= 0.0) || !self.lambda_gan.is_finite() || !self.lambda_edge.is_finite() {
            return Err(CmcnError::Config(format!(
                "loss weights must be finite and >= 0, got gan {} edge {}",
                self.lambda_gan, self.lambda_edge
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_constant: usize,
    pub epochs_decay: usize,
    pub lr0: f64,
    pub batch: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_constant: 200,
            epochs_decay: 200,
            lr0: 1e-4,
            batch: 10,
            seed: 0,
            weights: LossWeights::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CmcnError> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.weights.validate()?;
        if self.batch < 1 {
            return Err(CmcnError::Config("batch must be >= 1".into()));
        }
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return Err(CmcnError::Config(format!("lr0 must be finite and >= 0, got {}", self.lr0)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(CmcnError::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_constant + self.epochs_decay
    }
}

use serde::{Deserialize, Serialize};

use crate::codebook::CodebookDims;
use crate::error::{Error, Result};
use crate::trajectory::TASK_MODE_COUNT;

/// Frame used to normalize positions before encoding: `(p - origin) / radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub origin: [f64; 3],
    pub radius: f64,
}

impl Normalization {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (p[a] - self.origin[a]) / self.radius)
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Self { origin: [0.0, 0.0, 20.0], radius: 170.0 }
    }
}

pub const MODEL_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub version: u32,
    pub d_model: usize,
    pub heads: usize,
    pub backbone_layers: usize,
    pub t_prev: usize,
    pub t_pred: usize,
    pub k: usize,
    pub gamma: f64,
    pub lambda_loss: f64,
    pub dims: CodebookDims,
    /// Hidden width of the shared per-point perceptron.
    pub point_feature_dim: usize,
    /// Hidden width of every feed-forward block.
    pub ffn_hidden: usize,
    pub task_mode_count: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub norm: Normalization,
    /// Cut the beam loss gradient through the predicted trajectory.
    pub detach_trajectory: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            version: MODEL_CONFIG_VERSION,
            d_model: 64,
            heads: 4,
            backbone_layers: 2,
            t_prev: 10,
            t_pred: 10,
            k: 3,
            gamma: 0.5,
            lambda_loss: 10.0,
            dims: CodebookDims { n: 20, s: 10 },
            point_feature_dim: 64,
            ffn_hidden: 128,
            task_mode_count: TASK_MODE_COUNT,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            norm: Normalization::default(),
            detach_trajectory: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("t_prev", self.t_prev),
            ("t_pred", self.t_pred),
            ("k", self.k),
            ("point_feature_dim", self.point_feature_dim),
            ("ffn_hidden", self.ffn_hidden),
            ("task_mode_count", self.task_mode_count),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads)));
        }
        if !(self.lambda_loss >= 0.0) {
            return Err(Error::Config(format!("lambda_loss must be non-negative, got {}", self.lambda_loss)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.norm.radius > 0.0) {
            return Err(Error::Config(format!("normalization radius must be positive, got {}", self.norm.radius)));
        }
        if self.t_prev < 2 {
            return Err(Error::Config("t_prev must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        if c.version != MODEL_CONFIG_VERSION {
            return Err(Error::BadVersion { found: c.version, supported: MODEL_CONFIG_VERSION });
        }
        c.validate()?;
        Ok(c)
    }
}

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};

/// Hyperparameters and ablation switches. Defaults are the reference
/// configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Weight of the RL loss in the joint objective.
    pub lambda: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    /// Embedding and hidden size.
    pub dim: usize,
    /// Epochs of RL-only pretraining.
    pub rl_pretrain_epochs: usize,
    /// Reward baseline `b`.
    pub baseline: f64,
    pub batch_size: usize,
    /// Maximum joint-training epochs.
    pub epochs: usize,
    /// Early-stopping patience on dev micro F1, in epochs.
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub no_copy: bool,
    pub no_rl: bool,
    pub augment: bool,
    /// Include delexicalized copies in RL pretraining.
    pub augment_in_pretraining: bool,
    /// Single-sample REINFORCE estimate instead of the exact expectation.
    pub rl_sampling: bool,
    pub max_decode_len: usize,
    pub min_token_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lambda: 0.1,
            dropout: 0.75,
            weight_decay: 5e-6,
            dim: 200,
            rl_pretrain_epochs: 30,
            baseline: 1.5,
            batch_size: 32,
            epochs: 50,
            patience: 5,
            seed: 1,
            clip_norm: 5.0,
            no_copy: false,
            no_rl: false,
            augment: true,
            augment_in_pretraining: true,
            rl_sampling: false,
            max_decode_len: crate::model::DEFAULT_MAX_DECODE_LEN,
            min_token_count: 1,
        }
    }
}

impl TrainConfig {
    /// Preset for the templated synthetic corpus.
    pub fn synthetic() -> Self {
        Self {
            dim: 32,
            dropout: 0.0,
            lr: 1e-2,
            weight_decay: 0.1,
            batch_size: 8,
            rl_pretrain_epochs: 30,
            epochs: 30,
            patience: 8,
            min_token_count: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Contract(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size == 0 || self.dim == 0 {
            return Err(Error::Contract("batch size and dimension must be positive".into()));
        }
        Ok(())
    }

    /// Lambda actually applied; the no-RL ablation forces zero.
    pub fn effective_lambda(&self) -> f64 {
        if self.no_rl {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn effective_pretrain_epochs(&self) -> usize {
        if self.no_rl {
            0
        } else {
            self.rl_pretrain_epochs
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

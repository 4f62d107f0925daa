use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamConfig, Standardization};
use crate::error::{Error, Result};

use super::network::Variant;

/// How balls are formed from a batch's latent features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    /// k-means with `k = max(⌊B/p⌋, 1)`.
    #[default]
    Kmeans,
    /// Recursive split and merge with capacity threshold `eta`. Views may end
    /// up with different ball counts, which the mask assembly rejects.
    Classic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Granularity: average ball occupancy.
    pub p: usize,
    /// Cross-view association threshold.
    pub tau: f64,
    /// Weight of the reconstruction loss.
    pub lambda: f64,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub variant: Variant,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub standardization: Standardization,
    /// Off trains with the reconstruction loss only.
    pub contrastive: bool,
    pub generator: Generator,
    /// Capacity threshold for the classic generator.
    pub eta: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p: 2,
            tau: 0.1,
            lambda: 1.0,
            latent_dim: 64,
            hidden_dims: vec![2000, 500, 500],
            variant: Variant::Mlp,
            temperature: 1.0,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            standardization: Standardization::ZScore,
            contrastive: true,
            generator: Generator::Kmeans,
            eta: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.p == 0 {
            return fail("p must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda must be a finite non-negative number, got {}", self.lambda));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.latent_dim == 0 || self.hidden_dims.contains(&0) {
            return fail("layer widths must be positive".into());
        }
        if self.batch_size < 2 {
            return fail("batch size must be at least 2".into());
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("learning rate and weight decay must be non-negative".into());
        }
        if self.eta == 0 {
            return fail("eta must be at least 1".into());
        }
        if !self.contrastive && self.lambda == 0.0 {
            return fail("nothing to train: contrastive loss disabled and lambda = 0".into());
        }
        Ok(())
    }

    /// Decoders are built unless the network is linear and unused.
    pub fn needs_decoder(&self) -> bool {
        !(self.variant == Variant::Linear && self.lambda == 0.0)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Smallest batch kept for training; smaller trailing batches are dropped.
    pub fn min_batch(&self) -> usize {
        (2 * self.p).max(2)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

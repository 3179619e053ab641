use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssgan_tensor::AdamConfig;

use crate::data::ChannelSelection;
use crate::error::{Error, Result};
use crate::models::{DiscriminatorSpec, GeneratorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Generator plus (n+1)-class discriminator.
    Ssgan,
    /// Discriminator trained on labeled pixels only; no generator.
    SupervisedBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub selection: ChannelSelection,
    pub labeled_fraction: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda_u: f64,
    /// Labeled images also enter the unsupervised real term.
    pub labeled_in_unsup: bool,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            selection: ChannelSelection::RedNir,
            labeled_fraction: 0.3,
            epochs: 5,
            steps_per_epoch: 100,
            batch_size: 32,
            tile_h: 32,
            tile_w: 32,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            lambda_u: 1.0,
            labeled_in_unsup: true,
            seed: 0,
            checkpoint_every: 0,
            mode: TrainMode::Ssgan,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return bad(format!("labeled_fraction {} outside (0, 1]", self.labeled_fraction));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0".into());
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return bad(format!("lambda_u must be >= 0, got {}", self.lambda_u));
        }
        if self.tile_h == 0 || self.tile_w == 0 || !self.tile_h.is_multiple_of(16) || !self.tile_w.is_multiple_of(16) {
            return bad(format!("tile {}x{} must be a positive multiple of 16", self.tile_h, self.tile_w));
        }
        self.generator_spec().validate()?;
        self.discriminator_spec().validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec::new(self.selection.channels(), self.tile_h, self.tile_w)
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec::new(self.selection.channels())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.beta1, c.batch_size), (0.0002, 0.5, 32));
        assert_eq!((c.beta2, c.eps, c.lambda_u), (0.999, 1e-8, 1.0));
        assert_eq!(c.total_steps(), 500);
        c.validate().unwrap();
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn invalid_configs() {
        for c in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { labeled_fraction: 0.0, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { tile_h: 40, ..Default::default() },
            TrainConfig { lambda_u: -1.0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 0.1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"mode": "supervised_baseline", "selection": "NIR"}"#).unwrap();
        assert_eq!(c.mode, TrainMode::SupervisedBaseline);
        assert_eq!(c.selection, ChannelSelection::Nir);
    }
}

//! Two-branch heatmap CNN trained with a triplet loss.
//!
//! Each heatmap pair is embedded by a location branch and a direction
//! branch (four conv blocks plus two fully connected layers each); the two
//! 10-d outputs are concatenated and scaled to unit length. Training mines
//! hard negatives from a per-identity candidate set and stops on a
//! validation-accuracy plateau, see [`trainer`].

pub mod adam;
pub mod branch;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod real;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use model::{triplet_loss, Inputs, Model, Triplet};
pub use real::Real;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("no identity has two or more training pairs")]
    NoPositives,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Triplet margin.
    pub alpha: f64,
    /// Output size of each branch; embeddings have twice this.
    pub embed_dim: usize,
    pub dropout: f64,
    /// Conv widths of the four blocks.
    pub channels: [usize; 4],
    pub fc_hidden: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            embed_dim: 10,
            dropout: 0.25,
            channels: [4, 16, 32, 64],
            fc_hidden: 128,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl NetConfig {
    /// Length of the flattened conv output feeding FC1.
    pub fn flat_len(&self) -> usize {
        let mut s = branch::INPUT_SHAPE;
        for (i, spec) in branch::conv_specs(self.channels).iter().enumerate() {
            s = spec.out_shape(s);
            if i % 2 == 1 && i < 7 {
                s = layers::Shape::new(s.c, s.h / 2, s.w / 2);
            }
        }
        s.len()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.embed_dim == 0 || self.fc_hidden == 0 || self.channels.contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return bad("batch norm momentum in (0, 1] and eps > 0 required");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_len_matches_table_geometry() {
        assert_eq!(NetConfig::default().flat_len(), 1920);
    }

    #[test]
    fn validate_rejects_out_of_range() {
        assert!(NetConfig::default().validate().is_ok());
        assert!(NetConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
        assert!(NetConfig { alpha: -0.1, ..Default::default() }.validate().is_err());
        assert!(NetConfig { channels: [4, 0, 32, 64], ..Default::default() }.validate().is_err());
    }
}

//! Tracking-data side of the playing-style toolkit.
//!
//! The crate turns raw 10 Hz player tracking into labeled heatmap pairs and
//! scores learned embeddings on the player-identification task:
//!
//! - [`ingest`]: projection to pitch coordinates, attack-direction
//!   normalization, velocity differentiation and phase segmentation.
//! - [`roles`]: frame-wise role assignment, player-wise role clustering and
//!   player-role entity labels.
//! - [`heatmap`]: 35×50 location/direction grids, dataset split and
//!   3-combination augmentation.
//! - [`identify`]: Gaussian galleries, top-m log-likelihood similarity and
//!   top-k / MRR reports.
//! - [`synth`]: a deterministic synthetic league with ground truth.

pub mod heatmap;
pub mod identify;
pub mod ingest;
pub mod roles;
pub mod seed;
pub mod synth;

/// Pitch dimensions in meters (x along the length, y along the width).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PitchDims {
    pub length: f64,
    pub width: f64,
}

impl Default for PitchDims {
    fn default() -> Self {
        Self {
            length: 105.0,
            width: 68.0,
        }
    }
}

impl PitchDims {
    pub fn new(length: f64, width: f64) -> Self {
        Self { length, width }
    }

    pub fn is_valid(&self) -> bool {
        self.length.is_finite() && self.width.is_finite() && self.length > self.width && self.width > 0.0
    }

    /// True when the point lies within the pitch extended by `margin` on every side.
    pub fn contains(&self, p: [f64; 2], margin: f64) -> bool {
        p[0] >= -margin && p[0] <= self.length + margin && p[1] >= -margin && p[1] <= self.width + margin
    }
}

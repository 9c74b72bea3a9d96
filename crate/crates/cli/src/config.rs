//! The single TOML configuration of a pipeline run.

use std::path::{Path, PathBuf};

use anyhow::Result;
use playstyle_core::heatmap::{AugmentConfig, HeatmapConfig, SplitConfig};
use playstyle_core::identify::{Condition, IdentifyConfig};
use playstyle_core::ingest::IngestConfig;
use playstyle_core::roles::{ClusterConfig, RoleFitConfig};
use playstyle_core::synth::LeagueConfig;
use playstyle_net::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Root of the stage directory layout.
    pub work: PathBuf,
    /// JSON pitch calibration, needed only for geo-coordinate tracking.
    pub calibration: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            work: PathBuf::from("work"),
            calibration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Root seed; every stage derives named substreams from it.
    pub seed: u64,
    pub paths: Paths,
    pub league: LeagueConfig,
    pub ingest: IngestConfig,
    pub roles: RoleFitConfig,
    pub cluster: ClusterConfig,
    pub heatmap: HeatmapConfig,
    pub split: SplitConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub identify: IdentifyConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => anyhow::Error::new(Failure::MissingInput(path.to_path_buf())),
            _ => anyhow::Error::new(e),
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Failure::malformed(path, e))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::Config(m));
        self.league.validate().map_err(|e| Failure::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Failure::Config(e.to_string()))?;
        for dims in [self.ingest.dims, self.heatmap.dims] {
            if !dims.is_valid() {
                return bad(format!("invalid pitch dimensions {dims:?}"));
            }
        }
        if !(self.ingest.min_phase > 0.0 && self.ingest.margin >= 0.0) {
            return bad("ingest min_phase must be positive and margin non-negative".into());
        }
        if !(self.heatmap.speed_threshold >= 0.0 && self.heatmap.max_vx > 0.0 && self.heatmap.max_vy > 0.0) {
            return bad("heatmap threshold and direction bounds must be positive".into());
        }
        if self.roles.min_players < 2 || !(0.0..=1.0).contains(&self.roles.min_coverage) || !(self.roles.dt > 0.0) {
            return bad("roles: need min_players ≥ 2, min_coverage in [0, 1] and dt > 0".into());
        }
        let c = &self.cluster;
        if c.k_min < 2 || c.k_max < c.k_min || c.restarts == 0 || !(-1.0..=1.0).contains(&c.silhouette_threshold) {
            return bad("cluster: need 2 ≤ k_min ≤ k_max, restarts ≥ 1 and a silhouette threshold in [-1, 1]".into());
        }
        let s = &self.split;
        if s.test_take > s.test_min || s.val_take > s.val_min {
            return bad("split: take counts cannot exceed their minimum phase counts".into());
        }
        if self.augment.combination == 0 || self.augment.train_factor == 0 {
            return bad("augment: combination and train_factor must be positive".into());
        }
        if !(self.identify.ridge > 0.0) {
            return bad("identify: ridge must be positive".into());
        }
        for name in &self.identify.conditions {
            name.parse::<Condition>().map_err(|e| Failure::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let partial: PipelineConfig = toml::from_str("seed = 9\n[train]\nlearning_rate = 0.01\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.train.batch_size, 1000);
    }

    #[test]
    fn out_of_range_is_a_config_failure() {
        let mut cfg = PipelineConfig::default();
        cfg.identify.ridge = 0.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 4);
        let mut cfg = PipelineConfig::default();
        cfg.identify.conditions.push("p10-XX".into());
        assert!(cfg.validate().is_err());
    }
}

//! Location and direction heatmaps, the phase-level dataset split and
//! 3-combination augmentation.

mod grid;
mod store;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{direction_heatmap, location_heatmap, Bounds, HeatmapGrid, CELLS, COLS, ROWS};
pub use store::{read_manifest, read_store, record_id, write_manifest, write_store};

use crate::ingest::PlayerTrack;
use crate::{seed, PitchDims};

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("grids have different axis bounds")]
    BoundsMismatch,
    #[error("grid has {0} cells, expected {CELLS}")]
    CellCount(usize),
    #[error("malformed heatmap store: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapConfig {
    pub dims: PitchDims,
    /// Minimum speed for a velocity to enter the direction grid, m/s.
    pub speed_threshold: f64,
    pub max_vx: f64,
    pub max_vy: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            dims: PitchDims::default(),
            speed_threshold: 4.0,
            max_vx: 12.0,
            max_vy: 8.0,
        }
    }
}

impl HeatmapConfig {
    pub fn location_bounds(&self) -> Bounds {
        Bounds::pitch(self.dims)
    }

    pub fn direction_bounds(&self) -> Bounds {
        Bounds::direction(self.max_vx, self.max_vy)
    }
}

/// Location and direction grids of one entity over one or more phases.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapPair {
    pub entity_id: String,
    /// Source phase ids, sorted.
    pub sources: Vec<String>,
    pub location: HeatmapGrid,
    pub direction: HeatmapGrid,
}

impl HeatmapPair {
    pub fn record_id(&self) -> String {
        record_id(&self.entity_id, &self.sources)
    }

    /// Accumulates several pairs of one entity.
    pub fn sum(parts: &[&HeatmapPair]) -> Result<HeatmapPair, HeatmapError> {
        let first = parts.first().expect("at least one part");
        let mut out = (*first).clone();
        for p in &parts[1..] {
            out.location.add_assign(&p.location)?;
            out.direction.add_assign(&p.direction)?;
            out.sources.extend(p.sources.iter().cloned());
        }
        out.sources.sort();
        Ok(out)
    }
}

/// Heatmap pair of one player's samples in one phase. Samples flagged out of
/// bounds at ingest are skipped; the count is the number of in-bounds samples
/// that still fell outside the pitch.
pub fn phase_pair(track: &PlayerTrack, entity_id: &str, phase_id: &str, cfg: &HeatmapConfig) -> (HeatmapPair, usize) {
    let keep = || (0..track.len()).filter(|&i| track.in_bounds[i]);
    let (location, dropped) = location_heatmap(keep().map(|i| track.pos[i]), cfg.dims);
    let direction = direction_heatmap(keep().map(|i| track.vel[i]), cfg.speed_threshold, cfg.direction_bounds());
    (
        HeatmapPair {
            entity_id: entity_id.to_string(),
            sources: vec![phase_id.to_string()],
            location,
            direction,
        },
        dropped,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Entities with at least this many phases give `test_take` to test.
    pub test_min: usize,
    pub test_take: usize,
    /// Remaining entities with at least this many phases give `val_take` to validation.
    pub val_min: usize,
    pub val_take: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_min: 20,
            test_take: 10,
            val_min: 15,
            val_take: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<HeatmapPair>,
    pub validation: Vec<HeatmapPair>,
    pub test: Vec<HeatmapPair>,
    /// Phases per entity before the split.
    pub phase_counts: BTreeMap<String, usize>,
}

impl DatasetSplit {
    pub fn test_entities(&self) -> BTreeSet<&str> {
        self.test.iter().map(|p| p.entity_id.as_str()).collect()
    }
}

fn group_by_entity(pairs: Vec<HeatmapPair>) -> BTreeMap<String, Vec<HeatmapPair>> {
    let mut groups: BTreeMap<String, Vec<HeatmapPair>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.entity_id.clone()).or_default().push(p);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.sources.cmp(&b.sources));
    }
    groups
}

/// Assigns single-phase pairs to test, validation and training sets at the
/// phase level. Sampling is seeded per entity.
pub fn split_dataset(pairs: Vec<HeatmapPair>, cfg: &SplitConfig, root_seed: u64) -> DatasetSplit {
    let mut out = DatasetSplit::default();
    for (entity, mut phases) in group_by_entity(pairs) {
        out.phase_counts.insert(entity.clone(), phases.len());
        let mut rng = seed::substream(root_seed, &["split", &entity]);
        if phases.len() >= cfg.test_min {
            out.test.extend(take_sample(&mut phases, cfg.test_take, &mut rng));
        }
        if phases.len() >= cfg.val_min {
            out.validation.extend(take_sample(&mut phases, cfg.val_take, &mut rng));
        }
        out.train.extend(phases);
    }
    out
}

/// Removes `k` uniformly chosen pairs, returned in their original order.
fn take_sample<R: Rng>(phases: &mut Vec<HeatmapPair>, k: usize, rng: &mut R) -> Vec<HeatmapPair> {
    let mut chosen = index::sample(rng, phases.len(), k.min(phases.len())).into_vec();
    chosen.sort_unstable();
    let mut taken = Vec::with_capacity(chosen.len());
    for &i in chosen.iter().rev() {
        taken.push(phases.remove(i));
    }
    taken.reverse();
    taken
}

/// Every r-combination of one entity's pairs, summed, in lexicographic
/// order of the index tuples. Empty when fewer than `r` pairs.
pub fn augment_exhaustive(pairs: &[HeatmapPair], r: usize) -> Vec<HeatmapPair> {
    let n = pairs.len();
    if r == 0 || n < r {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        let parts: Vec<&HeatmapPair> = idx.iter().map(|&i| &pairs[i]).collect();
        out.push(HeatmapPair::sum(&parts).expect("pairs of one config share bounds"));
        // advance to the next combination
        let Some(k) = (0..r).rev().find(|&k| idx[k] < n - r + k) else {
            break;
        };
        idx[k] += 1;
        for j in k + 1..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

/// `factor·n` uniform draws of 3-combinations, duplicates removed, kept in
/// order of first draw. Empty when fewer than 3 pairs.
pub fn augment_random<R: Rng>(pairs: &[HeatmapPair], factor: usize, rng: &mut R) -> Vec<HeatmapPair> {
    let n = pairs.len();
    if n < 3 {
        return Vec::new();
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..factor * n {
        let mut triple = index::sample(rng, n, 3).into_vec();
        triple.sort_unstable();
        if seen.insert(triple.clone()) {
            let parts: Vec<&HeatmapPair> = triple.iter().map(|&i| &pairs[i]).collect();
            out.push(HeatmapPair::sum(&parts).expect("pairs of one config share bounds"));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub combination: usize,
    /// Training draws per phase.
    pub train_factor: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            combination: 3,
            train_factor: 4,
        }
    }
}

/// Augments each split separately: random draws for training, exhaustive
/// combinations for validation and test.
pub fn augment_split(split: &DatasetSplit, cfg: &AugmentConfig, root_seed: u64) -> DatasetSplit {
    let exhaustive = |pairs: &[HeatmapPair]| -> Vec<HeatmapPair> {
        let groups: Vec<Vec<HeatmapPair>> = group_by_entity(pairs.to_vec()).into_values().collect();
        groups
            .par_iter()
            .map(|g| augment_exhaustive(g, cfg.combination))
            .collect::<Vec<_>>()
            .concat()
    };
    let train_groups: Vec<(String, Vec<HeatmapPair>)> = group_by_entity(split.train.clone()).into_iter().collect();
    let train = train_groups
        .par_iter()
        .map(|(entity, g)| {
            let mut rng = seed::substream(root_seed, &["augment", entity]);
            if cfg.combination == 3 {
                augment_random(g, cfg.train_factor, &mut rng)
            } else {
                augment_exhaustive(g, cfg.combination)
            }
        })
        .collect::<Vec<_>>()
        .concat();
    DatasetSplit {
        train,
        validation: exhaustive(&split.validation),
        test: exhaustive(&split.test),
        phase_counts: split.phase_counts.clone(),
    }
}

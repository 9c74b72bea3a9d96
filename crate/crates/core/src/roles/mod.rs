//! Role assignment per phase and player-role entity labeling.

mod cluster;
mod fit;
mod hungarian;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{cluster_player, kmeans, silhouette, ClusterConfig, KMeansFit, PlayerClusters};
pub use fit::{fit_roles, modal_role, Gaussian2, RoleFit, RoleFitConfig, RoleFrame, RoleModel};
pub use hungarian::{hungarian, Assignment, HungarianSolver};

use crate::ingest::TrackedPhase;
use crate::seed;

#[derive(Debug, Error)]
pub enum RolesError {
    #[error("cost matrix is not square ({rows} rows, found a row/data of length {len})")]
    NotSquare { rows: usize, len: usize },
    #[error("non-finite cost at ({0}, {1})")]
    NonFiniteCost(usize, usize),
    #[error("phase {phase} team {team}: {found} measured players, need {required}")]
    TooFewPlayers {
        phase: String,
        team: String,
        found: usize,
        required: usize,
    },
    #[error("phase {0}: no frame has every measured player present")]
    NoCommonFrames(String),
    #[error("malformed label file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One player's data within one phase with its modal role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerPhaseEntity {
    pub player_id: String,
    pub team: String,
    pub phase_id: String,
    pub role: usize,
    /// Mean pitch location of the assigned role, m.
    pub role_mean: [f64; 2],
    /// Seconds.
    pub duration: f64,
}

/// Identity label: one player in one cluster of roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerRoleEntity {
    pub entity_id: String,
    pub player_id: String,
    pub cluster: usize,
    pub phases: Vec<String>,
}

pub fn entity_id(player_id: &str, cluster: usize) -> String {
    format!("{player_id}#{cluster}")
}

/// Result of labeling one phase: entities for every team that had enough
/// measured players, plus the teams that were excluded.
#[derive(Debug, Clone, Default)]
pub struct PhaseRoles {
    pub entities: Vec<PlayerPhaseEntity>,
    pub excluded_teams: Vec<(String, RolesExclusion)>,
    pub excluded_players: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RolesExclusion {
    TooFewPlayers(usize),
    NoCommonFrames,
}

/// Fits roles for every team of a phase and reduces them to player-phase
/// entities by the modal frame-wise role.
pub fn label_phase(phase: &TrackedPhase, cfg: &RoleFitConfig) -> Result<PhaseRoles, RolesError> {
    let mut out = PhaseRoles::default();
    for team in phase.teams() {
        let fit = match fit_roles(phase, &team, cfg) {
            Ok(f) => f,
            Err(RolesError::TooFewPlayers { found, .. }) => {
                out.excluded_teams.push((team, RolesExclusion::TooFewPlayers(found)));
                continue;
            }
            Err(RolesError::NoCommonFrames(_)) => {
                out.excluded_teams.push((team, RolesExclusion::NoCommonFrames));
                continue;
            }
            Err(e) => return Err(e),
        };
        out.excluded_players += fit.excluded_players.len();
        for (player, frames) in fit.player_ids.iter().zip(&fit.assignments) {
            let role = modal_role(frames).expect("fit has at least one frame");
            out.entities.push(PlayerPhaseEntity {
                player_id: player.clone(),
                team: team.clone(),
                phase_id: phase.phase_id.clone(),
                role,
                role_mean: fit.absolute_means[role],
                duration: phase.duration(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    /// Entity id per input player-phase entity, in input order.
    pub entity_of: Vec<String>,
    /// Sorted by entity id.
    pub entities: Vec<PlayerRoleEntity>,
}

/// Clusters each player's role means and labels every player-phase entity
/// with its (player, cluster) identity.
pub fn label_entities(entities: &[PlayerPhaseEntity], cfg: &ClusterConfig, root_seed: u64) -> Labeling {
    let mut by_player: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in entities.iter().enumerate() {
        by_player.entry(&e.player_id).or_default().push(i);
    }
    let mut entity_of = vec![String::new(); entities.len()];
    let mut groups: BTreeMap<String, PlayerRoleEntity> = BTreeMap::new();
    for (player, idx) in by_player {
        let means: Vec<[f64; 2]> = idx.iter().map(|&i| entities[i].role_mean).collect();
        let clusters = cluster_player(&means, cfg, seed::derive_seed(root_seed, &["roles", player]));
        for (&i, &c) in idx.iter().zip(&clusters.labels) {
            let id = entity_id(player, c);
            entity_of[i] = id.clone();
            groups
                .entry(id.clone())
                .or_insert_with(|| PlayerRoleEntity {
                    entity_id: id,
                    player_id: player.to_string(),
                    cluster: c,
                    phases: Vec::new(),
                })
                .phases
                .push(entities[i].phase_id.clone());
        }
    }
    let mut entities: Vec<PlayerRoleEntity> = groups.into_values().collect();
    for e in &mut entities {
        e.phases.sort();
    }
    Labeling { entity_of, entities }
}

/// One row of the label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub player_id: String,
    pub phase_id: String,
    pub role: usize,
    pub mean_x: f64,
    pub mean_y: f64,
    pub entity_id: String,
}

pub fn write_labels<W: Write>(writer: W, rows: &[LabelRow]) -> Result<(), RolesError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<LabelRow>, RolesError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows: Result<Vec<LabelRow>, _> = rdr.deserialize().collect();
    rows.map_err(|e| RolesError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ppe(player: &str, phase: usize, mean: [f64; 2]) -> PlayerPhaseEntity {
        PlayerPhaseEntity {
            player_id: player.into(),
            team: "a".into(),
            phase_id: format!("m-p{phase:02}"),
            role: 0,
            role_mean: mean,
            duration: 1800.0,
        }
    }

    fn blob(rng: &mut ChaCha8Rng, c: [f64; 2], n: usize) -> Vec<[f64; 2]> {
        let d = Normal::new(0.0, 2.0).unwrap();
        (0..n).map(|_| [c[0] + d.sample(rng), c[1] + d.sample(rng)]).collect()
    }

    #[test]
    fn single_cluster_player_is_one_entity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = blob(&mut rng, [30.0, 20.0], 12);
        let ents: Vec<_> = pts.iter().enumerate().map(|(i, &m)| ppe("p1", i, m)).collect();
        let lab = label_entities(&ents, &ClusterConfig::default(), 1);
        assert_eq!(lab.entities.len(), 1);
        assert_eq!(lab.entities[0].phases.len(), 12);
        assert!(lab.entity_of.iter().all(|e| e == "p1#0"));
    }

    #[test]
    fn two_cluster_player_is_partitioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = blob(&mut rng, [20.0, 30.0], 6);
        pts.extend(blob(&mut rng, [80.0, 30.0], 6));
        pts.extend(blob(&mut rng, [50.0, 10.0], 5));
        let ents: Vec<_> = pts
            .iter()
            .enumerate()
            .map(|(i, &m)| if i < 12 { ppe("p1", i, m) } else { ppe("p2", i, m) })
            .collect();
        let lab = label_entities(&ents, &ClusterConfig::default(), 1);
        assert_eq!(lab.entities.len(), 3);
        let total: usize = lab.entities.iter().map(|e| e.phases.len()).sum();
        assert_eq!(total, ents.len());
        // same player, same cluster ⇔ same label
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(lab.entity_of[i] == lab.entity_of[j], (i < 6) == (j < 6));
            }
        }
        let players: std::collections::BTreeSet<_> = lab.entities.iter().map(|e| &e.player_id).collect();
        assert!(lab.entities.len() >= players.len());
    }

    #[test]
    fn label_file_round_trip() {
        let rows = vec![LabelRow {
            player_id: "p1".into(),
            phase_id: "m-p00".into(),
            role: 3,
            mean_x: 12.5,
            mean_y: 40.25,
            entity_id: "p1#0".into(),
        }];
        let mut buf = Vec::new();
        write_labels(&mut buf, &rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("player_id,phase_id,role,mean_x,mean_y,entity_id"));
        assert_eq!(read_labels(&buf[..]).unwrap(), rows);
    }
}

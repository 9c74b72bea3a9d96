//! Raw tracking → attack-normalized, differentiated, phase-segmented tracks.

mod format;
mod kinematics;
mod phases;
mod projection;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{
    read_events, read_phase, read_tracking, write_events, write_phase, write_tracking, PositionMode,
};
pub use kinematics::{differentiate, rotate_second_half, DiffOptions};
pub use phases::{segment_phases, EventKind, Half, MatchEvent, MatchEvents, PhaseInterval};
pub use projection::{GeoPoint, PitchCalibration};

use crate::PitchDims;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid pitch calibration: {0}")]
    InvalidCalibration(String),
    #[error("invalid match events: {0}")]
    InvalidEvents(String),
    #[error("need at least 3 samples to differentiate, got {0}")]
    TooFewSamples(usize),
    #[error("times and positions differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("sample times are not sorted")]
    UnsortedTimes,
    #[error("geo samples present but no pitch calibration was given")]
    MissingCalibration,
    #[error("player `{0}` appears under more than one team")]
    TeamConflict(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RawPosition {
    Geo(GeoPoint),
    Pitch([f64; 2]),
}

/// One tracking row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub match_id: String,
    pub player_id: String,
    pub team: String,
    /// Seconds since match start.
    pub t: f64,
    pub position: RawPosition,
    /// Device-reported speed in m/s.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub dims: PitchDims,
    /// Samples farther than this outside the pitch are flagged out of bounds.
    pub margin: f64,
    pub diff: DiffOptions,
    /// Phases of this many seconds or less are absorbed into a neighbor.
    pub min_phase: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            dims: PitchDims::default(),
            margin: 5.0,
            diff: DiffOptions::default(),
            min_phase: 600.0,
        }
    }
}

/// One player's samples inside one phase, in the attack-normalized frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerTrack {
    pub player_id: String,
    pub team: String,
    pub t: Vec<f64>,
    pub pos: Vec<[f64; 2]>,
    pub vel: Vec<[f64; 2]>,
    pub in_bounds: Vec<bool>,
}

impl PlayerTrack {
    pub fn new(player_id: &str, team: &str) -> Self {
        Self {
            player_id: player_id.to_string(),
            team: team.to_string(),
            t: Vec::new(),
            pos: Vec::new(),
            vel: Vec::new(),
            in_bounds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn push(&mut self, t: f64, pos: [f64; 2], vel: [f64; 2], in_bounds: bool) {
        self.t.push(t);
        self.pos.push(pos);
        self.vel.push(vel);
        self.in_bounds.push(in_bounds);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedPhase {
    pub phase_id: String,
    pub match_id: String,
    pub interval: PhaseInterval,
    /// Sorted by player id.
    pub players: Vec<PlayerTrack>,
}

impl TrackedPhase {
    pub fn duration(&self) -> f64 {
        self.interval.len()
    }

    pub fn teams(&self) -> Vec<String> {
        let mut teams: Vec<String> = self.players.iter().map(|p| p.team.clone()).collect();
        teams.sort();
        teams.dedup();
        teams
    }
}

/// Counts of everything ingest excluded or flagged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestTally {
    pub samples: usize,
    pub out_of_bounds: usize,
    pub outside_halves: usize,
    pub short_tracks_dropped: usize,
    pub raw_intervals: usize,
    pub phases: usize,
}

impl IngestTally {
    pub fn absorbed(&self) -> usize {
        self.raw_intervals - self.phases
    }

    pub fn merge(&mut self, other: &IngestTally) {
        self.samples += other.samples;
        self.out_of_bounds += other.out_of_bounds;
        self.outside_halves += other.outside_halves;
        self.short_tracks_dropped += other.short_tracks_dropped;
        self.raw_intervals += other.raw_intervals;
        self.phases += other.phases;
    }
}

#[derive(Debug, Clone)]
pub struct MatchIngest {
    pub phases: Vec<TrackedPhase>,
    pub tally: IngestTally,
}

pub fn phase_id(match_id: &str, index: usize) -> String {
    format!("{match_id}-p{index:02}")
}

/// Projects a sample into pitch meters and flags it when it lies outside the
/// pitch plus `margin`.
pub fn project(
    sample: &RawSample,
    calibration: Option<&PitchCalibration>,
    dims: PitchDims,
    margin: f64,
) -> Result<([f64; 2], bool), IngestError> {
    let xy = match sample.position {
        RawPosition::Pitch(p) => p,
        RawPosition::Geo(g) => calibration.ok_or(IngestError::MissingCalibration)?.project(g),
    };
    Ok((xy, dims.contains(xy, margin)))
}

/// Runs the whole ingest for the samples of one match.
pub fn ingest_match(
    match_id: &str,
    samples: &[RawSample],
    events: &MatchEvents,
    calibration: Option<&PitchCalibration>,
    config: &IngestConfig,
) -> Result<MatchIngest, IngestError> {
    let mut tally = IngestTally {
        samples: samples.len(),
        ..IngestTally::default()
    };
    let mut by_player: BTreeMap<&str, (&str, Vec<&RawSample>)> = BTreeMap::new();
    for s in samples {
        let entry = by_player.entry(&s.player_id).or_insert((&s.team, Vec::new()));
        if entry.0 != s.team {
            return Err(IngestError::TeamConflict(s.player_id.clone()));
        }
        entry.1.push(s);
    }

    let intervals = segment_phases(events, config.min_phase);
    tally.raw_intervals = events
        .halves
        .iter()
        .map(|h| 1 + events.cuts.iter().filter(|&&c| c > h.start && c < h.end).count())
        .sum();
    tally.phases = intervals.len();
    let mut phases: Vec<TrackedPhase> = intervals
        .iter()
        .enumerate()
        .map(|(i, iv)| TrackedPhase {
            phase_id: phase_id(match_id, i),
            match_id: match_id.to_string(),
            interval: *iv,
            players: Vec::new(),
        })
        .collect();

    let dims = config.dims;
    for (player, (team, mut rows)) in by_player {
        rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut per_half: Vec<(Vec<f64>, Vec<[f64; 2]>, Vec<bool>)> =
            vec![(Vec::new(), Vec::new(), Vec::new()); events.halves.len()];
        for s in rows {
            let Some(h) = events.half_of(s.t) else {
                tally.outside_halves += 1;
                continue;
            };
            let (mut xy, _) = project(s, calibration, dims, config.margin)?;
            if !events.attacks_positive_x(h, team) {
                xy = rotate_second_half(xy, dims.length, dims.width);
            }
            let inside = dims.contains(xy, config.margin);
            if !inside {
                tally.out_of_bounds += 1;
            }
            per_half[h].0.push(s.t);
            per_half[h].1.push(xy);
            per_half[h].2.push(inside);
        }
        let mut tracks: Vec<PlayerTrack> = phases.iter().map(|_| PlayerTrack::new(player, team)).collect();
        for (h, (t, pos, inside)) in per_half.into_iter().enumerate() {
            if t.is_empty() {
                continue;
            }
            let vel = match differentiate(&t, &pos, &config.diff) {
                Ok(v) => v,
                Err(IngestError::TooFewSamples(n)) => {
                    tally.short_tracks_dropped += n;
                    continue;
                }
                Err(e) => return Err(e),
            };
            // phases of one half are contiguous and sorted; the half's closing
            // instant (if present) goes to its last phase
            let lo = phases.iter().position(|p| p.interval.half == h).unwrap_or(phases.len());
            let hi = lo + phases[lo..].iter().take_while(|p| p.interval.half == h).count();
            if lo == hi {
                continue;
            }
            let mut pi = lo;
            for i in 0..t.len() {
                while pi + 1 < hi && t[i] >= phases[pi].interval.end {
                    pi += 1;
                }
                tracks[pi].push(t[i], pos[i], vel[i], inside[i]);
            }
        }
        for (phase, track) in phases.iter_mut().zip(tracks) {
            if !track.is_empty() {
                phase.players.push(track);
            }
        }
    }
    Ok(MatchIngest { phases, tally })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pitch_sample(player: &str, team: &str, t: f64, xy: [f64; 2]) -> RawSample {
        RawSample {
            match_id: "m1".into(),
            player_id: player.into(),
            team: team.into(),
            t,
            position: RawPosition::Pitch(xy),
            speed: 0.0,
        }
    }

    #[test]
    fn second_half_is_rotated_and_speeds_preserved() {
        let mut rows = Vec::new();
        // runs toward +x in the first half, toward -x (raw frame) in the second
        for i in 0..200 {
            let t = i as f64 * 0.1;
            rows.push(pitch_sample("p", "a", t, [10.0 + 2.0 * t, 30.0]));
            rows.push(pitch_sample("p", "a", 40.0 + t, [95.0 - 2.0 * t, 38.0]));
        }
        let events = MatchEvents::plain(80.0);
        let cfg = IngestConfig {
            min_phase: 1.0,
            ..IngestConfig::default()
        };
        let out = ingest_match("m1", &rows, &events, None, &cfg).unwrap();
        assert_eq!(out.phases.len(), 2);
        let second = &out.phases[1].players[0];
        // rotated back: (105-95, 68-38) = (10, 30) at t=40
        assert!((second.pos[0][0] - 10.0).abs() < 1e-9 && (second.pos[0][1] - 30.0).abs() < 1e-9);
        for track in out.phases.iter().map(|p| &p.players[0]) {
            for v in &track.vel[2..track.len() - 2] {
                assert!((v[0] - 2.0).abs() < 1e-9 && v[1].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn out_of_bounds_samples_are_flagged_not_dropped() {
        let rows: Vec<RawSample> = (0..50)
            .map(|i| pitch_sample("p", "a", i as f64 * 0.1, [-10.0, 30.0]))
            .collect();
        let out = ingest_match("m1", &rows, &MatchEvents::plain(10.0), None, &IngestConfig {
            min_phase: 1.0,
            ..IngestConfig::default()
        })
        .unwrap();
        assert_eq!(out.tally.out_of_bounds, 50);
        let kept: usize = out.phases.iter().flat_map(|p| &p.players).map(|t| t.len()).sum();
        assert_eq!(kept, 50);
        assert!(out.phases[0].players[0].in_bounds.iter().all(|b| !b));
    }

    #[test]
    fn geo_samples_need_calibration() {
        let s = RawSample {
            match_id: "m".into(),
            player_id: "p".into(),
            team: "a".into(),
            t: 0.0,
            position: RawPosition::Geo(GeoPoint::new(37.0, 127.0)),
            speed: 0.0,
        };
        assert!(matches!(
            project(&s, None, PitchDims::default(), 5.0),
            Err(IngestError::MissingCalibration)
        ));
    }

    #[test]
    fn team_conflicts_are_rejected() {
        let rows = vec![
            pitch_sample("p", "a", 0.0, [1.0, 1.0]),
            pitch_sample("p", "b", 0.1, [1.0, 1.0]),
        ];
        assert!(ingest_match("m1", &rows, &MatchEvents::plain(10.0), None, &IngestConfig::default()).is_err());
    }
}
